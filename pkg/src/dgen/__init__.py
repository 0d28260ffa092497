"""Attributed-graph clustering with dual attention encoders and
neighbor-cluster pooling."""

__version__ = "0.1.0"
