"""Attributed-graph container, citation-file ingestion, synthetic
block-model generation, edge noise injection, and shared-nearest-neighbor
tables.

Graphs are undirected and simple: edges are stored once with i < j, the
adjacency matrix is materialized symmetric with a zero diagonal, and
self-loops are never stored (attention layers add them transiently).
All generators are pure functions of their arguments plus a seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    CannotAddError,
    ContractError,
    EmptyInputError,
    ParseError,
)


class AttributedGraph:
    """Undirected simple graph with per-node feature rows and optional labels."""

    def __init__(self, num_nodes, edges, features, labels=None):
        n = int(num_nodes)
        if n < 1:
            raise ContractError("graph needs at least one node")
        self.num_nodes = n

        e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise ContractError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise ContractError("self-loops are not stored")
            lo = np.minimum(e[:, 0], e[:, 1])
            hi = np.maximum(e[:, 0], e[:, 1])
            e = np.stack([lo, hi], axis=1)
            order = np.lexsort((e[:, 1], e[:, 0]))
            e = e[order]
            if np.any((np.diff(e[:, 0]) == 0) & (np.diff(e[:, 1]) == 0)):
                raise ContractError("duplicate edges are not allowed")
        self.edges = e

        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise ContractError(
                f"features must be 2-D with {n} rows, got shape {x.shape}")
        self.features = x

        if labels is None:
            self.labels = None
        else:
            y = np.asarray(labels, dtype=np.intp).reshape(-1)
            if y.shape[0] != n:
                raise ContractError(f"labels must have length {n}, got {y.shape[0]}")
            if y.size and y.min() < 0:
                raise ContractError("labels must be non-negative class indices")
            self.labels = y

        self._adj = None
        self._nbrs = None

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 matrix with zero diagonal. Built once."""
        if self._adj is None:
            a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.uint8)
            if self.edges.size:
                a[self.edges[:, 0], self.edges[:, 1]] = 1
                a[self.edges[:, 1], self.edges[:, 0]] = 1
            self._adj = a
        return self._adj

    def neighbor_lists(self):
        """Sorted neighbor index array per node."""
        if self._nbrs is None:
            buckets = [[] for _ in range(self.num_nodes)]
            for i, j in self.edges:
                buckets[i].append(j)
                buckets[j].append(i)
            self._nbrs = [np.array(sorted(b), dtype=np.intp) for b in buckets]
        return self._nbrs

    def degrees(self):
        d = np.zeros(self.num_nodes, dtype=np.intp)
        if self.edges.size:
            np.add.at(d, self.edges[:, 0], 1)
            np.add.at(d, self.edges[:, 1], 1)
        return d

    def __repr__(self):
        lab = "labeled" if self.labels is not None else "unlabeled"
        return (f"AttributedGraph(n={self.num_nodes}, edges={self.num_edges}, "
                f"d={self.feature_dim}, {lab})")


@dataclass
class SnnTable:
    """Shared-neighbor counts for adjacent pairs plus each node's closest
    neighbor under that count.

    nearest_neighbor[i] is adjacent to i, except isolated nodes which map
    to themselves. Ties go to the lowest node index.
    """

    nearest_neighbor: np.ndarray
    similarity: dict

    def sim(self, i, j):
        if i == j:
            return 0
        return self.similarity.get((min(i, j), max(i, j)), 0)


def compute_snn(g: AttributedGraph) -> SnnTable:
    """Count shared neighbors for each adjacent pair.

    With a zero diagonal, (A @ A)[i, j] is exactly |N(i) ∩ N(j)| where the
    neighborhoods exclude the nodes themselves, so one matrix product gives
    every pair's count at once.
    """
    a = g.adjacency.astype(np.float32)
    common = a @ a
    # rank only adjacent candidates; argmax takes the first (lowest) winner
    ranked = np.where(g.adjacency > 0, common, -1.0)
    nn = np.argmax(ranked, axis=1).astype(np.intp)
    isolated = g.degrees() == 0
    nn[isolated] = np.nonzero(isolated)[0]
    sim = {(int(i), int(j)): int(round(common[i, j])) for i, j in g.edges}
    return SnnTable(nearest_neighbor=nn, similarity=sim)


def load_citation_dataset(content_path, cites_path) -> AttributedGraph:
    """Read node-per-line content and edge-per-line citation files.

    Content lines carry ``node_id f_1 ... f_d label``; the first line fixes
    d. Citation lines carry two node ids. In both files `#` lines are
    comments. Unknown ids are dropped with a warning, duplicates and
    self-loops are removed, and edges are treated as undirected. Label
    strings map to class indices in sorted order.
    """
    ids = []
    rows = []
    raw_labels = []
    index = {}
    width = None
    with open(content_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if width is None:
                width = len(parts)
                if width < 3:
                    raise ParseError(content_path, line_no,
                                     "need node_id, at least one feature, and a label")
            if len(parts) != width:
                raise ParseError(content_path, line_no,
                                 f"expected {width} fields, got {len(parts)}")
            node_id, feats, label = parts[0], parts[1:-1], parts[-1]
            if node_id in index:
                raise ParseError(content_path, line_no, f"duplicate node id {node_id!r}")
            try:
                row = [float(f) for f in feats]
            except ValueError:
                raise ParseError(content_path, line_no, "non-numeric feature value")
            index[node_id] = len(ids)
            ids.append(node_id)
            rows.append(row)
            raw_labels.append(label)
    if not ids:
        raise EmptyInputError(f"{content_path}: no nodes")

    classes = sorted(set(raw_labels))
    class_index = {c: k for k, c in enumerate(classes)}
    labels = np.array([class_index[c] for c in raw_labels], dtype=np.intp)

    seen = set()
    edges = []
    dropped = 0
    with open(cites_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise ParseError(cites_path, line_no,
                                 f"expected 2 fields, got {len(parts)}")
            a, b = parts
            if a not in index or b not in index:
                dropped += 1
                continue
            i, j = index[a], index[b]
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                edges.append(key)
    if dropped:
        warnings.warn(f"{cites_path}: dropped {dropped} edges with unknown node ids",
                      stacklevel=2)

    g = AttributedGraph(len(ids), edges, np.array(rows, dtype=np.float64), labels)
    g.node_ids = ids
    g.class_names = classes
    return g


def generate_sbm(blocks, p_in, p_out, feature_dim, feature_shift, seed) -> AttributedGraph:
    """Planted-partition graph with Gaussian features around per-block means.

    Intra-block pairs connect with probability p_in, inter-block with
    p_out. Each block's feature mean is a distinct random unit direction
    scaled by feature_shift; node features add standard normal noise.
    Labels are block ids. Same seed, same graph.
    """
    sizes = [int(s) for s in blocks]
    if not sizes or any(s < 1 for s in sizes):
        raise ContractError("block sizes must be positive")
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise ContractError(f"{name} must be in [0, 1], got {p}")
    d = int(feature_dim)
    if d < 1:
        raise ContractError("feature_dim must be positive")

    rng = np.random.default_rng(seed)
    n = int(np.sum(sizes))
    b = len(sizes)
    labels = np.repeat(np.arange(b, dtype=np.intp), sizes)

    means = _distinct_unit_directions(rng, b, d) * float(feature_shift)

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(iu.shape[0]) < prob[iu, ju]
    edges = np.stack([iu[hit], ju[hit]], axis=1)

    features = means[labels] + rng.standard_normal((n, d))
    return AttributedGraph(n, edges, features, labels)


def _distinct_unit_directions(rng, count, dim):
    dirs = rng.standard_normal((count, dim))
    for _ in range(100):
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        bad = norms[:, 0] == 0.0
        if not bad.any():
            dirs = dirs / norms
            # exact duplicates only matter in tiny dimensions (signs in 1-D)
            dup = np.zeros(count, dtype=bool)
            for i in range(count):
                for j in range(i):
                    if np.array_equal(dirs[i], dirs[j]):
                        dup[i] = True
            if not dup.any():
                return dirs
            bad = dup
        dirs[bad] = rng.standard_normal((int(bad.sum()), dim))
    raise ContractError("could not draw distinct block directions")


def inject_noise_edges(g: AttributedGraph, fraction, seed) -> AttributedGraph:
    """Add ceil(fraction * |E|) uniformly random absent edges.

    Original edges, features, and labels carry over untouched. Asking for
    more new edges than absent pairs adds every absent pair; asking for any
    on a complete graph is an error.
    """
    if fraction < 0:
        raise ContractError("fraction must be non-negative")
    m = g.num_edges
    # round before ceil so 0.1*55 -> 5.500000000000001 does not become 7
    want = int(math.ceil(round(fraction * m, 9)))
    if want == 0:
        return AttributedGraph(g.num_nodes, g.edges, g.features, g.labels)

    iu, ju = np.triu_indices(g.num_nodes, k=1)
    absent = g.adjacency[iu, ju] == 0
    ci, cj = iu[absent], ju[absent]
    if ci.size == 0:
        raise CannotAddError("graph is already complete")
    take = min(want, ci.size)
    rng = np.random.default_rng(seed)
    pick = rng.choice(ci.size, size=take, replace=False)
    new = np.stack([ci[pick], cj[pick]], axis=1)
    combined = np.concatenate([g.edges.reshape(-1, 2), new], axis=0)
    return AttributedGraph(g.num_nodes, combined, g.features, g.labels)


# ---------------------------------------------------------------------------
# text export, inverse of the loaders above


def save_citation_files(g: AttributedGraph, content_path, cites_path, header=None):
    """Write content/cites files that load back to an identical graph.

    `header`, when given, is emitted as a leading `# ...` comment line in
    both files.
    """
    if g.labels is None:
        raise ContractError("citation export needs node labels")
    ids = getattr(g, "node_ids", None) or [str(i) for i in range(g.num_nodes)]
    names = getattr(g, "class_names", None) or [str(c) for c in range(g.num_classes)]
    with open(content_path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for i in range(g.num_nodes):
            feats = "\t".join(f"{x:.17g}" for x in g.features[i])
            fh.write(f"{ids[i]}\t{feats}\t{names[g.labels[i]]}\n")
    with open(cites_path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for i, j in g.edges:
            fh.write(f"{ids[i]}\t{ids[j]}\n")


def save_edge_list(g: AttributedGraph, path):
    with open(path, "w") as fh:
        fh.write(f"# nodes {g.num_nodes}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def load_edge_list(path):
    """Inverse of save_edge_list: returns (num_nodes, edge array)."""
    n = None
    edges = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if len(parts) == 3 and parts[1] == "nodes":
                    n = int(parts[2])
                continue
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected 2 fields, got {len(parts)}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, line_no, "non-integer node index")
    e = np.array(edges, dtype=np.intp).reshape(-1, 2)
    if n is None:
        if e.size == 0:
            raise EmptyInputError(f"{path}: no node count header and no edges")
        n = int(e.max()) + 1
    return n, e


def save_feature_matrix(g: AttributedGraph, path):
    with open(path, "w") as fh:
        for row in g.features:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_feature_matrix(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(path, line_no,
                                 f"expected {width} fields, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise ParseError(path, line_no, "non-numeric feature value")
    if not rows:
        raise EmptyInputError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def save_labels(labels, path):
    with open(path, "w") as fh:
        for y in labels:
            fh.write(f"{int(y)}\n")


def load_labels(path) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                vals.append(int(s))
            except ValueError:
                raise ParseError(path, line_no, "non-integer label")
    if not vals:
        raise EmptyInputError(f"{path}: no labels")
    return np.array(vals, dtype=np.intp)
