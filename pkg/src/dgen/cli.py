"""Command-line front end.

Five subcommands: `train` runs the four-phase pipeline on a citation-style
dataset, `eval` scores a saved label file against ground truth, `gen-sbm`
writes a synthetic block-model dataset, `ablate` runs a grid of pooling /
noise / ratio / lambda variants at a fixed seed, and `gradcheck` runs the
finite-difference gradient suite.

Every run echoes its fully resolved configuration (defaults included)
before doing any work, and every output file starts with a `# config`
comment naming the settings and seed that produced it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import tensor as T
from .errors import (
    ContractError,
    DataError,
    DegenerateLabelsError,
    NumericalError,
)
from .gradcheck import CASES, run_all
from .graph import (
    generate_sbm,
    inject_noise_edges,
    load_citation_dataset,
    save_citation_files,
)
from .metrics import accuracy, ari, nmi
from .pipeline import (
    POOL_MODES,
    TrainConfig,
    _config_line,
    _rngs_for,
    pretrain,
    run_pipeline,
    save_embedding,
    save_label_assignments,
    save_report,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; we reserve 2 for data
    errors, so remap usage problems to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _csv_floats(text):
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _csv_ints(text):
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _csv_pools(text):
    return [x for x in text.split(",") if x != ""]


def _add_config_flags(p, sweep=False):
    # `ablate` sweeps pool/ratio/lambda, so those flags take comma lists there
    if sweep:
        p.add_argument("--pool", type=_csv_pools, default=list(POOL_MODES),
                       help="comma-separated pooling variants")
        p.add_argument("--ratio", type=_csv_floats, default=[0.6],
                       help="comma-separated keep fractions")
        p.add_argument("--lambda", dest="lam", type=_csv_floats, default=[10.0],
                       help="comma-separated clustering loss weights")
    else:
        p.add_argument("--pool", choices=POOL_MODES, default="ncpool")
        p.add_argument("--ratio", type=float, default=0.6,
                       help="fraction of nodes kept by pooling")
        p.add_argument("--lambda", dest="lam", type=float, default=10.0,
                       help="clustering loss weight")
    p.add_argument("--epochs-pretrain", type=int, default=200)
    p.add_argument("--epochs-train", type=int, default=200)
    p.add_argument("--epochs-clf", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=0,
                   help="cluster count; 0 takes the ground-truth class count")
    p.add_argument("--center-refresh", type=int, default=20,
                   help="epochs between pooling K-means refits")
    p.add_argument("--target-refresh", type=int, default=5,
                   help="epochs between target distribution refreshes")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--emb-dim", type=int, default=16)
    p.add_argument("--heads", type=int, default=4)


def _config_from(args, **overrides):
    values = dict(
        ratio=args.ratio,
        lam=args.lam,
        pretrain_epochs=args.epochs_pretrain,
        train_epochs=args.epochs_train,
        classifier_epochs=args.epochs_clf,
        seed=args.seed,
        center_refresh_interval=args.center_refresh,
        target_refresh_interval=args.target_refresh,
        num_clusters=args.clusters,
        pool=args.pool,
        hidden=args.hidden,
        emb_dim=args.emb_dim,
        heads=args.heads,
    )
    values.update(overrides)
    return TrainConfig(**values)


def _echo(command, pairs):
    line = " ".join(f"{k}={v}" for k, v in pairs)
    print(f"config: command={command} {line}")


def _echo_config(command, config, extras):
    extra = " ".join(f"{k}={v}" for k, v in sorted(extras.items()))
    print(f"config: command={command} {_config_line(config)} {extra}".rstrip())


def _load_dataset(args):
    g = load_citation_dataset(args.content, args.cites)
    if getattr(args, "noise", 0.0):
        g = inject_noise_edges(g, args.noise, seed=args.seed)
    return g


def cmd_train(args) -> int:
    config = _config_from(args)
    _echo_config("train", config,
                 {"content": args.content, "cites": args.cites,
                  "noise": args.noise, "out_dir": args.out_dir})
    config.validate()
    g = _load_dataset(args)
    report = run_pipeline(g, config)

    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(args.out_dir, "report.txt"),
        "labels": os.path.join(args.out_dir, "labels.txt"),
        "embedding": os.path.join(args.out_dir, "embedding.txt"),
    }
    save_report(report, paths["report"])
    save_label_assignments(report, g, paths["labels"])
    save_embedding(report, paths["embedding"])

    for name in ("acc", "nmi", "ari"):
        v = getattr(report, name)
        if v is not None:
            print(f"metric {name} {v:.6f}")
    for w in report.warnings:
        print(f"warning {w}")
    for kind, path in paths.items():
        print(f"wrote {kind} {path}")
    return 0


def _read_label_file(path):
    """`node_id cluster_id` per line, `#` comments allowed."""
    out = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise DataError(f"{path}: expected `node_id cluster_id` lines")
            if parts[0] in out:
                raise DataError(f"{path}: duplicate node id {parts[0]!r}")
            try:
                out[parts[0]] = int(parts[1])
            except ValueError:
                raise DataError(f"{path}: non-integer cluster id {parts[1]!r}")
    if not out:
        raise DataError(f"{path}: no label rows")
    return out


def cmd_eval(args) -> int:
    _echo("eval", [("labels", args.labels), ("content", args.content),
                   ("cites", args.cites), ("out_dir", args.out_dir)])
    pred = _read_label_file(args.labels)
    g = load_citation_dataset(args.content, args.cites)
    truth_of = {nid: int(y) for nid, y in zip(g.node_ids, g.labels)}
    missing = [nid for nid in pred if nid not in truth_of]
    if missing:
        raise DataError(
            f"{args.labels}: {len(missing)} node ids absent from "
            f"{args.content} (first: {missing[0]!r})")
    ids = sorted(pred)
    y_pred = np.array([pred[i] for i in ids])
    y_true = np.array([truth_of[i] for i in ids])
    scores = {"acc": accuracy(y_pred, y_true),
              "nmi": nmi(y_pred, y_true),
              "ari": ari(y_pred, y_true)}
    for name, v in scores.items():
        print(f"metric {name} {v:.6f}")
    if args.out_dir is not None:
        os.makedirs(args.out_dir, exist_ok=True)
        path = os.path.join(args.out_dir, "metrics.txt")
        with open(path, "w") as fh:
            fh.write(f"# config command=eval labels={args.labels} "
                     f"content={args.content} cites={args.cites}\n")
            for name, v in scores.items():
                fh.write(f"metric {name} {v:.6f}\n")
        print(f"wrote metrics {path}")
    return 0


def cmd_gen_sbm(args) -> int:
    pairs = [("blocks", ",".join(str(b) for b in args.blocks)),
             ("p_in", args.p_in), ("p_out", args.p_out),
             ("feature_dim", args.feature_dim), ("shift", args.shift),
             ("seed", args.seed), ("out_dir", args.out_dir)]
    _echo("gen-sbm", pairs)
    g = generate_sbm(args.blocks, args.p_in, args.p_out,
                     args.feature_dim, args.shift, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    content = os.path.join(args.out_dir, "sbm.content")
    cites = os.path.join(args.out_dir, "sbm.cites")
    header = ("config command=gen-sbm "
              + " ".join(f"{k}={v}" for k, v in pairs))
    save_citation_files(g, content, cites, header=header)
    print(f"wrote content {content}")
    print(f"wrote cites {cites}")
    print(f"nodes {g.num_nodes} edges {g.num_edges} classes {g.num_classes}")
    return 0


def cmd_ablate(args) -> int:
    base = _config_from(args, pool="ncpool", ratio=0.6, lam=10.0)
    extras = {"content": args.content, "cites": args.cites,
              "out_dir": args.out_dir,
              "pools": ",".join(args.pool),
              "noises": ",".join(str(x) for x in args.noise),
              "ratios": ",".join(str(x) for x in args.ratio),
              "lambdas": ",".join(str(x) for x in args.lam)}
    _echo_config("ablate", base, extras)
    for mode in args.pool:
        if mode not in POOL_MODES:
            raise ContractError(f"pool must be one of {POOL_MODES}, got {mode!r}")
    clean = load_citation_dataset(args.content, args.cites)

    rows = []
    for noise in args.noise:
        g = inject_noise_edges(clean, noise, seed=args.seed) if noise else clean
        shared = None  # pooling/ratio/lambda do not enter pretraining
        for mode in args.pool:
            for ratio in args.ratio:
                for lam in args.lam:
                    cfg = replace(base, pool=mode, ratio=ratio, lam=lam)
                    cfg.validate()
                    if shared is None:
                        shared = pretrain(g, cfg, _rngs_for(cfg.seed)["global"])
                    report = run_pipeline(g, cfg, pretrained=shared)
                    rows.append((mode, noise, ratio, lam,
                                 report.acc, report.nmi, report.ari,
                                 len(report.selected)))

    def fmt(v):
        return "nan" if v is None else f"{v:.6f}"

    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "ablation.txt")
    with open(path, "w") as fh:
        fh.write(f"# config command=ablate {_config_line(base)} "
                 + " ".join(f"{k}={v}" for k, v in sorted(extras.items()))
                 + "\n")
        fh.write("# columns pool noise ratio lambda acc nmi ari selected\n")
        for mode, noise, ratio, lam, acc_v, nmi_v, ari_v, kept in rows:
            line = (f"{mode} {noise:.6g} {ratio:.6g} {lam:.6g} "
                    f"{fmt(acc_v)} {fmt(nmi_v)} {fmt(ari_v)} {kept}")
            fh.write(line + "\n")
            print(line)
    print(f"wrote ablation {path}")
    return 0


def cmd_gradcheck(args) -> int:
    _echo("gradcheck", [("seed", args.seed), ("instances", args.instances),
                        ("corrupt_op", args.corrupt_op)])
    if args.corrupt_op is not None:
        if args.corrupt_op not in CASES:
            raise ContractError(f"unknown op {args.corrupt_op!r}")
        T.set_adjoint_fault(args.corrupt_op, 1.5)
    try:
        results, ok = run_all(seed=args.seed, instances=args.instances)
    finally:
        T.clear_adjoint_faults()
    for r in results:
        status = "pass" if r.ok else "FAIL"
        print(f"check {r.name} max_rel_err={r.max_rel_err:.3e} {status}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"gradcheck: {len(failed)} of {len(results)} checks FAILED: "
              + " ".join(failed))
        return 3
    print(f"gradcheck: all {len(results)} checks passed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", help="run the full pipeline on a dataset")
    p.add_argument("--content", required=True, help="node feature/label file")
    p.add_argument("--cites", required=True, help="edge list file")
    p.add_argument("--noise", type=float, default=0.0,
                   help="fraction of random edges to inject before training")
    p.add_argument("--out-dir", default="dgen_out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved label file against ground truth")
    p.add_argument("--labels", required=True, help="label assignment file")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-sbm", help="write a synthetic block-model dataset")
    p.add_argument("--blocks", type=_csv_ints, default=[100, 100, 100],
                   help="comma-separated block sizes")
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--shift", type=float, default=2.0,
                   help="distance of block feature means from the origin")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="dgen_out")
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("ablate", help="grid of pooling/noise/ratio/lambda variants")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--out-dir", default="dgen_out")
    p.add_argument("--noise", type=_csv_floats, default=[0.0],
                   help="comma-separated noise fractions")
    _add_config_flags(p, sweep=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt-op", default=None,
                   help="test fixture: corrupt this op's adjoint and expect failure")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if not e.code else 1
    try:
        return args.func(args)
    except (DataError, DegenerateLabelsError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
