"""Command-line entry point: fit, oracle-em, generate, imbalance and eval.

Exit status is 0 on success, 1 for usage errors, 2 for data errors and 3 for
numerical failures.
"""
import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .data_io import (DataError, generate_gmm, imbalance_subsample, read_features, read_labels,
                      write_features, write_labels, write_run, _atomic_write)
from .runner import FitConfig, evaluate, fit, run_oracle_em

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("dpmcluster")

# fields handled by dedicated flags
_SPECIAL = {"seed", "splits", "merges"}
_CHOICES = {"psi_mode": ("identity-scale", "data-std-scale"), "m_mode": ("data-mean",)}
_HELP = {
    "init_k": "initial number of clusters",
    "hidden": "hidden units in every net",
    "batch": "minibatch size",
    "lr_cluster": "Adam learning rate of the clustering net",
    "lr_sub": "Adam learning rate of the subclustering nets",
    "alpha": "DP concentration",
    "kappa": "NIW mean pseudocount",
    "nu": "NIW scatter pseudocount (default d + 2)",
    "psi_scale": "scale of the NIW prior scatter",
    "psi_mode": "prior scatter is psi_scale times the identity, or also times the data std",
    "m_mode": "prior mean",
    "epochs_max": "hard cap on training epochs",
    "split_every": "epochs between split rounds",
    "merge_every": "epochs between merge rounds",
    "merge_offset": "epoch offset of merge rounds relative to split rounds",
    "warmup": "epochs before the first proposal round",
    "patience": "stop after this many proposal rounds with no acceptance",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    for f in fields(FitConfig):
        if f.name in _SPECIAL:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = float if f.name == "nu" else type(f.default)
        default = None if f.default is MISSING else f.default
        kwargs = {"type": kind, "default": default, "help": _HELP[f.name]}
        if default is not None:
            kwargs["help"] += " (default: %(default)s)"
        if f.name in _CHOICES:
            kwargs["choices"] = _CHOICES[f.name]
        p.add_argument(flag, **kwargs)
    p.add_argument("--no-splits", action="store_true", help="never propose splits")
    p.add_argument("--no-merges", action="store_true", help="never propose merges")


def _add_common(p, out_required=True):
    p.add_argument("--out", type=Path, required=out_required, help="artifact directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="cap on BLAS threads (results are reproducible per seed and thread count)")


def build_parser():
    parser = _Parser(prog="dpmcluster",
                     description="Nonparametric deep clustering with split/merge inference of K.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for per-epoch progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="infer K and a clustering of a feature file")
    p.add_argument("features", type=Path)
    p.add_argument("--truth", type=Path, help="label file used only for metrics after training")
    p.add_argument("--figures", action="store_true",
                   help="also render k_trajectory.png (and clusters.png for 2-D data)")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("oracle-em", help="classical Bayesian EM at a fixed K")
    p.add_argument("features", type=Path)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--tol", type=float, default=1e-9, help="stop when an iteration gains less")
    p.add_argument("--figures", action="store_true")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("generate", help="sample a separated Gaussian mixture")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--weights", help="comma-separated mixture weights summing to 1")
    _add_common(p)

    p = sub.add_parser("imbalance", help="undersample classes of a labelled dataset")
    p.add_argument("features", type=Path)
    p.add_argument("labels", type=Path)
    p.add_argument("--proportions",
                   help="comma-separated fraction kept per class; drawn from a flat Dirichlet if omitted")
    _add_common(p)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("pred", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--features", type=Path, help="feature file, enables the silhouette score")
    p.add_argument("--out", type=Path, help="also write metrics.json here")
    return parser


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} must be a comma-separated list of numbers") from None


def config_from_args(args):
    kw = {f.name: getattr(args, f.name) for f in fields(FitConfig) if f.name not in _SPECIAL}
    kw.update(seed=args.seed, splits=not args.no_splits, merges=not args.no_merges)
    try:
        return FitConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_truth(path, n):
    if path is None:
        return None
    truth = read_labels(path)
    if truth.size != n:
        raise DataError(f"{path}: {truth.size} labels for {n} feature rows")
    return truth


def _report(record, out, figures, x, truth):
    write_run(record, out)
    if figures:
        from .plotting import write_figures
        true_k = None if truth is None else int(np.unique(truth).size)
        write_figures(record, x, out, true_k)
    s = record.summary()
    parts = [f"final_k={s['final_k']}", f"epochs={s['epochs']}"]
    parts += [f"{m}={s[m]:.4f}" for m in ("acc", "nmi", "ari", "silhouette") if s[m] is not None]
    print(" ".join(parts))


def cmd_fit(args):
    config = config_from_args(args)
    x = read_features(args.features)
    truth = _load_truth(args.truth, x.shape[0])
    record = fit(x, config, truth=truth)
    _report(record, args.out, args.figures, x, truth)


def cmd_oracle_em(args):
    config = config_from_args(args)
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    x = read_features(args.features)
    truth = _load_truth(args.truth, x.shape[0])
    record = run_oracle_em(x, args.k, config, truth=truth, tol=args.tol)
    _report(record, args.out, args.figures, x, truth)


def cmd_generate(args):
    weights = None if args.weights is None else np.array(_floats(args.weights, "weights"))
    try:
        x, labels, params = generate_gmm(args.k, args.n, args.d, args.separation,
                                         weights=weights, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    write_features(args.out / "features.csv", x)
    write_labels(args.out / "labels.csv", labels)
    meta = {k: np.asarray(v).tolist() for k, v in params.items()}
    meta.update(k=args.k, n=args.n, d=args.d, separation=args.separation, seed=args.seed)
    _atomic_write(args.out / "params.json", json.dumps(meta, indent=2) + "\n")
    print(f"wrote {args.n} points in {args.d} dimensions from {args.k} components to {args.out}")


def cmd_imbalance(args):
    x = read_features(args.features)
    labels = _load_truth(args.labels, x.shape[0])
    props = None if args.proportions is None else _floats(args.proportions, "proportions")
    try:
        xs, ls, kept, props = imbalance_subsample(x, labels, props, seed=args.seed)
    except DataError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    write_features(args.out / "features.csv", xs)
    write_labels(args.out / "labels.csv", ls)
    classes, counts = np.unique(ls, return_counts=True)
    meta = {"proportions": [float(p) for p in props],
            "classes": classes.tolist(), "counts": counts.tolist(),
            "kept_indices": kept.tolist(), "seed": args.seed}
    _atomic_write(args.out / "imbalance.json", json.dumps(meta, indent=2) + "\n")
    print("proportions=" + ",".join(f"{p:.6g}" for p in props) + f" kept={kept.size}")


def cmd_eval(args):
    pred = read_labels(args.pred)
    truth = read_labels(args.truth)
    if pred.size != truth.size:
        raise DataError(f"{pred.size} predicted labels but {truth.size} true labels")
    if args.features is not None:
        x = read_features(args.features)
        if x.shape[0] != pred.size:
            raise DataError(f"{x.shape[0]} feature rows but {pred.size} labels")
        scores = evaluate(x, pred, truth)
    else:
        from . import metrics
        scores = {"acc": metrics.clustering_accuracy(pred, truth), "nmi": metrics.nmi(pred, truth),
                  "ari": metrics.ari(pred, truth), "silhouette": None}
    text = json.dumps(scores, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _atomic_write(args.out / "metrics.json", text)
    sys.stdout.write(text)


COMMANDS = {"fit": cmd_fit, "oracle-em": cmd_oracle_em, "generate": cmd_generate,
            "imbalance": cmd_imbalance, "eval": cmd_eval}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", 1)
    if threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=threads):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
