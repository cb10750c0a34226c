"""Command-line front end: ``calibra {fit,calibrate,benchmark,reliability}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .calibrators import MARGIN, PROBABILITY
from .data import DataFormatError, Imputer, derive_seed, load_dataset, load_instances
from .evaluation import reliability_bins, rmse, run_benchmark, write_reliability_csv
from .learners import LEARNERS, collect_scores, fit_learner, read_score_table, write_score_table

log = logging.getLogger("calibra")


class UsageError(Exception):
    """Invalid arguments or inputs; exit status 2."""


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CALIBRA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CALIBRA_SEED must be an integer, got {env!r}") from None


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load(args, path):
    try:
        return load_dataset(_existing(path), args.format, args.label_column)
    except DataFormatError as e:
        raise UsageError(f"{path}: {e}") from None


def _methods(text) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in serialize.METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(serialize.METHODS)}")
    return methods


def _external_table(args, d):
    try:
        t = read_score_table(_existing(args.scores), d.attributes, args.score_kind or MARGIN, d.class_names)
    except (ValueError, KeyError) as e:
        raise UsageError(f"{args.scores}: {e}") from None
    if t.n != d.n:
        raise UsageError(f"{args.scores} has {t.n} rows but {args.data} has {d.n}")
    return t


def _write_probs(path, P, class_names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"p_{c}" for c in class_names])
        for row in P:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    seed = _seed(args)
    d = _load(args, args.data)
    if (args.base is None) == (args.scores is None):
        raise UsageError("give exactly one of --base or --scores")
    imp = Imputer.fit(d)
    di = imp.transform(d)
    cal = serialize.make_calibrator(args.method, d.attributes, PROBABILITY, derive_seed(seed, 2))
    if args.base is not None:
        table = collect_scores(args.base, di, derive_seed(seed, 1))
        base = fit_learner(args.base, di)
        train_scores = base.predict_proba(di.X)
        score_kind = PROBABILITY
    else:
        table = _external_table(args, d)
        base = None
        train_scores = table.scores
        score_kind = table.score_kind
    cal.score_kind = score_kind
    cal.fit(di.X, table.scores, di.y)
    P = cal.predict_proba(di.X, train_scores)
    if args.scores_out:
        write_score_table(table, args.scores_out)
    serialize.save(serialize.pipeline_to_dict(d.class_names, d.attributes, imp, base, cal, score_kind), args.out)
    print(f"{args.method}: training RMSE {rmse(P, di.y):.12g} on {d.n} instances ({d.name})")
    if args.method == "pct":
        tree = cal.tree
        print(f"tree: {tree.n_leaves} leaves, depth {tree.depth()}, {tree.iterations} iterations per node")
    return 0


def _load_pipeline(path):
    try:
        doc = serialize.load(_existing(path))
    except serialize.FormatError as e:
        raise UsageError(str(e)) from None
    if doc.get("kind") != "pipeline":
        raise UsageError(f"{path} does not hold a fitted calibration pipeline")
    return doc


def cmd_calibrate(args) -> int:
    doc = _load_pipeline(args.model)
    from .data import Attribute

    attrs = tuple(Attribute.from_dict(a) for a in doc["attributes"])
    class_names = tuple(doc["class_names"])
    try:
        X, _ = load_instances(_existing(args.data), attrs, class_names, args.format, args.label_column)
    except DataFormatError as e:
        raise UsageError(f"{args.data}: model/data schema mismatch: {e}") from None
    cal = serialize.calibrator_from_dict(doc["calibrator"])
    imp = None if doc["imputer"] is None else Imputer.from_dict(doc["imputer"])
    if imp is not None:
        X = X.copy()
        mask = np.isnan(X)
        X[mask] = np.broadcast_to(np.asarray(imp.fill), X.shape)[mask]
    if X.shape[0] == 0:
        _write_probs(args.out, np.empty((0, len(class_names))), class_names)
        return 0
    if doc["base"] is not None:
        S = serialize.learner_from_dict(doc["base"]).predict_proba(X)
    else:
        if args.scores is None:
            raise UsageError("this model was fitted on external scores; pass --scores")
        try:
            S = read_score_table(_existing(args.scores), score_kind=doc["score_kind"]).scores
        except ValueError as e:
            raise UsageError(str(e)) from None
        if S.shape[0] != X.shape[0]:
            raise UsageError(f"{args.scores} has {S.shape[0]} rows, data has {X.shape[0]}")
    try:
        P = cal.predict_proba(X, S)
    except ValueError as e:
        raise UsageError(f"model/data schema mismatch: {e}") from None
    _write_probs(args.out, P, class_names)
    return 0


def cmd_benchmark(args) -> int:
    seed = _seed(args)
    methods = _methods(args.methods)
    if args.base not in LEARNERS:
        raise UsageError(f"unknown base learner {args.base!r}")
    datasets = []
    for path in args.data:
        try:
            datasets.append(_load(args, path))
        except UsageError as e:
            print(f"skipping {path}: {e}", file=sys.stderr)
    if not datasets:
        raise UsageError("no dataset could be loaded")
    report = run_benchmark(datasets, methods, args.base, args.runs, args.folds, seed, args.jobs, args.alpha)
    print(report.table())
    if args.out:
        report.write_csv(args.out)
    return 0 if any(r.error is None for r in report.results) else 1


PLOT_SCRIPT = '''"""Reliability diagrams from the CSV files next to this script (needs matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent
panels = {panels!r}
fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3), sharey=True)
for ax, (title, name) in zip(axes, panels):
    with open(here / name) as fh:
        rows = list(csv.DictReader(fh))
    x = [float(r["bin_mean_pred"]) for r in rows]
    y = [float(r["bin_empirical"]) for r in rows]
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8)
    ax.plot(x, y, marker="o", ms=3)
    ax.set_title(title)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("mean predicted")
axes[0].set_ylabel("empirical fraction")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else here / "{stem}.pdf")
'''


def cmd_reliability(args) -> int:
    seed = _seed(args)
    methods = _methods(args.methods)
    d = _load(args, args.data)
    if d.n_classes > 2 and args.positive_class is None:
        raise UsageError("multiclass data needs --positive-class")
    pos = 1
    if args.positive_class is not None:
        if args.positive_class in d.class_names:
            pos = d.class_names.index(args.positive_class)
        elif args.positive_class.isdigit() and int(args.positive_class) < d.n_classes:
            pos = int(args.positive_class)
        else:
            raise UsageError(f"unknown class {args.positive_class!r}")
    if args.max_bins < 1:
        raise UsageError("--max-bins must be at least 1")
    from .data import stratified_folds

    # calibrated probabilities for every instance, each from a fold that did not train on it
    fa = stratified_folds(d.y, args.folds, derive_seed(seed, 0))
    out = {"raw": np.empty(d.n), **{m: np.empty(d.n) for m in methods}}
    for f, (train, test) in enumerate(fa):
        tr, te = d.subset(train), d.subset(test)
        imp = Imputer.fit(tr)
        tr, te = imp.transform(tr), imp.transform(te)
        table = collect_scores(args.base, tr, derive_seed(seed, f, 1))
        S = fit_learner(args.base, tr).predict_proba(te.X)
        out["raw"][test] = S[:, pos]
        for k, m in enumerate(methods):
            cal = serialize.make_calibrator(m, tr.attributes, PROBABILITY, derive_seed(seed, f, 2, k))
            cal.fit(table.A, table.scores, table.labels)
            out[m][test] = cal.predict_proba(te.X, S)[:, pos]
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    y = (d.y == pos).astype(float)
    panels = []
    for m, p in out.items():
        bins = reliability_bins(p, y, args.max_bins)
        name = f"{d.name}_{args.base}_{m}.csv"
        write_reliability_csv(bins, outdir / name)
        panels.append((m, name))
        print(f"{m:>9}: {len(bins):2d} bins, mean |pred - empirical| {bins.mean_abs_deviation():.4f}")
    stem = f"{d.name}_{args.base}"
    (outdir / f"plot_{stem}.py").write_text(PLOT_SCRIPT.format(panels=panels, stem=stem))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="calibra", description="Probability calibration trees and baselines.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--format", choices=("arff", "csv"), help="input format (default: by extension)")
        p.add_argument("--label-column", help="class column of CSV input (default: last)")
        if seed:
            p.add_argument("--seed", type=int, help="master seed (default: $CALIBRA_SEED or 0)")

    p = sub.add_parser("fit", help="fit a calibrator and save it as JSON")
    common(p)
    p.add_argument("--method", choices=serialize.METHODS, default="pct")
    p.add_argument("--base", choices=LEARNERS, help="built-in base learner")
    p.add_argument("--scores", help="external score CSV (score_* columns) row-aligned with --data")
    p.add_argument("--score-kind", choices=(MARGIN, PROBABILITY),
                   help="kind of external scores (default: margin, not log-odds transformed)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scores-out", help="write the internal-CV score table here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="apply a saved calibrator")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scores", help="external score CSV for models fitted on external scores")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("benchmark", help="repeated stratified cross-validation of calibration methods")
    common(p)
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--base", default="nb")
    p.add_argument("--methods", default="pct,platt,isotonic")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.01, help="significance level")
    p.add_argument("--out", help="report CSV")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("reliability", help="export reliability-diagram bins")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--base", choices=LEARNERS, default="nb")
    p.add_argument("--methods", default="pct,platt,isotonic")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--max-bins", type=int, default=30)
    p.add_argument("--positive-class", help="class name or index (default: the second class)")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_reliability)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "runs", 1) < 1 or getattr(args, "folds", 2) < 2 or getattr(args, "jobs", 1) < 1:
            raise UsageError("--runs and --jobs must be at least 1, --folds at least 2")
        return args.func(args)
    except UsageError as e:
        print(f"calibra: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        if args.verbose:
            raise
        print(f"calibra: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
