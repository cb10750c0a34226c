"""Metrics, significance tests, reliability binning and the CV benchmark harness."""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import Dataset, Imputer, derive_seed, stratified_folds
from .learners import collect_scores, fit_learner
from .serialize import make_calibrator

SIGNIFICANCE = 0.01
BETTER = "better"
WORSE = "worse"
MARKS = {BETTER: "•", WORSE: "◦", None: ""}


def rmse(probs, labels) -> float:
    """Root of the Brier score divided by the class count."""
    P = np.asarray(probs, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    labels = np.asarray(labels, dtype=np.int64)
    n, m = P.shape
    if n == 0:
        raise ValueError("rmse of an empty set")
    if labels.shape != (n,):
        raise ValueError("one label per probability row required")
    Y = np.zeros_like(P)
    Y[np.arange(n), labels] = 1.0
    return float(np.sqrt(((P - Y) ** 2).sum() / (n * m)))


def corrected_ttest(diffs, n_train: float, n_test: float) -> tuple[float, float]:
    """Corrected resampled t-test on per-run differences; returns (t, two-tailed p)."""
    d = np.asarray(diffs, dtype=float)
    N = d.size
    if N < 2:
        raise ValueError("need at least two runs")
    mean = d.mean()
    var = d.var(ddof=1)
    if var == 0.0 or np.ptp(d) == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / math.sqrt((1.0 / N + n_test / n_train) * var)
    return float(t), float(2.0 * stats.t.sf(abs(t), N - 1))


def sign_test(wins: int, losses: int) -> float:
    """Two-tailed sign test by the normal approximation, no continuity correction."""
    n = wins + losses
    if n == 0:
        return 1.0
    z = (wins - losses) / math.sqrt(n)
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class ReliabilityBins:
    mean_pred: np.ndarray
    empirical: np.ndarray
    count: np.ndarray

    def __len__(self):
        return self.count.size

    def mean_abs_deviation(self) -> float:
        return float(np.abs(self.mean_pred - self.empirical).mean())

    def weighted_abs_deviation(self) -> float:
        return float((np.abs(self.mean_pred - self.empirical) * self.count).sum() / self.count.sum())


def reliability_bins(probs, labels, max_bins: int = 30) -> ReliabilityBins:
    """Equal-frequency bins over sorted predictions; tied predictions never straddle bins.

    ``labels`` are 0/1 positive indicators.
    """
    if max_bins < 1:
        raise ValueError("max_bins must be at least 1")
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = p.size
    if n == 0:
        return ReliabilityBins(np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
    order = np.argsort(p, kind="stable")
    ps, ys = p[order], y[order]
    cuts = []
    for b in range(1, max_bins):
        c = (b * n) // max_bins
        # push the cut past a tie group so the group joins the earlier bin
        while 0 < c < n and ps[c] == ps[c - 1]:
            c += 1
        if 0 < c < n and (not cuts or c > cuts[-1]):
            cuts.append(c)
    edges = [0, *cuts, n]
    mp, emp, cnt = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        mp.append(ps[a:b].mean())
        emp.append(ys[a:b].mean())
        cnt.append(b - a)
    return ReliabilityBins(np.array(mp), np.array(emp), np.array(cnt, dtype=np.int64))


def write_reliability_csv(bins: ReliabilityBins, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_mean_pred", "bin_empirical", "count"])
        for a, b, c in zip(bins.mean_pred, bins.empirical, bins.count):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])


def expected_cost_decision(p, C) -> int:
    """Class minimising expected cost; ``C[i, j]`` is the cost of predicting i when j is true."""
    p = np.asarray(p, dtype=float)
    C = np.asarray(C, dtype=float)
    m = p.size
    if C.shape != (m, m):
        raise ValueError(f"cost matrix must be {m}x{m}, got {C.shape}")
    cost = C @ p
    best = cost.min()
    tol = 1e-12 * max(1.0, abs(best))
    return int(np.flatnonzero(cost <= best + tol)[0])


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def row_hashes(d: Dataset, idx) -> set[str]:
    """(instance index, cell content) digests used by the leakage audit."""
    out = set()
    for i in np.asarray(idx):
        h = hashlib.sha1(np.ascontiguousarray(d.X[i]).tobytes() + np.int64(d.y[i]).tobytes())
        out.add(f"{int(i)}:{h.hexdigest()}")
    return out


def _fold_job(args):
    d, train, test, methods, learner, seed, audit = args
    tr, te = d.subset(train), d.subset(test)
    imp = Imputer.fit(tr)
    tr, te = imp.transform(tr), imp.transform(te)
    table = collect_scores(learner, tr, derive_seed(seed, 1))
    base = fit_learner(learner, tr)
    test_scores = base.predict_proba(te.X)
    out = {"raw": rmse(test_scores, te.y)}
    for k, meth in enumerate(methods):
        cal = make_calibrator(meth, tr.attributes, table.score_kind, derive_seed(seed, 2, k))
        cal.fit(table.A, table.scores, table.labels)
        out[meth] = rmse(cal.predict_proba(te.X, test_scores), te.y)
    leak = None
    if audit:
        # calibrators only see rows of the score table, which are the training rows
        leak = not row_hashes(d, test).isdisjoint(row_hashes(d, train[: table.n]))
    return out, leak


@dataclass
class DatasetResult:
    name: str
    runs: dict  # method -> array of per-(run, fold) RMSE in canonical order
    n_train: float
    n_test: float
    leak_detected: bool = False
    error: str | None = None

    def mean(self, method) -> float:
        return float(np.mean(self.runs[method]))


@dataclass
class EvaluationReport:
    methods: tuple[str, ...]
    reference: str
    results: list[DatasetResult] = field(default_factory=list)
    alpha: float = SIGNIFICANCE
    runs: int = 0
    folds: int = 0

    def compare(self, res: DatasetResult, method: str) -> tuple[float, float, str | None]:
        """t-test of ``method`` minus reference; ``better`` means the reference is significantly better."""
        diffs = np.asarray(res.runs[method]) - np.asarray(res.runs[self.reference])
        t, p = corrected_ttest(diffs, res.n_train, res.n_test)
        mark = None
        if p < self.alpha:
            mark = BETTER if diffs.mean() > 0 else WORSE
        return t, p, mark

    def table(self) -> str:
        shown = [m for m in self.methods]
        lines = ["dataset".ljust(16) + "".join(m.rjust(12) for m in shown)]
        for res in self.results:
            if res.error is not None:
                lines.append(res.name.ljust(16) + f"  failed: {res.error}")
                continue
            cells = []
            for m in shown:
                mark = ""
                if m != self.reference:
                    mark = MARKS[self.compare(res, m)[2]]
                cells.append(f"{res.mean(m):.3f} {mark or ' '}".rjust(12))
            lines.append(res.name.ljust(16) + "".join(cells))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "method", "mean_rmse", "std_rmse", "t", "p", "mark", "n_runs"])
            for res in self.results:
                if res.error is not None:
                    w.writerow([res.name, "", "", "", "", "", "error: " + res.error, 0])
                    continue
                for m in ("raw",) + tuple(self.methods):
                    vals = np.asarray(res.runs[m])
                    t = p = ""
                    mark = ""
                    if m in self.methods and m != self.reference:
                        t, p, mk = self.compare(res, m)
                        mark = MARKS[mk]
                        t, p = f"{t:.6g}", f"{p:.6g}"
                    w.writerow([res.name, m, f"{vals.mean():.6f}", f"{vals.std(ddof=1) if vals.size > 1 else 0.0:.6f}",
                                t, p, mark, vals.size])


def run_benchmark(datasets, methods=("pct", "platt", "isotonic"), base_learner: str = "nb",
                  runs: int = 10, folds: int = 10, seed: int = 0, jobs: int = 1,
                  alpha: float = SIGNIFICANCE, audit: bool = True, progress=None) -> EvaluationReport:
    """Repeated stratified k-fold CV of every calibration method on every dataset.

    Preprocessing, score collection and calibrator fitting see the training
    split only; the test fold is scored once by each fitted calibrator.
    """
    methods = tuple(methods)
    report = EvaluationReport(methods, methods[0], alpha=alpha, runs=runs, folds=folds)
    for di, d in enumerate(datasets):
        try:
            tasks = []
            for r in range(runs):
                fa = stratified_folds(d.y, folds, derive_seed(seed, r))
                for f, (train, test) in enumerate(fa):
                    tasks.append((d, train, test, methods, base_learner, derive_seed(seed, r, f), audit))
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as ex:
                    outs = list(ex.map(_fold_job, tasks))
            else:
                outs = []
                for t in tasks:
                    outs.append(_fold_job(t))
                    if progress is not None:
                        progress(d.name, len(outs), len(tasks))
            res = DatasetResult(d.name, {m: np.array([o[0][m] for o in outs]) for m in ("raw",) + methods},
                                n_train=1.0 - 1.0 / folds, n_test=1.0 / folds,
                                leak_detected=any(o[1] for o in outs if o[1] is not None))
        except Exception as e:  # keep going with the remaining datasets
            warnings.warn(f"benchmark on {d.name} failed: {e}", stacklevel=2)
            res = DatasetResult(d.name, {}, 0, 0, error=str(e))
        report.results.append(res)
    return report
