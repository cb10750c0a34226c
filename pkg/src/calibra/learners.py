"""Uncalibrated base learners and internal cross-validation score collection."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .calibrators import PROBABILITY, MARGIN
from .data import Attribute, Dataset, encode_matrix, format_cell, stratified_folds
from .logitboost import STUMP, TREE, AdditiveLogisticModel, fit_additive_model

VAR_FLOOR = 1e-9
BOOST_ITERATIONS = 100
SCORE_FOLDS = 5

NAIVE_BAYES = "nb"
STUMPS = "stumps"
TREES = "trees"
LEARNERS = (NAIVE_BAYES, STUMPS, TREES)


# ---------------------------------------------------------------------------
# naive Bayes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    """Gaussian likelihoods for numeric attributes, add-one tables for categorical ones."""

    attributes: tuple[Attribute, ...]
    log_prior: np.ndarray  # (m,)
    means: np.ndarray  # (m, p), NaN in categorical columns
    variances: np.ndarray  # (m, p)
    log_tables: tuple  # per attribute: (m, v) array or None

    @property
    def n_classes(self) -> int:
        return self.log_prior.shape[0]

    def predict_proba(self, X) -> np.ndarray:
        return predict_nb(self, X)


def fit_naive_bayes(d: Dataset) -> NaiveBayesModel:
    if d.has_missing():
        raise ValueError("naive Bayes needs imputed data")
    m = d.n_classes
    counts = np.bincount(d.y, minlength=m)
    if (counts == 0).any():
        empty = [d.class_names[c] for c in np.flatnonzero(counts == 0)]
        raise ValueError(f"no training instances for class(es) {empty}")
    p = len(d.attributes)
    means = np.full((m, p), np.nan)
    variances = np.full((m, p), np.nan)
    tables = []
    for k, a in enumerate(d.attributes):
        col = d.X[:, k]
        if a.is_numeric:
            span = float(col.max() - col.min())
            floor = max(VAR_FLOOR * span * span, VAR_FLOOR)
            for c in range(m):
                xc = col[d.y == c]
                means[c, k] = xc.mean()
                variances[c, k] = max(xc.var(), floor)
            tables.append(None)
        else:
            v = len(a.values)
            t = np.ones((m, v))
            np.add.at(t, (d.y, col.astype(np.int64)), 1.0)
            tables.append(np.log(t / t.sum(axis=1, keepdims=True)))
    return NaiveBayesModel(d.attributes, np.log(counts / counts.sum()), means, variances, tuple(tables))


def predict_nb(model: NaiveBayesModel, X) -> np.ndarray:
    """Posterior class probabilities, accumulated in the log domain."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.attributes):
        raise ValueError(f"expected {len(model.attributes)} attributes, got {X.shape[1]}")
    L = np.tile(model.log_prior, (X.shape[0], 1))
    for k, a in enumerate(model.attributes):
        col = X[:, k]
        if a.is_numeric:
            mu, var = model.means[:, k], model.variances[:, k]
            L += -0.5 * np.log(2 * np.pi * var) - (col[:, None] - mu) ** 2 / (2 * var)
        else:
            t = model.log_tables[k]
            idx = col.astype(np.int64)
            ok = (idx >= 0) & (idx < t.shape[1])
            L[ok] += t[:, idx[ok]].T
    return np.exp(L - logsumexp(L, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# boosted learners
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoostedModel:
    """LogitBoost ensemble of stumps or depth-3 trees over indicator-encoded attributes."""

    attributes: tuple[Attribute, ...]
    model: AdditiveLogisticModel

    def predict_proba(self, X) -> np.ndarray:
        return self.model.predict_proba(encode_matrix(self.attributes, X))


def fit_boosted(d: Dataset, weak: str = STUMP, iterations: int = BOOST_ITERATIONS) -> BoostedModel:
    if weak not in (STUMP, TREE):
        raise ValueError(f"unknown weak learner {weak!r}")
    X = encode_matrix(d.attributes, d.X)
    return BoostedModel(d.attributes, fit_additive_model(X, d.y, iterations, weak, d.n_classes))


def fit_learner(name: str, d: Dataset):
    """Fit a base learner by name: ``nb``, ``stumps`` or ``trees``."""
    if name == NAIVE_BAYES:
        return fit_naive_bayes(d)
    if name == STUMPS:
        return fit_boosted(d, STUMP)
    if name == TREES:
        return fit_boosted(d, TREE)
    raise ValueError(f"unknown base learner {name!r}; choose from {', '.join(LEARNERS)}")


# ---------------------------------------------------------------------------
# score tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Held-out base-learner outputs for every training instance.

    ``scores`` are raw base-learner outputs (probabilities or margins, as
    ``score_kind`` says); each calibrator applies its own transform.
    ``fold[i]`` names the internal fold whose model scored row ``i``.
    """

    attributes: tuple[Attribute, ...]
    A: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    fold: np.ndarray
    score_kind: str = PROBABILITY
    class_names: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        if self.score_kind == PROBABILITY:
            return self.scores.shape[1]
        return max(2, int(self.labels.max()) + 1)


def collect_scores(learner: str, d: Dataset, seed: int, folds: int = SCORE_FOLDS) -> ScoreTable:
    """Score every instance with a model trained on the other internal folds."""
    if d.n < 2:
        raise ValueError("need at least two instances to collect held-out scores")
    k = min(folds, d.n)
    counts = np.bincount(d.y, minlength=d.n_classes)
    small = [d.class_names[c] for c in range(d.n_classes) if 0 < counts[c] < k]
    if small:
        warnings.warn(f"class(es) {small} have fewer than {k} instances; folds are best-effort",
                      stacklevel=2)
    fa = stratified_folds(d.y, k, seed)
    scores = np.empty((d.n, d.n_classes))
    for train, test in fa:
        if test.size == 0:
            continue
        model = _fit_tolerant(learner, d.subset(train))
        scores[test] = model.predict_proba(d.X[test])
    return ScoreTable(d.attributes, d.X.copy(), scores, d.y.copy(), fa.assignment.copy(),
                      PROBABILITY, d.class_names)


def _fit_tolerant(learner, d):
    # a class can vanish from a small training fold; naive Bayes then sees it as absent
    if learner == NAIVE_BAYES and (np.bincount(d.y, minlength=d.n_classes) == 0).any():
        present = np.unique(d.y)
        remap = np.full(d.n_classes, -1)
        remap[present] = np.arange(present.size)
        sub = Dataset(d.attributes, d.X, remap[d.y], tuple(d.class_names[c] for c in present), d.name) \
            if present.size >= 2 else None
        return _PaddedModel(None if sub is None else fit_naive_bayes(sub), present, d.n_classes)
    return fit_learner(learner, d)


class _PaddedModel:
    def __init__(self, inner, present, m):
        self.inner, self.present, self.m = inner, present, m

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        out = np.full((X.shape[0], self.m), 1e-12)
        if self.inner is None:
            out[:, self.present] = 1.0
        else:
            out[:, self.present] = self.inner.predict_proba(X)
        return out / out.sum(axis=1, keepdims=True)


def write_score_table(t: ScoreTable, path) -> None:
    names = [f"attr_{a.name}" for a in t.attributes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [f"score_{j}" for j in range(t.scores.shape[1])] + ["label", "fold"])
        for i in range(t.n):
            row = [format_cell(a, t.A[i, k]) for k, a in enumerate(t.attributes)]
            row += [repr(float(v)) for v in t.scores[i]]
            row += [str(int(t.labels[i])), str(int(t.fold[i]))]
            w.writerow(row)


def read_score_table(path, attributes=None, score_kind: str = MARGIN, class_names=None) -> ScoreTable:
    """Read a score CSV.

    Score columns are ``score_*``; ``label`` and ``fold`` are optional, as
    are ``attr_*`` columns (decoded with ``attributes`` when given).
    Label cells may be class indices or class names.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty score file")
    header = rows[0]
    body = [r for r in rows[1:] if r]
    s_cols = [i for i, h in enumerate(header) if h.startswith("score_")]
    if not s_cols:
        raise ValueError(f"{path}: no score_* columns")
    a_cols = [i for i, h in enumerate(header) if h.startswith("attr_")]
    col = {h: i for i, h in enumerate(header)}
    for ln, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{ln}: expected {len(header)} cells, got {len(r)}")
    try:
        S = np.array([[float(r[i]) for i in s_cols] for r in body]).reshape(len(body), len(s_cols))
    except ValueError as e:
        raise ValueError(f"{path}: non-numeric score cell ({e})") from None
    labels = None
    if "label" in col:
        cells = [r[col["label"]] for r in body]
        if class_names is not None and not all(c.lstrip("-").isdigit() for c in cells):
            lookup = {n: i for i, n in enumerate(class_names)}
            labels = np.array([lookup[c] for c in cells], dtype=np.int64)
        else:
            labels = np.array([int(c) for c in cells], dtype=np.int64)
    fold = np.array([int(r[col["fold"]]) for r in body], dtype=np.int64) if "fold" in col \
        else np.zeros(len(body), dtype=np.int64)
    A = np.empty((len(body), 0))
    attrs = ()
    if attributes is not None and a_cols:
        attrs = tuple(attributes)
        if len(a_cols) != len(attrs):
            raise ValueError(f"{path}: {len(a_cols)} attr_* columns, schema has {len(attrs)}")
        A = np.empty((len(body), len(attrs)))
        for k, (i, a) in enumerate(zip(a_cols, attrs)):
            for r_i, r in enumerate(body):
                cell = r[i]
                if cell in ("", "?"):
                    A[r_i, k] = np.nan
                elif a.is_numeric:
                    A[r_i, k] = float(cell)
                else:
                    A[r_i, k] = a.values.index(cell)
    return ScoreTable(attrs, A, S, labels if labels is not None else np.zeros(len(body), dtype=np.int64),
                      fold, score_kind, None if class_names is None else tuple(class_names))
