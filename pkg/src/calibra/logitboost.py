"""Additive logistic models fitted by multiclass LogitBoost.

The model keeps one score function per class, ``F_j(x) = sum_k f_jk(x)``,
centred so the scores sum to zero, and predicts ``softmax(F)``.  Three weak
learners are available: simple linear regression on the single best
attribute, regression stumps, and depth-limited regression trees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import stratified_folds

SIMPLE_LINEAR = "simple_linear"
STUMP = "stump"
TREE = "tree"
WEAK_KINDS = (SIMPLE_LINEAR, STUMP, TREE)

Z_MAX = 3.0
W_MIN = 1e-6
P_CLIP = 1e-12
TREE_DEPTH = 3


class BoostingError(FloatingPointError):
    pass


def softmax_probs(F) -> np.ndarray:
    """Row-wise ``exp(F_j) / sum_i exp(F_i)`` with max subtraction."""
    F = np.asarray(F, dtype=float)
    E = np.exp(F - F.max(axis=-1, keepdims=True))
    return E / E.sum(axis=-1, keepdims=True)


def one_hot(labels, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.shape[0], m))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def working_response(y_j, p_j, z_max=Z_MAX, w_min=W_MIN):
    """Newton working response and weight for one class.

    ``w = p(1-p)`` and ``z = (y-p)/w``, with ``|z| <= z_max`` and
    ``w >= w_min``.  Both limits are imposed by raising the weight, so
    ``w * z == y - p`` always holds and the fixed point of boosting remains
    the maximum-likelihood fit.
    """
    r = y_j - p_j
    w = np.maximum(np.maximum(p_j * (1.0 - p_j), np.abs(r) / z_max), w_min)
    return r / w, w


# ---------------------------------------------------------------------------
# weak learners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimpleLinear:
    attribute: int
    slope: float
    intercept: float

    def predict(self, X):
        return self.intercept + self.slope * X[:, self.attribute]

    def to_dict(self):
        return {"kind": SIMPLE_LINEAR, "attribute": self.attribute, "slope": self.slope,
                "intercept": self.intercept}


@dataclass(frozen=True)
class Stump:
    attribute: int  # -1: no admissible split, constant prediction
    threshold: float
    left: float
    right: float

    def predict(self, X):
        if self.attribute < 0:
            return np.full(X.shape[0], self.left)
        return np.where(X[:, self.attribute] <= self.threshold, self.left, self.right)

    def to_dict(self):
        return {"kind": STUMP, "attribute": self.attribute, "threshold": self.threshold,
                "left": self.left, "right": self.right}


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary regression tree stored as flat node arrays (feature -1 marks a leaf)."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        lft = np.asarray(self.left)
        rgt = np.asarray(self.right)
        for _ in range(len(self.feature)):
            f = feat[node]
            inner = f >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[inner]] <= thr[node[inner]]
            node[rows] = np.where(go_left, lft[node[inner]], rgt[node[inner]])
        return np.asarray(self.value)[node]

    @property
    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def to_dict(self):
        return {"kind": TREE, "feature": list(self.feature), "threshold": list(self.threshold),
                "left": list(self.left), "right": list(self.right), "value": list(self.value)}


def learner_from_dict(d: dict):
    kind = d["kind"]
    if kind == SIMPLE_LINEAR:
        return SimpleLinear(int(d["attribute"]), float(d["slope"]), float(d["intercept"]))
    if kind == STUMP:
        return Stump(int(d["attribute"]), float(d["threshold"]), float(d["left"]), float(d["right"]))
    if kind == TREE:
        return RegressionTree(tuple(d["feature"]), tuple(d["threshold"]), tuple(d["left"]),
                              tuple(d["right"]), tuple(d["value"]))
    raise ValueError(f"unknown weak learner kind {kind!r}")


def fit_simple_linear(X, z, w) -> SimpleLinear:
    """Weighted least-squares line on the single attribute with least SSE."""
    X = np.ascontiguousarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("simple linear regression needs at least one row and one attribute")
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    a, s, c = _kernels.linear_fit(X, z, w)
    return SimpleLinear(int(a), float(s), float(c))


def presort(X) -> np.ndarray:
    return np.argsort(X, axis=0, kind="stable").astype(np.int64)


def fit_stump(X, z, w, order=None) -> Stump:
    X = np.ascontiguousarray(X, dtype=float)
    if order is None:
        order = presort(X)
    mask = np.ones(X.shape[0], dtype=np.bool_)
    c, thr, lv, rv, _ = _kernels.sse_split(X, order, mask, z, w, 1)
    if c < 0:
        return Stump(-1, 0.0, float((w * z).sum() / w.sum()), 0.0)
    return Stump(int(c), float(thr), float(lv), float(rv))


def fit_regression_tree(X, z, w, max_depth=TREE_DEPTH, order=None) -> RegressionTree:
    """Greedy weighted-SSE tree, at least one instance per leaf, no pruning."""
    X = np.ascontiguousarray(X, dtype=float)
    if order is None:
        order = presort(X)
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(mask, depth):
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float((w[mask] * z[mask]).sum() / w[mask].sum()))
        if depth >= max_depth or mask.sum() < 2:
            return i
        c, thr, _, _, _ = _kernels.sse_split(X, order, mask, z, w, 1)
        if c < 0:
            return i
        go = X[:, c] <= thr
        feature[i] = int(c)
        threshold[i] = float(thr)
        left[i] = grow(mask & go, depth + 1)
        right[i] = grow(mask & ~go, depth + 1)
        return i

    grow(np.ones(X.shape[0], dtype=np.bool_), 0)
    return RegressionTree(tuple(feature), tuple(threshold), tuple(left), tuple(right), tuple(value))


# ---------------------------------------------------------------------------
# model and state
# ---------------------------------------------------------------------------


def _center_add(F, f):
    """``F_j += (m-1)/m * (f_j - mean(f))``; same operation order as the kernels."""
    m = F.shape[1]
    scale = (m - 1.0) / m
    s = f[0]
    for j in range(1, m):
        s = s + f[j]
    mean = s / m
    for j in range(m):
        F[:, j] = F[:, j] + scale * (f[j] - mean)


@dataclass(frozen=True, eq=False)
class AdditiveLogisticModel:
    """Boosted per-class score functions.

    Simple-linear ensembles are stored as ``(iterations, m)`` arrays of
    attribute index, slope and intercept; other kinds as a tuple of
    per-iteration tuples of learners.
    """

    n_classes: int
    weak_kind: str = SIMPLE_LINEAR
    attrs: np.ndarray | None = None
    slopes: np.ndarray | None = None
    intercepts: np.ndarray | None = None
    learners: tuple = ()

    def __post_init__(self):
        if self.weak_kind not in WEAK_KINDS:
            raise ValueError(f"unknown weak learner kind {self.weak_kind!r}")
        if self.weak_kind == SIMPLE_LINEAR:
            m = self.n_classes
            a = np.zeros((0, m), dtype=np.int64) if self.attrs is None else np.asarray(self.attrs, dtype=np.int64)
            s = np.zeros((0, m)) if self.slopes is None else np.asarray(self.slopes, dtype=float)
            c = np.zeros((0, m)) if self.intercepts is None else np.asarray(self.intercepts, dtype=float)
            if not (a.shape == s.shape == c.shape and a.ndim == 2 and a.shape[1] == m):
                raise ValueError("ensemble arrays must all have shape (iterations, n_classes)")
            for arr in (a, s, c):
                arr.setflags(write=False)
            object.__setattr__(self, "attrs", a)
            object.__setattr__(self, "slopes", s)
            object.__setattr__(self, "intercepts", c)

    @property
    def iterations(self) -> int:
        if self.weak_kind == SIMPLE_LINEAR:
            return self.attrs.shape[0]
        return len(self.learners)

    @property
    def ensemble(self) -> list[list]:
        """Per-iteration list of per-class weak learners."""
        if self.weak_kind == SIMPLE_LINEAR:
            return [[SimpleLinear(int(a), float(s), float(c)) for a, s, c in zip(ra, rs, rc)]
                    for ra, rs, rc in zip(self.attrs, self.slopes, self.intercepts)]
        return [list(step) for step in self.learners]

    def truncated(self, iterations: int) -> AdditiveLogisticModel:
        if iterations > self.iterations:
            raise ValueError("cannot truncate beyond the fitted iteration count")
        if self.weak_kind == SIMPLE_LINEAR:
            return AdditiveLogisticModel(self.n_classes, self.weak_kind, self.attrs[:iterations],
                                         self.slopes[:iterations], self.intercepts[:iterations])
        return AdditiveLogisticModel(self.n_classes, self.weak_kind, learners=self.learners[:iterations])

    def decision_function(self, X, F0=None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        F = np.zeros((X.shape[0], self.n_classes)) if F0 is None else np.array(F0, dtype=float)
        if self.weak_kind == SIMPLE_LINEAR:
            if self.iterations == 0:
                return F
            return _kernels.eval_linear(X, self.attrs, self.slopes, self.intercepts, F)
        for step in self.learners:
            _center_add(F, [lrn.predict(X) for lrn in step])
        return F

    def predict_proba(self, X) -> np.ndarray:
        return softmax_probs(self.decision_function(X))

    def to_dict(self) -> dict:
        d = {"n_classes": self.n_classes, "weak_kind": self.weak_kind}
        if self.weak_kind == SIMPLE_LINEAR:
            d.update(attrs=self.attrs.tolist(), slopes=self.slopes.tolist(),
                     intercepts=self.intercepts.tolist())
        else:
            d["learners"] = [[lrn.to_dict() for lrn in step] for step in self.learners]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AdditiveLogisticModel:
        m = int(d["n_classes"])
        kind = d["weak_kind"]
        if kind == SIMPLE_LINEAR:
            return cls(m, kind, np.asarray(d["attrs"], dtype=np.int64).reshape(-1, m),
                       np.asarray(d["slopes"], dtype=float).reshape(-1, m),
                       np.asarray(d["intercepts"], dtype=float).reshape(-1, m))
        steps = tuple(tuple(learner_from_dict(x) for x in step) for step in d["learners"])
        return cls(m, kind, learners=steps)


def linear_model(intercepts, slopes, attribute: int = 0) -> AdditiveLogisticModel:
    """One-iteration model with ``F_j(x) = intercepts[j] + slopes[j] * x[attribute]``.

    Both coefficient vectors must sum to zero; the stored raw step is scaled
    by ``m/(m-1)`` so that centering reproduces them.
    """
    c = np.asarray(intercepts, dtype=float)
    s = np.asarray(slopes, dtype=float)
    m = c.size
    if s.size != m or m < 2:
        raise ValueError("need one intercept and one slope per class (at least two classes)")
    if abs(c.sum()) > 1e-12 or abs(s.sum()) > 1e-12:
        raise ValueError("per-class functions must sum to zero")
    k = m / (m - 1.0)
    return AdditiveLogisticModel(m, SIMPLE_LINEAR, np.full((1, m), attribute), (s * k)[None, :], (c * k)[None, :])


def _concat(model: AdditiveLogisticModel, attrs, slopes, icpts, learners) -> AdditiveLogisticModel:
    if model.weak_kind == SIMPLE_LINEAR:
        return AdditiveLogisticModel(model.n_classes, SIMPLE_LINEAR,
                                     np.vstack([model.attrs, attrs]),
                                     np.vstack([model.slopes, slopes]),
                                     np.vstack([model.intercepts, icpts]))
    return AdditiveLogisticModel(model.n_classes, model.weak_kind, learners=model.learners + tuple(learners))


@dataclass(frozen=True, eq=False)
class BoostState:
    """Working state of a boosting run on a fixed set of rows."""

    F: np.ndarray
    model: AdditiveLogisticModel

    @property
    def iteration(self) -> int:
        return self.model.iterations

    @property
    def probs(self) -> np.ndarray:
        return np.clip(softmax_probs(self.F), P_CLIP, 1.0 - P_CLIP)

    @classmethod
    def initial(cls, n: int, m: int, weak_kind: str = SIMPLE_LINEAR) -> BoostState:
        return cls(np.zeros((n, m)), AdditiveLogisticModel(m, weak_kind))

    @classmethod
    def from_model(cls, model: AdditiveLogisticModel, X) -> BoostState:
        return cls(model.decision_function(X), model)


def _boost_generic(X, Y, F, n_iter, weak_kind, z_max, w_min, start_iter=0):
    n, m = Y.shape
    order = presort(X) if X.shape[0] else None
    steps = []
    for it in range(n_iter):
        P = np.clip(softmax_probs(F), P_CLIP, 1.0 - P_CLIP)
        step = []
        for j in range(m):
            if m == 2 and j == 1:
                step.append(_negate(step[0]))
                continue
            z, w = working_response(Y[:, j], P[:, j], z_max, w_min)
            if weak_kind == STUMP:
                step.append(fit_stump(X, z, w, order))
            else:
                step.append(fit_regression_tree(X, z, w, TREE_DEPTH, order))
        _center_add(F, [lrn.predict(X) for lrn in step])
        if not np.isfinite(F).all():
            raise BoostingError(f"non-finite scores at boosting iteration {start_iter + it + 1}")
        steps.append(tuple(step))
    return F, steps


def _negate(lrn):
    if isinstance(lrn, Stump):
        return Stump(lrn.attribute, lrn.threshold, -lrn.left, -lrn.right)
    return RegressionTree(lrn.feature, lrn.threshold, lrn.left, lrn.right, tuple(-v for v in lrn.value))


def boost(state: BoostState, X, labels, iterations: int, z_max=Z_MAX, w_min=W_MIN) -> BoostState:
    """Run ``iterations`` further LogitBoost iterations from ``state``."""
    if iterations < 0:
        raise ValueError("iteration count must be nonnegative")
    X = np.ascontiguousarray(X, dtype=float)
    model = state.model
    m = model.n_classes
    Y = one_hot(labels, m)
    if X.shape[0] != state.F.shape[0] or Y.shape[0] != X.shape[0]:
        raise ValueError("state, features and labels disagree on the number of rows")
    if iterations == 0:
        return state
    if X.shape[0] == 0:
        raise ValueError("cannot boost on an empty set of rows")
    if model.weak_kind == SIMPLE_LINEAR:
        if X.shape[1] == 0:
            raise ValueError("simple linear boosting needs at least one attribute")
        attrs, slopes, icpts, F, bad = _kernels.boost_linear(
            X, Y, np.ascontiguousarray(state.F), iterations, z_max, w_min, P_CLIP)
        if bad >= 0:
            raise BoostingError(f"non-finite scores at boosting iteration {model.iterations + bad + 1}")
        return BoostState(F, _concat(model, attrs, slopes, icpts, None))
    F, steps = _boost_generic(X, Y, np.array(state.F), iterations, model.weak_kind, z_max, w_min,
                              model.iterations)
    return BoostState(F, _concat(model, None, None, None, steps))


def logitboost_iterate(state: BoostState, X, labels, weak_kind: str | None = None) -> BoostState:
    """One LogitBoost iteration: fit one weak learner per class and update F."""
    if weak_kind is not None and weak_kind != state.model.weak_kind:
        raise ValueError("weak learner kind differs from the state's model")
    return boost(state, X, labels, 1)


def fit_additive_model(X, labels, iterations: int, weak_kind: str = SIMPLE_LINEAR,
                       n_classes: int | None = None) -> AdditiveLogisticModel:
    X = np.ascontiguousarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    m = int(labels.max()) + 1 if n_classes is None else n_classes
    m = max(m, 2)
    state = BoostState.initial(X.shape[0], m, weak_kind)
    return boost(state, X, labels, iterations).model


def continue_boosting(model: AdditiveLogisticModel, X, labels, iterations: int) -> AdditiveLogisticModel:
    """Warm start: evaluate ``model`` on the rows, then boost further on them only."""
    return boost(BoostState.from_model(model, X), X, labels, iterations).model


def rmse_path(model: AdditiveLogisticModel, X, labels) -> np.ndarray:
    """RMSE on (X, labels) after each iteration of ``model``."""
    X = np.ascontiguousarray(X, dtype=float)
    Y = one_hot(labels, model.n_classes)
    if model.weak_kind == SIMPLE_LINEAR:
        return _kernels.linear_rmse_path(X, Y, model.attrs, model.slopes, model.intercepts)
    F = np.zeros(Y.shape)
    out = np.empty(model.iterations)
    for k, step in enumerate(model.learners):
        _center_add(F, [lrn.predict(X) for lrn in step])
        out[k] = np.sqrt(((softmax_probs(F) - Y) ** 2).mean())
    return out


def cv_rmse_curve(X, labels, max_iter: int = 200, folds: int = 5, seed: int = 0,
                  weak_kind: str = SIMPLE_LINEAR, n_classes: int | None = None) -> np.ndarray:
    """Mean held-out RMSE after 1..max_iter iterations over stratified folds."""
    X = np.ascontiguousarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if folds < 2:
        raise ValueError("need at least two folds")
    if X.shape[0] < folds:
        raise ValueError(f"{X.shape[0]} instances cannot fill {folds} folds")
    m = max(int(labels.max()) + 1 if n_classes is None else n_classes, 2)
    fa = stratified_folds(labels, folds, seed)
    total = np.zeros(max_iter)
    for train, test in fa:
        model = fit_additive_model(X[train], labels[train], max_iter, weak_kind, m)
        total += rmse_path(model, X[test], labels[test])
    return total / folds


def select_iterations_cv(X, labels, max_iter: int = 200, folds: int = 5, seed: int = 0,
                         weak_kind: str = SIMPLE_LINEAR, n_classes: int | None = None) -> int:
    """Iteration count with the lowest mean cross-validated RMSE (ties: fewest)."""
    curve = cv_rmse_curve(X, labels, max_iter, folds, seed, weak_kind, n_classes)
    return int(np.argmin(curve)) + 1
