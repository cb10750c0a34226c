"""Global calibration baselines: Platt scaling and isotonic regression.

Both are binary methods.  Multiclass problems are decomposed one-vs-rest and
the per-class outputs renormalised to sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels

LOGODDS_CLIP = 1e-7
PROBABILITY = "probability"
MARGIN = "margin"


def platt_targets(labels) -> np.ndarray:
    """Soft targets ``(N+ + 1)/(N+ + 2)`` for positives, ``1/(N- + 2)`` for negatives."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("no labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    return np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def logodds_transform(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), LOGODDS_CLIP, 1.0 - LOGODDS_CLIP)
    return np.log(p / (1.0 - p))


def assemble_score_vector(per_class_outputs, kind: str = PROBABILITY) -> np.ndarray:
    """Build the score vector fed to calibrators.

    Probabilities are mapped to log-odds component-wise; margins pass through
    unchanged.  Works on a single vector or on an (n, m) matrix.
    """
    s = np.asarray(per_class_outputs, dtype=float)
    if not np.isfinite(s).all():
        raise ValueError("score vector contains non-finite values")
    if kind == PROBABILITY:
        if s.shape[-1] < 2:
            raise ValueError("probability outputs need one entry per class (at least two)")
        return logodds_transform(s)
    if kind == MARGIN:
        return s.copy()
    raise ValueError(f"unknown score kind {kind!r}")


# ---------------------------------------------------------------------------
# Platt scaling
# ---------------------------------------------------------------------------


def _design(scores):
    s = np.asarray(scores, dtype=float)
    return s[:, None] if s.ndim == 1 else s


def platt_loss_grad(params, scores, targets):
    """Mean soft-label cross-entropy and its gradient; ``params = (w..., b)``."""
    S = _design(scores)
    t = np.asarray(targets, dtype=float)
    params = np.asarray(params, dtype=float)
    eta = S @ params[:-1] + params[-1]
    # log(1 + e^eta) - t*eta, evaluated stably
    loss = np.mean(np.logaddexp(0.0, eta) - t * eta)
    r = expit(eta) - t
    grad = np.append(S.T @ r, r.sum()) / S.shape[0]
    return float(loss), grad


@dataclass(frozen=True, eq=False)
class PlattModel:
    weights: np.ndarray
    bias: float
    iterations: int = 0

    def linear(self, scores) -> np.ndarray:
        return _design(scores) @ np.asarray(self.weights) + self.bias

    def to_dict(self):
        return {"weights": np.asarray(self.weights).tolist(), "bias": self.bias, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), int(d.get("iterations", 0)))


def fit_platt(scores, labels, max_newton: int = 100, tol: float = 1e-9) -> PlattModel:
    """Logistic regression of Platt's soft targets on the scores, by damped Newton."""
    S = _design(scores)
    labels = np.asarray(labels)
    n, d = S.shape
    if n < 2:
        raise ValueError("Platt scaling needs at least two instances")
    t = platt_targets(labels)
    active = S.max(axis=0) > S.min(axis=0)
    w = np.zeros(d)
    tbar = t.mean()
    b = float(np.log(tbar / (1.0 - tbar)))
    if not active.any():
        return PlattModel(w, b, 0)
    Sa = S[:, active]
    theta = np.zeros(Sa.shape[1] + 1)
    theta[-1] = b
    loss, grad = platt_loss_grad(theta, Sa, t)
    it = 0
    for it in range(1, max_newton + 1):
        if np.abs(grad).max() < tol:
            it -= 1
            break
        eta = Sa @ theta[:-1] + theta[-1]
        q = expit(eta)
        h = q * (1.0 - q)
        A = np.column_stack([Sa, np.ones(n)])
        H = (A * h[:, None]).T @ A / n
        H[np.diag_indices_from(H)] += 1e-12
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad
        lam = 1.0
        while True:
            cand = theta - lam * step
            c_loss, c_grad = platt_loss_grad(cand, Sa, t)
            if c_loss <= loss + 1e-4 * lam * float(grad @ -step) or lam < 1e-10:
                break
            lam *= 0.5
        if not np.isfinite(cand).all():
            raise FloatingPointError(f"non-finite Platt parameters at Newton step {it}")
        theta, loss, grad = cand, c_loss, c_grad
    w[active] = theta[:-1]
    return PlattModel(w, float(theta[-1]), it)


def apply_platt(model: PlattModel, scores) -> np.ndarray:
    """Binary calibrated probabilities as an (n, 2) matrix ``[1-p, p]``."""
    p = expit(model.linear(scores))
    return np.column_stack([1.0 - p, p])


# ---------------------------------------------------------------------------
# isotonic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IsotonicModel:
    """Left-closed step function: ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, scores) -> np.ndarray:
        return apply_isotonic(self, scores)

    def to_dict(self):
        return {"breakpoints": np.asarray(self.breakpoints).tolist(), "values": np.asarray(self.values).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["breakpoints"], dtype=float), np.asarray(d["values"], dtype=float))


def pool_ties(scores, targets, weights=None):
    """Sort by score and merge equal scores into one weighted point."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(targets, dtype=float)
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    uniq, inv = np.unique(s, return_inverse=True)
    wsum = np.bincount(inv, weights=w, minlength=uniq.size)
    ysum = np.bincount(inv, weights=w * y, minlength=uniq.size)
    return uniq, ysum / wsum, wsum


def pav_fit(scores, targets, weights=None) -> IsotonicModel:
    """Monotone non-decreasing weighted least-squares fit by pool adjacent violators."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("isotonic regression needs at least one point")
    x, y, w = pool_ties(scores, targets, weights)
    vals, _, ends = _kernels.pav(y, w)
    starts = np.concatenate([[0], ends[:-1]])
    return IsotonicModel(x[starts], np.clip(vals, 0.0, 1.0))


def isotonic_fitted_values(model: IsotonicModel, scores) -> np.ndarray:
    return apply_isotonic(model, scores)


def apply_isotonic(model: IsotonicModel, scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    k = np.searchsorted(model.breakpoints, s, side="right") - 1
    return np.asarray(model.values)[np.clip(k, 0, len(model.values) - 1)]


# ---------------------------------------------------------------------------
# one-vs-rest
# ---------------------------------------------------------------------------


def normalize_rows(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    tot = P.sum(axis=1, keepdims=True)
    m = P.shape[1]
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, P / safe, 1.0 / m)


@dataclass(frozen=True, eq=False)
class OvRCalibrator:
    """One binary calibrator per class, applied to that class's score column."""

    kind: str  # "platt" or "isotonic"
    models: tuple

    def raw(self, scores) -> np.ndarray:
        S = _design(scores)
        if S.shape[1] != len(self.models):
            raise ValueError(f"expected {len(self.models)} score columns, got {S.shape[1]}")
        cols = []
        for j, mdl in enumerate(self.models):
            if self.kind == "platt":
                cols.append(apply_platt(mdl, S[:, j])[:, 1])
            else:
                cols.append(apply_isotonic(mdl, S[:, j]))
        return np.column_stack(cols)

    def __call__(self, scores) -> np.ndarray:
        return ovr_calibrate(self, scores)


def ovr_calibrate(cal: OvRCalibrator, scores) -> np.ndarray:
    """Apply each class's calibrator and renormalise; all-zero rows become uniform."""
    return normalize_rows(cal.raw(scores))


def fit_ovr(kind: str, scores, labels) -> OvRCalibrator:
    S = _design(scores)
    labels = np.asarray(labels)
    models = []
    for j in range(S.shape[1]):
        yj = (labels == j).astype(float)
        if kind == "platt":
            models.append(fit_platt(S[:, j], yj))
        else:
            models.append(pav_fit(S[:, j], yj))
    return OvRCalibrator(kind, tuple(models))


# ---------------------------------------------------------------------------
# calibrators over score tables
# ---------------------------------------------------------------------------


def _positive_column(S):
    # binary: one column is the positive-class score; two columns, take class 1
    return S[:, 0] if S.shape[1] == 1 else S[:, 1]


class PlattCalibrator:
    """Platt scaling on log-odds (probability scores) or raw margins."""

    method = "platt"

    def __init__(self, score_kind: str = PROBABILITY):
        self.score_kind = score_kind
        self.n_classes = None
        self.model = None

    def _inputs(self, scores):
        S = _design(scores)
        return logodds_transform(S) if self.score_kind == PROBABILITY else S

    def fit(self, attrs, scores, labels) -> PlattCalibrator:
        S = self._inputs(scores)
        labels = np.asarray(labels)
        self.n_classes = max(2, S.shape[1])
        if self.n_classes == 2:
            self.model = fit_platt(_positive_column(S), labels)
        else:
            self.model = fit_ovr("platt", S, labels)
        return self

    def predict_proba(self, attrs, scores) -> np.ndarray:
        S = self._inputs(scores)
        if self.n_classes == 2:
            return apply_platt(self.model, _positive_column(S))
        return ovr_calibrate(self.model, S)

    def to_dict(self):
        d = {"method": self.method, "score_kind": self.score_kind, "n_classes": self.n_classes}
        if self.n_classes == 2:
            d["model"] = self.model.to_dict()
        else:
            d["models"] = [m.to_dict() for m in self.model.models]
        return d

    @classmethod
    def from_dict(cls, d):
        c = cls(d["score_kind"])
        c.n_classes = int(d["n_classes"])
        if c.n_classes == 2:
            c.model = PlattModel.from_dict(d["model"])
        else:
            c.model = OvRCalibrator("platt", tuple(PlattModel.from_dict(x) for x in d["models"]))
        return c


class IsotonicCalibrator:
    """Isotonic regression on raw scores (probabilities are not transformed)."""

    method = "isotonic"

    def __init__(self, score_kind: str = PROBABILITY):
        self.score_kind = score_kind
        self.n_classes = None
        self.model = None

    def fit(self, attrs, scores, labels) -> IsotonicCalibrator:
        S = _design(scores)
        labels = np.asarray(labels)
        self.n_classes = max(2, S.shape[1])
        if self.n_classes == 2:
            self.model = pav_fit(_positive_column(S), (labels == 1).astype(float))
        else:
            self.model = fit_ovr("isotonic", S, labels)
        return self

    def predict_proba(self, attrs, scores) -> np.ndarray:
        S = _design(scores)
        if self.n_classes == 2:
            p = apply_isotonic(self.model, _positive_column(S))
            return np.column_stack([1.0 - p, p])
        return ovr_calibrate(self.model, S)

    def to_dict(self):
        d = {"method": self.method, "score_kind": self.score_kind, "n_classes": self.n_classes}
        if self.n_classes == 2:
            d["model"] = self.model.to_dict()
        else:
            d["models"] = [m.to_dict() for m in self.model.models]
        return d

    @classmethod
    def from_dict(cls, d):
        c = cls(d["score_kind"])
        c.n_classes = int(d["n_classes"])
        if c.n_classes == 2:
            c.model = IsotonicModel.from_dict(d["model"])
        else:
            c.model = OvRCalibrator("isotonic", tuple(IsotonicModel.from_dict(x) for x in d["models"]))
        return c
