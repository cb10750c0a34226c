"""Probability calibration trees.

The tree structure is grown on the original attributes with C4.5-style gain
ratio splits on the class labels.  Every node holds an additive logistic
model over the base learner's output scores; a child starts from its
parent's model and boosts further on its own records only.  The grown tree
is pruned by cost-complexity on squared error, with the complexity penalty
chosen by cross-validation.  Only leaf models are used to calibrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .calibrators import PROBABILITY, logodds_transform
from .data import Attribute, stratified_folds, derive_seed
from .logitboost import (
    AdditiveLogisticModel,
    BoostState,
    SIMPLE_LINEAR,
    boost,
    one_hot,
    select_iterations_cv,
    softmax_probs,
)

MIN_INSTANCES = 15
MIN_BRANCH = 2
PRUNE_FOLDS = 5
ITERATION_FOLDS = 5
MAX_ITERATIONS = 200


@dataclass(frozen=True, eq=False)
class ScoreRecords:
    """Column-wise training records: original attributes, score vectors, labels.

    ``A`` holds imputed original attribute values (category index for
    categorical attributes); ``S`` holds the transformed score vectors.
    """

    attributes: tuple[Attribute, ...]
    A: np.ndarray
    S: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        S = np.ascontiguousarray(self.S, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        y = np.asarray(self.y, dtype=np.int64)
        if A.shape[0] != S.shape[0] or y.shape[0] != S.shape[0]:
            raise ValueError("attributes, scores and labels must be row-aligned")
        if A.shape[1] != len(self.attributes):
            raise ValueError("attribute matrix does not match the schema")
        if not np.isfinite(S).all():
            raise ValueError("score vectors must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def subset(self, idx) -> ScoreRecords:
        return ScoreRecords(self.attributes, self.A[idx], self.S[idx], self.y[idx], self.n_classes)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    """Numeric split (``threshold`` set, ``<=`` goes to child 0) or multiway categorical split.

    For categorical splits ``branches[v]`` is the child index for value ``v``;
    values unseen in training share the branch of the most frequent value.
    """

    attribute: int
    threshold: float | None = None
    branches: tuple[int, ...] | None = None
    default_branch: int = 0

    @property
    def is_numeric(self) -> bool:
        return self.threshold is not None

    @property
    def n_children(self) -> int:
        return 2 if self.is_numeric else max(self.branches) + 1

    def route(self, col: np.ndarray) -> np.ndarray:
        if self.is_numeric:
            return np.where(col <= self.threshold, 0, 1)
        br = np.asarray(self.branches)
        out = np.full(col.shape[0], self.default_branch, dtype=np.int64)
        ok = np.isfinite(col)
        idx = np.where(ok, col, -1).astype(np.int64)
        ok &= (idx >= 0) & (idx < br.size)
        out[ok] = br[idx[ok]]
        return out

    def to_dict(self):
        return {"attribute": self.attribute, "threshold": self.threshold,
                "branches": None if self.branches is None else list(self.branches),
                "default_branch": self.default_branch}

    @classmethod
    def from_dict(cls, d):
        br = d.get("branches")
        return cls(int(d["attribute"]), None if d.get("threshold") is None else float(d["threshold"]),
                   None if br is None else tuple(int(b) for b in br), int(d.get("default_branch", 0)))


def _entropy(counts) -> float:
    tot = counts.sum()
    if tot <= 0:
        return 0.0
    q = counts[counts > 0] / tot
    return float(-(q * np.log2(q)).sum())


def best_split(records: ScoreRecords, min_branch: int = MIN_BRANCH) -> Split | None:
    """C4.5 split choice on the original attributes.

    Each numeric attribute contributes its best midpoint threshold by
    information gain; each categorical attribute a multiway split.  A
    candidate needs positive gain and at least ``min_branch`` instances in
    two or more branches.  Among candidates whose gain reaches the average
    candidate gain, the highest gain ratio wins (lowest attribute on ties).
    """
    A, y, m = records.A, records.y, records.n_classes
    n = y.shape[0]
    if n < 2 * min_branch:
        return None
    parent = np.bincount(y, minlength=m).astype(float)
    h_parent = _entropy(parent)
    if h_parent <= 0.0:
        return None
    cands = []  # (gain, ratio, attribute, split)
    for k, attr in enumerate(records.attributes):
        col = A[:, k]
        if attr.is_numeric:
            order = np.argsort(col, kind="stable")
            xs = np.ascontiguousarray(col[order])
            if xs[0] == xs[-1]:
                continue
            gain, pos, si = _kernels.entropy_split(xs, np.ascontiguousarray(y[order]), m, min_branch)
            if pos < 0 or gain <= 1e-12 or si <= 0.0:
                continue
            thr = 0.5 * (xs[pos] + xs[pos + 1])
            if not xs[pos] < thr < xs[pos + 1]:
                thr = xs[pos]
            cands.append((gain, gain / si, k, Split(k, threshold=float(thr))))
        else:
            v = len(attr.values)
            idx = col.astype(np.int64)
            counts = np.bincount(idx * m + y, minlength=v * m).reshape(v, m).astype(float)
            sizes = counts.sum(axis=1)
            if (sizes >= min_branch).sum() < 2:
                continue
            present = np.flatnonzero(sizes > 0)
            cond = sum(sizes[i] / n * _entropy(counts[i]) for i in present)
            gain = h_parent - cond
            if gain <= 1e-12:
                continue
            fr = sizes[present] / n
            si = float(-(fr * np.log2(fr)).sum())
            child_of = {int(val): c for c, val in enumerate(present)}
            major = int(present[np.argmax(sizes[present])])
            default = child_of[major]
            branches = tuple(child_of.get(val, default) for val in range(v))
            cands.append((gain, gain / si, k, Split(k, branches=branches, default_branch=default)))
    if not cands:
        return None
    avg = sum(c[0] for c in cands) / len(cands)
    best = None
    for gain, ratio, k, sp in cands:
        if gain < avg - 1e-12:
            continue
        if best is None or ratio > best[0] + 1e-12:
            best = (ratio, sp)
    return best[1]


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Node:
    model: AdditiveLogisticModel
    n: int
    sq_error: float  # summed squared error of this node's model on its records
    split: Split | None = None
    children: list[Node] = field(default_factory=list)
    id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass(eq=False)
class CalibrationTree:
    root: Node
    attributes: tuple[Attribute, ...]
    n_classes: int
    iterations: int

    def __post_init__(self):
        self.renumber()

    def renumber(self):
        for i, node in enumerate(self.root.walk()):
            node.id = i

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    def leaves(self) -> list[Node]:
        return [nd for nd in self.root.walk() if nd.is_leaf]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def route(self, A) -> np.ndarray:
        """Leaf node id reached by every row of ``A``."""
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A[None, :]
        out = np.empty(A.shape[0], dtype=np.int64)

        def down(node, rows):
            if node.is_leaf:
                out[rows] = node.id
                return
            br = node.split.route(A[rows, node.split.attribute])
            for c, child in enumerate(node.children):
                sel = rows[br == c]
                if sel.size:
                    down(child, sel)

        down(self.root, np.arange(A.shape[0]))
        return out

    def predict_proba(self, A, S) -> np.ndarray:
        return calibrate(self, A, S)

    def depth(self) -> int:
        def d(nd):
            return 0 if nd.is_leaf else 1 + max(d(c) for c in nd.children)

        return d(self.root)

    def structure(self):
        """Nested tuples of split attributes; leaves are ``None``."""
        def s(nd):
            if nd.is_leaf:
                return None
            return (nd.split.attribute, tuple(s(c) for c in nd.children))

        return s(self.root)

    # serialization: a node extending its parent's ensemble stores only the added iterations
    def to_dict(self) -> dict:
        def enc(node, parent):
            model = node.model
            delta = model.to_dict()
            extends = parent is not None and parent.iterations <= model.iterations and all(
                np.array_equal(getattr(model, k)[: parent.iterations], getattr(parent, k))
                for k in ("attrs", "slopes", "intercepts"))
            if extends:
                for key in ("attrs", "slopes", "intercepts"):
                    delta[key] = delta[key][parent.iterations:]
            return {
                "extends_parent": extends,
                "n": node.n,
                "sq_error": node.sq_error,
                "leaf": node.is_leaf,
                "split": None if node.split is None else node.split.to_dict(),
                "model": delta,
                "children": [enc(c, model) for c in node.children],
            }

        return {
            "attributes": [a.to_dict() for a in self.attributes],
            "n_classes": self.n_classes,
            "iterations": self.iterations,
            "root": enc(self.root, None),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CalibrationTree:
        def dec(nd, parent: AdditiveLogisticModel | None):
            delta = AdditiveLogisticModel.from_dict(nd["model"])
            if parent is None or not nd.get("extends_parent", True):
                model = delta
            else:
                model = AdditiveLogisticModel(
                    parent.n_classes, SIMPLE_LINEAR,
                    np.vstack([parent.attrs, delta.attrs]),
                    np.vstack([parent.slopes, delta.slopes]),
                    np.vstack([parent.intercepts, delta.intercepts]))
            node = Node(model, int(nd["n"]), float(nd["sq_error"]),
                        None if nd["split"] is None else Split.from_dict(nd["split"]))
            node.children = [dec(c, model) for c in nd["children"]]
            return node

        return cls(dec(d["root"], None), tuple(Attribute.from_dict(a) for a in d["attributes"]),
                   int(d["n_classes"]), int(d["iterations"]))


def calibrate(tree: CalibrationTree, A, S) -> np.ndarray:
    """Route rows by original attributes and apply the reached leaf's model."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if S.ndim == 1:
        S = S[None, :] if A.shape[0] == 1 else S[:, None]
    if A.shape[1] != len(tree.attributes):
        raise ValueError(f"expected {len(tree.attributes)} attributes, got {A.shape[1]}")
    leaf_ids = tree.route(A)
    nodes = tree.nodes()
    out = np.empty((S.shape[0], tree.n_classes))
    for lid in np.unique(leaf_ids):
        rows = np.flatnonzero(leaf_ids == lid)
        out[rows] = nodes[lid].model.predict_proba(S[rows])
    return out


def _sq_error(F, Y) -> float:
    return float(((softmax_probs(F) - Y) ** 2).sum())


def grow_tree(records: ScoreRecords, iteration_count: int, min_instances: int = MIN_INSTANCES,
              initial: AdditiveLogisticModel | None = None) -> CalibrationTree:
    """Grow an unpruned tree; every node boosts ``iteration_count`` more iterations."""
    if records.n == 0:
        raise ValueError("cannot grow a tree without records")
    m = records.n_classes
    Y = one_hot(records.y, m)

    def build(rows, state: BoostState) -> Node:
        sub = records.subset(rows)
        state = boost(state, sub.S, sub.y, iteration_count)
        node = Node(state.model, rows.size, _sq_error(state.F, Y[rows]))
        if rows.size < min_instances or np.unique(sub.y).size < 2:
            return node
        split = best_split(sub)
        if split is None:
            return node
        branch = split.route(sub.A[:, split.attribute])
        node.split = split
        for c in range(split.n_children):
            sel = np.flatnonzero(branch == c)
            node.children.append(build(rows[sel], BoostState(state.F[sel], state.model)))
        return node

    if initial is None:
        start = BoostState.initial(records.n, m)
    else:
        start = BoostState.from_model(initial, records.S)
    root = build(np.arange(records.n), start)
    return CalibrationTree(root, records.attributes, m, iteration_count)


# ---------------------------------------------------------------------------
# cost-complexity pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruningRecord:
    alphas: tuple[float, ...]
    cv_rmse: tuple[float, ...]
    n_leaves: tuple[int, ...]
    chosen: int

    def to_dict(self):
        return {"alphas": [a if math.isfinite(a) else str(a) for a in self.alphas],
                "cv_rmse": list(self.cv_rmse), "n_leaves": list(self.n_leaves), "chosen": self.chosen}


def _subtree_stats(node):
    """(summed leaf squared error, leaf count) of the subtree below ``node``."""
    if node.is_leaf:
        return node.sq_error, 1
    err, cnt = 0.0, 0
    for c in node.children:
        e, k = _subtree_stats(c)
        err += e
        cnt += k
    return err, cnt


def pruning_sequence(tree: CalibrationTree) -> tuple[list[float], list[frozenset]]:
    """Weakest-link sequence from the full tree to the root.

    Returns strictly increasing alphas (the first is ``-inf`` for the
    unpruned tree) and, per alpha, the set of node ids turned into leaves.
    Alphas are in units of summed squared error per leaf.
    """
    collapsed: set[int] = set()
    alphas = [-math.inf]
    cuts = [frozenset()]

    def internal(node):
        if node.is_leaf or node.id in collapsed:
            return
        yield node
        for c in node.children:
            yield from internal(c)

    def stats(node):
        if node.is_leaf or node.id in collapsed:
            return node.sq_error, 1
        err, cnt = 0.0, 0
        for c in node.children:
            e, k = stats(c)
            err += e
            cnt += k
        return err, cnt

    while tree.root.id not in collapsed and not tree.root.is_leaf:
        g = {}
        for nd in internal(tree.root):
            err, cnt = stats(nd)
            g[nd.id] = ((nd.sq_error - err) / (cnt - 1), nd)
        alpha = min(v[0] for v in g.values())
        tol = 1e-12 * (abs(alpha) + 1.0)
        for val, nd in g.values():
            if val <= alpha + tol:
                collapsed.add(nd.id)
        if alpha <= alphas[-1] and len(alphas) > 1:
            cuts[-1] = frozenset(collapsed)
        else:
            alphas.append(max(alpha, alphas[-1]) if len(alphas) > 1 else alpha)
            cuts.append(frozenset(collapsed))
    return alphas, cuts


def collapse(tree: CalibrationTree, cut) -> CalibrationTree:
    """Copy of ``tree`` with the nodes in ``cut`` turned into leaves."""

    def copy(node):
        nd = Node(node.model, node.n, node.sq_error)
        if not node.is_leaf and node.id not in cut:
            nd.split = node.split
            nd.children = [copy(c) for c in node.children]
        return nd

    return CalibrationTree(copy(tree.root), tree.attributes, tree.n_classes, tree.iterations)


def _representative_alphas(alphas):
    reps = []
    for k, a in enumerate(alphas):
        if k == 0:
            reps.append(-math.inf)
        elif k == len(alphas) - 1:
            reps.append(math.inf)
        else:
            b = alphas[k + 1]
            reps.append(math.sqrt(a * b) if a > 0 else 0.5 * (a + b))
    return reps


def _subtree_at(alphas, cuts, beta):
    j = 0
    for k, a in enumerate(alphas):
        if a <= beta:
            j = k
    return cuts[j]


def prune_tree(tree: CalibrationTree, records: ScoreRecords, folds: int = PRUNE_FOLDS,
               seed: int = 0) -> tuple[CalibrationTree, PruningRecord]:
    """Cost-complexity pruning with the penalty picked by k-fold CV RMSE.

    Each fold regrows a tree on its training part with the same per-node
    iteration count, prunes it at the representative alpha of every
    candidate, and scores the held-out part.  Ties go to the smaller tree.
    """
    alphas, cuts = pruning_sequence(tree)
    sizes = [collapse(tree, c).n_leaves for c in cuts]
    if len(alphas) == 1:
        return collapse(tree, cuts[0]), PruningRecord(tuple(alphas), (math.nan,), tuple(sizes), 0)
    n = records.n
    k = min(folds, n)
    m = records.n_classes
    err = np.zeros(len(alphas))
    reps = _representative_alphas(alphas)
    fa = stratified_folds(records.y, k, seed)
    for train, test in fa:
        if test.size == 0:
            continue
        ftree = grow_tree(records.subset(train), tree.iterations)
        f_alphas, f_cuts = pruning_sequence(ftree)
        Yt = one_hot(records.y[test], m)
        cache = {}
        for i, beta in enumerate(reps):
            cut = _subtree_at(f_alphas, f_cuts, beta)
            if cut not in cache:
                P = calibrate(collapse(ftree, cut), records.A[test], records.S[test])
                cache[cut] = float(((P - Yt) ** 2).sum())
            err[i] += cache[cut]
    cv = np.sqrt(err / (n * m))
    chosen = 0
    for i in range(1, len(cv)):
        if cv[i] <= cv[chosen] * (1.0 + 1e-12):
            chosen = i
    pruned = collapse(tree, cuts[chosen])
    return pruned, PruningRecord(tuple(alphas), tuple(float(v) for v in cv), tuple(sizes), chosen)


# ---------------------------------------------------------------------------
# full procedure
# ---------------------------------------------------------------------------


def fit_pct(training, scores=None, seed: int = 0, max_iter: int = MAX_ITERATIONS,
            iteration_folds: int = ITERATION_FOLDS, prune_folds: int = PRUNE_FOLDS,
            min_instances: int = MIN_INSTANCES, return_record: bool = False):
    """Select the per-node iteration count at the root, grow, then prune.

    Parameters
    ----------
    training : ScoreRecords or Dataset
        With a (imputed) ``Dataset``, ``scores`` supplies the row-aligned
        score vectors, already log-odds transformed where applicable.
    """
    if isinstance(training, ScoreRecords):
        records = training
    else:
        if scores is None:
            raise ValueError("scores are required when fitting from a Dataset")
        if training.has_missing():
            raise ValueError("impute missing values before fitting a calibration tree")
        records = ScoreRecords(training.attributes, training.X, scores, training.y, training.n_classes)
    n = records.n
    k = min(iteration_folds, n)
    if k >= 2:
        iters = select_iterations_cv(records.S, records.y, max_iter, k, derive_seed(seed, 1),
                                     n_classes=records.n_classes)
    else:
        iters = 0
    tree = grow_tree(records, iters, min_instances)
    if tree.root.is_leaf:
        rec = PruningRecord((-math.inf,), (math.nan,), (1,), 0)
        return (tree, rec) if return_record else tree
    pruned, rec = prune_tree(tree, records, prune_folds, derive_seed(seed, 2))
    return (pruned, rec) if return_record else pruned


class PCTCalibrator:
    """Probability calibration tree over (attributes, scores) inputs."""

    method = "pct"

    def __init__(self, attributes, score_kind: str = PROBABILITY, seed: int = 0, max_iter: int = MAX_ITERATIONS):
        self.attributes = tuple(attributes)
        self.score_kind = score_kind
        self.seed = seed
        self.max_iter = max_iter
        self.tree: CalibrationTree | None = None
        self.record: PruningRecord | None = None

    def _inputs(self, scores):
        S = np.asarray(scores, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        return logodds_transform(S) if self.score_kind == PROBABILITY else S

    def fit(self, A, scores, labels, n_classes: int | None = None) -> PCTCalibrator:
        labels = np.asarray(labels, dtype=np.int64)
        S = self._inputs(scores)
        m = n_classes or max(2, S.shape[1] if self.score_kind == PROBABILITY else int(labels.max()) + 1)
        recs = ScoreRecords(self.attributes, A, S, labels, m)
        self.tree, self.record = fit_pct(recs, seed=self.seed, max_iter=self.max_iter, return_record=True)
        return self

    def predict_proba(self, A, scores) -> np.ndarray:
        return calibrate(self.tree, A, self._inputs(scores))

    def to_dict(self):
        return {"method": self.method, "score_kind": self.score_kind, "seed": self.seed,
                "max_iter": self.max_iter, "tree": self.tree.to_dict(),
                "pruning": None if self.record is None else self.record.to_dict()}

    @classmethod
    def from_dict(cls, d):
        tree = CalibrationTree.from_dict(d["tree"])
        c = cls(tree.attributes, d["score_kind"], int(d.get("seed", 0)), int(d.get("max_iter", MAX_ITERATIONS)))
        c.tree = tree
        return c
