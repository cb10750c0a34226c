import math

import numpy as np
import pytest

from calibra import serialize
from calibra.calibrators import logodds_transform
from calibra.caltree import (
    CalibrationTree,
    Node,
    PCTCalibrator,
    ScoreRecords,
    Split,
    best_split,
    calibrate,
    collapse,
    fit_pct,
    grow_tree,
    prune_tree,
    pruning_sequence,
)
from calibra.data import Attribute
from calibra.evaluation import rmse
from calibra.logitboost import AdditiveLogisticModel, continue_boosting, fit_additive_model, linear_model

from conftest import two_region_data

BOOL = ("false", "true")


def entropy(labels):
    _, c = np.unique(labels, return_counts=True)
    q = c / c.sum()
    return float(-(q * np.log2(q)).sum())


def gain_ratio(labels, branches):
    """Textbook gain ratio; ``branches`` assigns each row to a branch."""
    n = len(labels)
    cond = split = 0.0
    for b in np.unique(branches):
        sel = branches == b
        f = sel.sum() / n
        cond += f * entropy(labels[sel])
        split -= f * math.log2(f)
    gain = entropy(labels) - cond
    return gain, gain / split


def records(A, S, y, kinds=None, m=2):
    A = np.asarray(A, dtype=float)
    if kinds is None:
        kinds = [None] * A.shape[1]
    attrs = tuple(Attribute(f"x{k + 1}", v) for k, v in enumerate(kinds))
    return ScoreRecords(attrs, A, np.asarray(S, dtype=float), np.asarray(y), m)


def example_tree():
    """Hand-built three-leaf tree over ten boolean attributes."""
    attrs = tuple(Attribute(f"x{k}", BOOL) for k in range(1, 11))
    empty = AdditiveLogisticModel(2)
    tt = linear_model([0.28, -0.28], [-0.61, 0.61])
    tf = linear_model([0.54, -0.54], [0.27, -0.27])
    right = linear_model([1.61, -1.61], [0.06, -0.06])
    # categorical branches are indexed by value: false -> child 0, true -> child 1
    x8 = Node(empty, 0, 0.0, Split(7, branches=(0, 1)), [Node(tf, 0, 0.0), Node(tt, 0, 0.0)])
    root = Node(empty, 0, 0.0, Split(4, branches=(0, 1)), [Node(right, 0, 0.0), x8])
    return CalibrationTree(root, attrs, 2, 1)


def example_instance(x5=True, x8=False):
    a = np.zeros(10)
    a[4], a[7] = float(x5), float(x8)
    return a


# -- splits -----------------------------------------------------------------------


def test_perfect_binary_attribute_chosen():
    A = [[0, 1], [0, 0], [0, 1], [1, 0], [1, 1], [1, 0]]
    r = records(A, np.zeros((6, 1)), [0, 0, 0, 1, 1, 1], kinds=[BOOL, BOOL])
    sp = best_split(r)
    assert sp.attribute == 0 and not sp.is_numeric


def test_xor_has_no_split():
    A = [[0, 0], [0, 1], [1, 0], [1, 1]] * 3
    y = [0, 1, 1, 0] * 3
    assert best_split(records(A, np.zeros((12, 1)), y, kinds=[BOOL, BOOL])) is None


def test_categorical_beats_weaker_numeric():
    cat = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2], dtype=float)
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1, 0])
    num = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12], dtype=float)[[0, 4, 1, 5, 2, 6, 3, 7, 8, 9, 10, 11]]
    r = records(np.column_stack([num, cat]), np.zeros((12, 1)), y, kinds=[None, ("a", "b", "c")])
    g_cat, gr_cat = gain_ratio(y, cat)
    best_num = max(gain_ratio(y, num <= t)[1] for t in np.unique(num)[:-1])
    assert gr_cat > best_num
    sp = best_split(r)
    assert sp.attribute == 1


def test_average_gain_filter():
    # x1 isolates four positives: higher ratio, below-average gain
    y = np.array([1] * 10 + [0] * 10)
    x1 = np.zeros(20)
    x1[:4] = 1
    x2 = np.array([1] * 8 + [0] * 2 + [1] * 2 + [0] * 8, dtype=float)
    g1, r1 = gain_ratio(y, x1)
    g2, r2 = gain_ratio(y, x2)
    assert r1 > r2 and g1 < (g1 + g2) / 2
    sp = best_split(records(np.column_stack([x1, x2]), np.zeros((20, 1)), y, kinds=[BOOL, BOOL]))
    assert sp.attribute == 1


def test_numeric_threshold_midpoint():
    x = np.array([1.0, 2.0, 3.0, 10.0, 11.0, 12.0])
    sp = best_split(records(x[:, None], np.zeros((6, 1)), [0, 0, 0, 1, 1, 1]))
    assert sp.threshold == 6.5


def test_split_needs_two_per_branch():
    x = np.array([1.0, 2.0, 2.0, 2.0, 2.0])
    assert best_split(records(x[:, None], np.zeros((5, 1)), [1, 0, 0, 0, 0])) is None


def test_unseen_value_routes_to_majority():
    sp = Split(0, branches=(0, 1, 1), default_branch=1)
    np.testing.assert_array_equal(sp.route(np.array([0.0, 1.0, 3.0, np.nan])), [0, 1, 1, 1])


# -- growing --------------------------------------------------------------------------


def test_fourteen_records_single_node(rng):
    A = rng.random((14, 2))
    S = rng.normal(size=(14, 1))
    y = np.arange(14) % 2
    t = grow_tree(records(A, S, y), 5)
    assert t.root.is_leaf
    glob = fit_additive_model(S, y, 5)
    np.testing.assert_array_equal(calibrate(t, A, S), glob.predict_proba(S))


def test_pure_node_is_leaf(rng):
    A = rng.random((40, 2))
    t = grow_tree(records(A, rng.normal(size=(40, 1)), np.ones(40, dtype=int)), 3)
    assert t.root.is_leaf


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        grow_tree(records(np.empty((0, 1)), np.empty((0, 1)), np.empty(0, dtype=int)), 3)


def _region_records(rng, n=400):
    A, y = two_region_data(n, rng)
    return records(A, np.zeros((n, 1)), y)


def test_constant_scores_tree_beats_constant(rng):
    r = _region_records(rng)
    t = grow_tree(r, 10)
    assert not t.root.is_leaf
    leaf_models = {tuple(nd.model.intercepts[-1]) for nd in t.leaves()}
    assert len(leaf_models) > 1
    best_const = rmse(np.tile(np.bincount(r.y) / r.n, (r.n, 1)), r.y)
    assert rmse(calibrate(t, r.A, r.S), r.y) < best_const


def test_leaf_partition(rng):
    r = _region_records(rng)
    t = grow_tree(r, 4)
    ids = t.route(r.A)
    leaves = {nd.id for nd in t.leaves()}
    assert set(ids) <= leaves
    assert sum(nd.n for nd in t.leaves()) == r.n
    for nd in t.leaves():
        assert (ids == nd.id).sum() == nd.n


def test_warm_start_bitwise(rng):
    n = 200
    A = rng.random((n, 2))
    S = rng.normal(size=(n, 2))
    y = ((A[:, 0] > 0.5) ^ (S[:, 0] > 0)).astype(int)
    r = records(A, S, y)
    t = grow_tree(r, 3)

    def check(node, rows):
        if node.is_leaf:
            return
        br = node.split.route(r.A[rows, node.split.attribute])
        for c, child in enumerate(node.children):
            sub = rows[br == c]
            assert child.model.iterations == node.model.iterations + 3
            for key in ("attrs", "slopes", "intercepts"):
                np.testing.assert_array_equal(getattr(child.model, key)[: node.model.iterations],
                                              getattr(node.model, key))
            redo = continue_boosting(node.model, r.S[sub], r.y[sub], 3)
            np.testing.assert_array_equal(child.model.decision_function(r.S[sub]), redo.decision_function(r.S[sub]))
            check(child, sub)

    assert not t.root.is_leaf
    check(t.root, np.arange(n))


# -- pruning -------------------------------------------------------------------------------


def test_no_benefit_prunes_to_root(rng):
    r = _region_records(rng, 200)
    t = grow_tree(r, 0)  # every node keeps the uniform model
    assert not t.root.is_leaf
    pruned, rec = prune_tree(t, r, 5, seed=1)
    assert pruned.root.is_leaf
    assert len(set(rec.cv_rmse)) == 1


def test_single_node_unchanged(rng):
    r = records(rng.random((10, 1)), rng.normal(size=(10, 1)), np.arange(10) % 2)
    t = grow_tree(r, 2)
    pruned, rec = prune_tree(t, r)
    assert pruned.root.is_leaf and rec.chosen == 0
    np.testing.assert_array_equal(calibrate(pruned, r.A, r.S), calibrate(t, r.A, r.S))


def _informative(seed, n=300):
    rng = np.random.default_rng(seed)
    A = rng.random((n, 3))
    S = rng.normal(size=n) * 2
    p = np.where(A[:, 0] < 0.5, 0.9, 1 / (1 + np.exp(-S)))
    y = (rng.random(n) < p).astype(int)
    return records(A, S[:, None], y)


@pytest.mark.parametrize("seed", [0, 1])
def test_pruning_keeps_informative_split(seed):
    r = _informative(seed)
    t, rec = fit_pct(r, seed=seed, return_record=True)
    assert t.structure() == (0, (None, None))
    assert abs(t.root.split.threshold - 0.5) < 0.05
    # the chosen candidate is the CV optimum over the whole sequence
    assert rec.cv_rmse[rec.chosen] == min(rec.cv_rmse)
    assert rec.n_leaves[rec.chosen] == 2


@pytest.mark.parametrize("seed", [0, 2, 3])
def test_pruning_record_invariants(seed):
    r = _informative(seed)
    full = grow_tree(r, 5)
    alphas, cuts = pruning_sequence(full)
    assert all(b > a for a, b in zip(alphas, alphas[1:]))
    assert collapse(full, cuts[-1]).root.is_leaf
    assert collapse(full, cuts[0]).n_leaves == full.n_leaves
    pruned, rec = prune_tree(full, r, 5, seed)
    assert rec.cv_rmse[rec.chosen] <= rec.cv_rmse[0]
    assert rec.cv_rmse[rec.chosen] <= rec.cv_rmse[-1]
    assert rec.n_leaves[0] == full.n_leaves and rec.n_leaves[-1] == 1
    assert pruned.n_leaves == rec.n_leaves[rec.chosen]


def test_weakest_link_by_hand():
    # three leaves under two splits; the deeper split gains less per leaf
    empty = AdditiveLogisticModel(2)
    inner = Node(empty, 10, 4.0, Split(1, threshold=0.5), [Node(empty, 5, 1.9), Node(empty, 5, 1.9)])
    root = Node(empty, 20, 10.0, Split(0, threshold=0.5), [inner, Node(empty, 10, 3.0)])
    t = CalibrationTree(root, (Attribute("a"), Attribute("b")), 2, 0)
    alphas, cuts = pruning_sequence(t)
    # g(inner) = (4 - 3.8)/1 = 0.2 ; after collapsing it, g(root) = (10 - 7)/1 = 3
    assert alphas[1:] == pytest.approx([0.2, 3.0])
    assert cuts[1] == frozenset({inner.id})


# -- inference -------------------------------------------------------------------------------


def test_example_instance_closed_form():
    t = example_tree()
    p = calibrate(t, example_instance(True, False), np.array([[2.389]]))[0]
    f = 0.54 + 0.27 * 2.389
    assert p[0] == pytest.approx(1 / (1 + math.exp(-2 * f)), abs=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_example_right_leaf():
    p = calibrate(example_tree(), example_instance(False, True), np.array([[0.0]]))[0]
    assert p == pytest.approx([0.9616, 0.0384], abs=1e-4)


def test_leaf_only_inference():
    t = example_tree()
    # an internal model that would change the output if it were consulted
    t.root.model = linear_model([5.0, -5.0], [0.0, 0.0])
    p = calibrate(t, example_instance(True, False), np.array([[2.389]]))[0]
    assert p[0] == pytest.approx(1 / (1 + math.exp(-2 * (0.54 + 0.27 * 2.389))), abs=1e-12)


def test_root_only_ignores_attributes(rng):
    mdl = fit_additive_model(rng.normal(size=(30, 1)), np.arange(30) % 2, 4)
    t = CalibrationTree(Node(mdl, 30, 0.0), (Attribute("a"), Attribute("b")), 2, 4)
    S = rng.normal(size=(5, 1))
    np.testing.assert_array_equal(calibrate(t, rng.random((5, 2)), S), calibrate(t, rng.random((5, 2)), S))


def test_root_only_pct_equals_global_model(rng):
    A = rng.random((60, 2))
    S = rng.normal(size=(60, 2))
    y = rng.integers(0, 2, 60)
    t = grow_tree(records(A, S, y), 7, min_instances=10**6)
    glob = fit_additive_model(S, y, 7)
    np.testing.assert_allclose(calibrate(t, A, S), glob.predict_proba(S), atol=1e-12, rtol=0)


def test_calibrate_schema_mismatch():
    with pytest.raises(ValueError):
        calibrate(example_tree(), np.zeros((1, 3)), np.zeros((1, 1)))


# -- full procedure ---------------------------------------------------------------------------


def test_fit_pct_small_input_global(rng):
    A = rng.random((12, 2))
    S = rng.normal(size=(12, 1))
    y = np.arange(12) % 2
    t = fit_pct(records(A, S, y), seed=0)
    assert t.root.is_leaf
    np.testing.assert_array_equal(calibrate(t, A, S), fit_additive_model(S, y, t.iterations).predict_proba(S))


def test_fit_pct_deterministic(rng):
    r = _region_records(rng, 200)
    a = serialize.dumps(fit_pct(r, seed=5).to_dict())
    b = serialize.dumps(fit_pct(r, seed=5).to_dict())
    assert a == b


def test_fit_pct_from_dataset(rng):
    from conftest import make_dataset

    A, y = two_region_data(100, rng)
    d = make_dataset(A, y)
    S = np.zeros((100, 1))
    a = serialize.dumps(fit_pct(d, S, seed=1).to_dict())
    assert a == serialize.dumps(fit_pct(records(A, S, y), seed=1).to_dict())


def rdg_like(seed, n=600):
    """Ten binary attributes and a one-dimensional margin; calibration differs by region."""
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 2, (n, 10)).astype(float)
    S = rng.normal(size=n) * 1.5
    x5, x8 = A[:, 4] == 1, A[:, 7] == 1
    logit = np.where(~x5, 3.2 + 0.1 * S, np.where(x8, 0.6 - 1.2 * S, 1.1 + 0.5 * S))
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    return records(A, S[:, None], y, kinds=[BOOL] * 10)


def test_fit_pct_recovers_region_structure():
    t = fit_pct(rdg_like(0), seed=0)
    root = t.root
    assert not root.is_leaf and len(root.children) == 2
    leafs = [c.is_leaf for c in root.children]
    assert sorted(leafs) == [False, True]
    nested = root.children[leafs.index(False)]
    assert all(c.is_leaf for c in nested.children) and len(nested.children) == 2
    slopes = {round(float(leaf.model.decision_function(np.array([[1.0]]))[0, 0]
                      - leaf.model.decision_function(np.array([[0.0]]))[0, 0]), 9) for leaf in t.leaves()}
    assert len(slopes) == 3


def test_tree_json_round_trip(rng):
    r = _region_records(rng, 300)
    r = records(r.A, rng.normal(size=(300, 1)), r.y)
    t = grow_tree(r, 3)
    d = serialize.envelope("tree", t.to_dict())
    back = CalibrationTree.from_dict(__import__("json").loads(serialize.dumps(d)))
    np.testing.assert_array_equal(calibrate(back, r.A, r.S), calibrate(t, r.A, r.S))
    fig = example_tree()
    back = CalibrationTree.from_dict(fig.to_dict())
    x = np.array([example_instance(a, b) for a in (0, 1) for b in (0, 1)])
    s = np.array([[-1.0], [0.0], [1.0], [2.389]])
    np.testing.assert_array_equal(calibrate(back, x, s), calibrate(fig, x, s))


def test_pct_calibrator_transforms_probabilities(rng):
    A, y = two_region_data(120, rng)
    attrs = (Attribute("x1"), Attribute("x2"))
    P = np.clip(rng.random((120, 1)), 0.01, 0.99)
    P = np.column_stack([1 - P[:, 0], P[:, 0]])
    cal = PCTCalibrator(attrs, seed=2).fit(A, P, y)
    direct = fit_pct(records(A, logodds_transform(P), y), seed=2)
    np.testing.assert_array_equal(cal.predict_proba(A, P), calibrate(direct, A, logodds_transform(P)))
    back = PCTCalibrator.from_dict(cal.to_dict())
    np.testing.assert_array_equal(back.predict_proba(A, P), cal.predict_proba(A, P))


def test_multiclass_tree(rng):
    n = 300
    A = rng.random((n, 2))
    y = np.where(A[:, 0] < 0.33, 0, np.where(A[:, 0] < 0.66, 1, 2))
    S = rng.normal(size=(n, 3))
    t = fit_pct(records(A, S, y, m=3), seed=0)
    P = calibrate(t, A, S)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert rmse(P, y) < rmse(np.full((n, 3), 1 / 3), y)
