import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from test_boosting import random_tree
from ecgdx.attribution import (
    AttributionMatrix,
    beeswarm_csv,
    beeswarm_export,
    beeswarm_svg,
    expected_value,
    global_importance,
    percentile_color,
    shap_brute,
    shap_row,
    shap_values,
    tree_expectation,
    value_percentiles,
)
from ecgdx.boosting import BoostedModel, Leaf, Split
from ecgdx.cohort import DEFAULT_SCHEMA
from ecgdx.errors import SchemaMismatch, TooManyFeatures

NAMES = DEFAULT_SCHEMA.names


def stump(feature, threshold, a, b, ca=1.0, cb=1.0, default_left=True):
    return Split(feature, threshold, default_left, Leaf(a, ca), Leaf(b, cb), ca + cb, gain=1.0)


def row_with(**values):
    row = np.zeros(10)
    for name, v in values.items():
        row[NAMES.index(name)] = v
    return row


def random_model(rng, max_trees=5, max_depth=3, n_features=6):
    """Small random model over the first ``n_features`` schema columns."""
    trees = [random_tree(rng, int(rng.integers(1, max_depth + 1)), n_features, p_stop=0.15)
             for _ in range(int(rng.integers(1, max_trees + 1)))]
    return BoostedModel(float(rng.normal()), trees, len(trees), "A")


def random_rows(rng, k, p_missing=0.15):
    X = rng.normal(size=(k, 10))
    X[rng.random(X.shape) < p_missing] = np.nan
    return X


# -- value function -------------------------------------------------------------

def test_expectation_all_active_routes():
    tree = stump(0, 0.0, -1.0, 2.0, ca=3.0, cb=1.0)
    assert tree_expectation(tree, row_with(rr_interval_ms=1.0), set(range(10))) == 2.0
    assert tree_expectation(tree, row_with(rr_interval_ms=-1.0), {0}) == -1.0


def test_expectation_empty_set_equal_covers():
    tree = stump(0, 0.0, -1.0, 3.0)
    assert tree_expectation(tree, np.zeros(10), set()) == 1.0


def test_expectation_depth_two_hand_unrolled():
    # root on f0; left child splits on f1, right child on f2
    l1 = stump(1, 0.0, 1.0, 2.0, ca=1.0, cb=3.0)
    r2 = stump(2, 0.0, 4.0, 8.0, ca=2.0, cb=2.0)
    tree = Split(0, 0.0, True, l1, r2, 8.0)
    row = np.zeros(10)
    row[[0, 1, 2]] = [-1.0, 5.0, -5.0]  # routes: left at root, right at l1, left at r2
    e_l1 = (1 * 1.0 + 3 * 2.0) / 4
    e_r2 = (2 * 4.0 + 2 * 8.0) / 4
    assert tree_expectation(tree, row, set()) == pytest.approx((4 * e_l1 + 4 * e_r2) / 8)
    assert tree_expectation(tree, row, {0}) == pytest.approx(e_l1)
    assert tree_expectation(tree, row, {1}) == pytest.approx((4 * 2.0 + 4 * e_r2) / 8)
    assert tree_expectation(tree, row, {2}) == pytest.approx((4 * e_l1 + 4 * 4.0) / 8)
    assert tree_expectation(tree, row, {0, 2}) == pytest.approx(e_l1)
    assert tree_expectation(tree, row, {0, 1}) == 2.0


# -- worked examples -------------------------------------------------------------

def test_single_leaf_model():
    model = BoostedModel(0.3, [Leaf(0.7, 5.0)], 1, "A")
    base, phi = shap_row(model, np.zeros(10))
    assert base == pytest.approx(1.0) and not phi.any()
    assert shap_brute(model, np.zeros(10))[0] == pytest.approx(base)


def test_single_split_single_player():
    model = BoostedModel(0.25, [stump(0, 0.0, -1.0, 1.0)], 1, "A")
    base, phi = shap_row(model, row_with(rr_interval_ms=2.0))
    assert base == 0.25
    assert phi[0] == 1.0 and not phi[1:].any()


def test_missing_value_follows_default():
    model = BoostedModel(0.0, [stump(3, 0.0, -1.0, 1.0, default_left=False)], 1, "A")
    base, phi = shap_row(model, row_with(qt_interval_ms=np.nan))
    assert phi[3] == 1.0


# -- oracle equivalence and axioms --------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    X = random_rows(rng, 10)
    attr = shap_values(model, X)
    margins = model.margins(X)
    for i, row in enumerate(X):
        base, phi = shap_brute(model, row)
        assert abs(base - attr.base_value) <= 1e-9
        np.testing.assert_allclose(attr.phi[i], phi, rtol=0, atol=1e-9)
        assert abs(attr.base_value + attr.phi[i].sum() - margins[i]) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dummy_additivity_linearity(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n_features=4)
    X = random_rows(rng, 8)
    attr = shap_values(model, X)
    # features 4..9 never split
    assert not attr.phi[:, 4:].any()
    parts = [shap_values(BoostedModel(0.0, [t], 1, "A"), X).phi for t in model.trees]
    np.testing.assert_allclose(attr.phi, sum(parts), rtol=0, atol=1e-12)

    c = float(rng.uniform(-3, 3))

    def scale(node):
        if isinstance(node, Leaf):
            return Leaf(c * node.weight, node.cover)
        return Split(node.feature_index, node.threshold, node.default_left, scale(node.left),
                     scale(node.right), node.cover, node.gain)

    scaled = shap_values(BoostedModel(model.base_score, [scale(t) for t in model.trees], len(model.trees), "A"), X)
    np.testing.assert_allclose(scaled.phi, c * attr.phi, rtol=0, atol=1e-12)
    assert scaled.base_value - model.base_score == pytest.approx(c * (attr.base_value - model.base_score),
                                                                 abs=1e-12)


def test_symmetry_mirrored_tree():
    # f0 then f1 on the left, f1 then f0 on the right: an AND of both features
    t_a = Split(0, 0.0, True, Leaf(0.0, 2.0), stump(1, 0.0, 0.0, 1.0), 4.0)
    t_b = Split(1, 0.0, True, Leaf(0.0, 2.0), stump(0, 0.0, 0.0, 1.0), 4.0)
    for tree in (t_a, t_b):
        for row in (row_with(rr_interval_ms=1.0, pr_interval_ms=1.0), row_with(rr_interval_ms=-1.0, pr_interval_ms=-1.0)):
            _, phi = shap_row(BoostedModel(0.0, [tree], 1, "A"), row)
            assert abs(phi[0] - phi[1]) <= 1e-12


def test_local_accuracy_with_missing_rows():
    rng = np.random.default_rng(21)
    trees = [random_tree(rng, 6, p_stop=0.05) for _ in range(30)]
    model = BoostedModel(-1.2, trees, 30, "A")
    X = random_rows(rng, 500, p_missing=0.3)
    attr = shap_values(model, X, n_threads=3, chunk=64)
    err = np.abs(attr.base_value + attr.phi.sum(axis=1) - model.margins(X))
    assert err.max() <= 1e-9
    np.testing.assert_array_equal(attr.phi, shap_values(model, X).phi)
    assert attr.base_value == pytest.approx(expected_value(model))


def test_brute_force_bound_and_schema():
    trees = [stump(j, 0.0, -1.0, 1.0) for j in range(16)]
    wide = BoostedModel(0.0, trees, 16, "A", schema=tuple(f"x{j}" for j in range(16)))
    with pytest.raises(TooManyFeatures):
        shap_brute(wide, np.zeros(16))
    with pytest.raises(SchemaMismatch):
        shap_row(BoostedModel(0.0, [], 0, "A"), np.zeros(7))


# -- summaries ------------------------------------------------------------------

def _attr(phi, values=None):
    phi = np.asarray(phi, dtype=float)
    values = np.zeros_like(phi) if values is None else values
    return AttributionMatrix(0.0, phi, values, NAMES)


def test_importance_ranking():
    phi = np.zeros((2, 10))
    phi[:, 4] = [0.5, -0.5]
    phi[:, 2] = [0.2, 0.2]
    ranking = global_importance(_attr(phi))
    assert [n for n, _ in ranking[:2]] == [NAMES[4], NAMES[2]]
    assert ranking[0][1] == 0.5
    assert [n for n, _ in ranking[2:]] == [n for j, n in enumerate(NAMES) if j not in (2, 4)]


def test_importance_all_zero_keeps_schema_order():
    assert global_importance(_attr(np.zeros((3, 10)))) == [(n, 0.0) for n in NAMES]
    with pytest.raises(ValueError):
        global_importance(_attr(np.zeros((0, 10))))


def test_value_percentiles():
    v = np.array([[1.0, np.nan], [3.0, 2.0], [2.0, np.nan], [3.0, np.nan]])
    pct = value_percentiles(v)
    np.testing.assert_allclose(pct[:, 0], [0.0, 5 / 6, 1 / 3, 5 / 6])
    assert pct[1, 1] == 0.5 and np.isnan(pct[0, 1])


def test_colour_scale_ends():
    assert percentile_color(1.0) == "#ff0052"
    assert percentile_color(0.0) == "#008bfb"
    assert percentile_color(np.nan) == "#9e9e9e"


# -- export ---------------------------------------------------------------------

def test_csv_one_row():
    attr = _attr(np.arange(10.0)[None, :], np.arange(10.0)[None, :])
    lines = beeswarm_csv(attr).splitlines()
    assert lines[0] == "feature,row_index,feature_value,shap_value,feature_value_percentile"
    assert len(lines) == 11
    assert lines[1].startswith(NAMES[9] + ",0,9.0,9.0,")


def _fitted_attr(n=300, seed=5):
    rng = np.random.default_rng(seed)
    model = random_model(rng, max_trees=8, max_depth=4, n_features=10)
    X = random_rows(rng, n)
    return shap_values(model, X)


def test_svg_deterministic_and_coloured(tmp_path):
    attr = _fitted_attr()
    a, b = beeswarm_svg(attr, seed=3, title="A"), beeswarm_svg(attr, seed=3, title="A")
    assert a == b and "<svg" in a.splitlines()[0] + a.splitlines()[1]
    assert a != beeswarm_svg(attr, seed=4, title="A")
    # exactly one full-red dot per feature with distinct present values
    j = int(np.argmax(np.abs(attr.phi).mean(axis=0)))
    assert percentile_color(value_percentiles(attr.values)[np.nanargmax(attr.values[:, j]), j]) == "#ff0052"
    assert len(re.findall(r"<circle", a)) == attr.n_rows * 10
    csv_path, svg_path = beeswarm_export(attr, tmp_path, seed=3, max_rows=50, title="A")
    assert len(csv_path.read_text().splitlines()) == 1 + 50 * 10
    assert svg_path.read_text().count("<circle") == 500
    assert not list(tmp_path.glob("*.tmp"))


def test_attribution_matrix_csv():
    attr = _fitted_attr(n=4)
    lines = attr.to_csv().splitlines()
    assert lines[0].split(",")[0] == "row_index" and lines[0].endswith("base_value")
    assert len(lines) == 5 and len(lines[1].split(",")) == 12
