import numpy as np
import pytest

from oracles import shapley_conditional, shapley_enumerate
from urbanalign.errors import EmptySample
from urbanalign.explain import (
    decision_paths,
    permutation_importance,
    shap_matrix,
    tree_shap,
)
from urbanalign.model import GbtModel, GbtParams, Tree, predict_matrix, train_gbt


def make_tree(feature, threshold, left, right, value, cover):
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        cover=np.array(cover, dtype=float),
    )


def wrap(trees, n_features, lr=1.0, depth=3, base=0.0):
    return GbtModel(
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        params=GbtParams(depth=depth, iterations=len(trees), l2=0.0, learning_rate=lr),
        seed=0,
        base_score=base,
        trees=tuple(trees),
    )


def single_leaf(value=2.5, cover=10):
    return make_tree([-1], [0.0], [-1], [-1], [value], [cover])


def stump(feature=0, threshold=0.0, left_value=-1.0, right_value=1.0, left_cover=6, right_cover=4):
    return make_tree(
        [feature, -1, -1],
        [threshold, 0.0, 0.0],
        [1, -1, -1],
        [2, -1, -1],
        [0.0, left_value, right_value],
        [left_cover + right_cover, left_cover, right_cover],
    )


def random_tree(rng, depth, n_features, cover=48):
    nodes = {"feature": [], "threshold": [], "left": [], "right": [], "value": [], "cover": []}

    def build(d, cov):
        idx = len(nodes["feature"])
        for key in nodes:
            nodes[key].append(0)
        nodes["cover"][idx] = float(cov)
        if d < depth and cov >= 2 and rng.random() < 0.85:
            nodes["feature"][idx] = int(rng.integers(n_features))
            nodes["threshold"][idx] = float(rng.normal())
            nodes["value"][idx] = 0.0
            lc = int(rng.integers(1, cov))
            nodes["left"][idx] = build(d + 1, lc)
            nodes["right"][idx] = build(d + 1, cov - lc)
        else:
            nodes["feature"][idx] = -1
            nodes["left"][idx] = nodes["right"][idx] = -1
            nodes["value"][idx] = float(rng.normal())
        return idx

    build(0, cover)
    return make_tree(**nodes)


# --- permutation importance ---------------------------------------------------

def test_unused_feature_zero_importance(rng):
    X = rng.random((80, 3))
    y = X[:, 0] * 2.0
    model = train_gbt(X[:, :1], y, ["f0"], GbtParams(depth=2, iterations=40))
    table = permutation_importance(model, X[:, :1], y, n_repeats=5, seed=0)
    assert table.importance[0] > 0

    model3 = train_gbt(
        np.column_stack([X[:, 0], np.zeros(80), np.zeros(80)]),
        y,
        ["a", "b", "c"],
        GbtParams(depth=2, iterations=40),
    )
    table3 = permutation_importance(model3, np.column_stack([X[:, 0], X[:, 1], X[:, 2]]), y, 7, 0)
    assert table3.importance[1] == 0.0
    assert table3.importance[2] == 0.0
    assert table3.ranks[0] == 1


def test_unused_feature_variance_zero(rng):
    X = rng.random((50, 2))
    y = X[:, 0]
    model = train_gbt(np.column_stack([X[:, 0], np.zeros(50)]), y, ["a", "b"], GbtParams(depth=2, iterations=20))
    runs = {
        permutation_importance(model, X, y, n_repeats=3, seed=s).importance[1] for s in range(5)
    }
    assert runs == {0.0}


def test_dominant_feature_importance(rng):
    X = rng.random((300, 2))
    y = 5.0 * X[:, 0] + 0.3 * X[:, 1]
    model = train_gbt(X, y, ["strong", "weak"], GbtParams(depth=4, iterations=120))
    table = permutation_importance(model, X, y, n_repeats=20, seed=3)
    assert table.importance[0] >= 3 * table.importance[1]
    assert table.ranks == (1, 2)


def test_importance_seeded_reproducible(rng):
    X = rng.random((60, 2))
    y = X[:, 0]
    model = train_gbt(X, y, ["a", "b"], GbtParams(depth=2, iterations=30))
    a = permutation_importance(model, X, y, n_repeats=4, seed=11)
    b = permutation_importance(model, X, y, n_repeats=4, seed=11)
    assert a == b


# --- tree SHAP ------------------------------------------------------------------

def test_single_leaf_all_zero():
    model = wrap([single_leaf(2.5)], 3)
    contributions, base = tree_shap(model, np.array([0.1, 0.2, 0.3]))
    assert np.allclose(contributions, 0.0)
    assert base == pytest.approx(2.5)


def test_depth_one_single_player():
    tree = stump(feature=1, threshold=0.5, left_value=-2.0, right_value=3.0)
    model = wrap([tree], 3)
    x = np.array([9.0, 0.2, -4.0])
    contributions, base = tree_shap(model, x)
    pred = predict_matrix(model, x.reshape(1, -1))[0]
    assert contributions[1] == pytest.approx(pred - base)
    assert contributions[0] == contributions[2] == 0.0


def test_depth_two_matches_enumeration(rng):
    for _ in range(20):
        tree = random_tree(rng, depth=2, n_features=2)
        model = wrap([tree], 2)
        x = rng.normal(size=2)
        contributions, base = tree_shap(model, x)
        assert np.allclose(contributions, shapley_enumerate(tree, x, 2), atol=1e-9)
        assert base + contributions.sum() == pytest.approx(
            shapley_conditional(tree, x, {0, 1}), abs=1e-9
        )


def test_random_trees_match_enumeration(rng):
    for _ in range(30):
        n_features = int(rng.integers(1, 5))
        tree = random_tree(rng, depth=int(rng.integers(1, 4)), n_features=n_features)
        model = wrap([tree], n_features)
        X = rng.normal(size=(3, n_features))
        sm = shap_matrix(model, X)
        for row in range(3):
            ref = shapley_enumerate(tree, X[row], n_features)
            assert np.allclose(sm.contributions[row], ref, atol=1e-9)


def test_duplicate_split_symmetry():
    # two features used identically: equal thresholds, mirrored subtrees
    tree = make_tree(
        [0, 1, 1, -1, -1, -1, -1],
        [0.0, 0.0, 0.0, 0, 0, 0, 0],
        [1, 3, 5, -1, -1, -1, -1],
        [2, 4, 6, -1, -1, -1, -1],
        [0, 0, 0, -3.0, 1.0, 1.0, 5.0],
        [16, 8, 8, 4, 4, 4, 4],
    )
    model = wrap([tree], 2)
    for x in (np.array([-1.0, -1.0]), np.array([1.0, 1.0])):
        contributions, _ = tree_shap(model, x)
        assert contributions[0] == pytest.approx(contributions[1], abs=1e-9)


def test_dummy_feature_zero():
    tree = stump(feature=0)
    model = wrap([tree], 4)
    contributions, _ = tree_shap(model, np.array([0.3, 1.0, 2.0, 3.0]))
    assert contributions[1] == contributions[2] == contributions[3] == 0.0


def test_additivity_across_trees(rng):
    for _ in range(10):
        t1 = random_tree(rng, 2, 3)
        t2 = random_tree(rng, 3, 3)
        x = rng.normal(size=3)
        lr = 0.7
        both = wrap([t1, t2], 3, lr=lr)
        c_both, base_both = tree_shap(both, x)
        c1, b1 = tree_shap(wrap([t1], 3, lr=lr), x)
        c2, b2 = tree_shap(wrap([t2], 3, lr=lr), x)
        assert np.allclose(c_both, c1 + c2, atol=1e-9)
        assert base_both == pytest.approx(b1 + b2, abs=1e-9)


def test_local_accuracy_on_trained_model(rng):
    X = rng.random((120, 5))
    y = X @ np.array([1.0, -0.5, 0.3, 0.0, 0.8]) + rng.normal(0, 0.05, 120)
    model = train_gbt(X, y, list("abcde"), GbtParams(depth=4, iterations=60))
    sm = shap_matrix(model, X)
    pred = predict_matrix(model, X)
    assert np.abs(sm.base_value + sm.contributions.sum(axis=1) - pred).max() < 1e-6


# --- decision paths ---------------------------------------------------------------

def _toy_shap():
    model = wrap([stump(feature=0), stump(feature=1, left_value=0.5, right_value=-0.5)], 2, lr=1.0)
    X = np.array([[-1.0, -1.0], [1.0, 1.0], [1.0, -1.0]])
    return shap_matrix(model, X), ["r0", "r1", "r2"], model, X


def test_decision_path_ends_at_prediction():
    shap, ids, model, X = _toy_shap()
    steps = decision_paths(shap, ids, sample_size=3, seed=0)
    preds = predict_matrix(model, X)
    finals = {s.row_id: s.cumulative_value for s in steps if s.step == 2}
    for i, row_id in enumerate(ids):
        assert finals[row_id] == pytest.approx(preds[i], abs=1e-9)


def test_decision_path_flat_when_zero():
    model = wrap([single_leaf(1.5)], 2)
    shap = shap_matrix(model, np.zeros((2, 2)))
    steps = decision_paths(shap, ["a", "b"], sample_size=2, seed=0)
    assert all(s.cumulative_value == pytest.approx(shap.base_value) for s in steps)


def test_decision_path_hand_accumulation():
    shap, ids, model, X = _toy_shap()
    steps = [s for s in decision_paths(shap, ids, 3, seed=1) if s.row_id == "r2"]
    order = [s.feature for s in steps]
    running = shap.base_value
    name_to_col = {name: i for i, name in enumerate(shap.feature_names)}
    for step in steps:
        running += shap.contributions[2, name_to_col[step.feature]]
        assert step.cumulative_value == pytest.approx(running, abs=1e-12)
    assert steps[0].step == 1 and steps[-1].step == 2
    # descending global importance order
    means = np.abs(shap.contributions).mean(axis=0)
    assert means[name_to_col[order[0]]] >= means[name_to_col[order[1]]]


def test_decision_path_sample_errors():
    shap, ids, *_ = _toy_shap()
    with pytest.raises(EmptySample):
        decision_paths(shap, ids, sample_size=0)
    with pytest.raises(EmptySample):
        decision_paths(shap, ids, sample_size=4)
