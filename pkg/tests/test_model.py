import numpy as np
import pytest

from oracles import vif_normal_equations
from urbanalign.domain import CANONICAL_FEATURES
from urbanalign.errors import (
    DegenerateRange,
    EmptyTrainingSet,
    FoldTooSmall,
    LengthMismatch,
    MissingFeature,
    NonFiniteFeature,
)
from urbanalign.model import (
    GbtParams,
    apply_scaler,
    consolidate_transport,
    fit_scaler,
    grid_search_cv,
    invert_scaler,
    metrics,
    model_from_dict,
    model_to_dict,
    predict,
    predict_matrix,
    train_gbt,
    vif_filter,
)


# --- transport consolidation ------------------------------------------------------

def test_consolidate_sums_vehicles():
    out = consolidate_transport([("i", {"car": 0.02, "bus": 0.01, "road": 0.3})])
    values = out[0].as_dict()
    assert values["road_transport"] == pytest.approx(0.03)
    assert values["road"] == pytest.approx(0.3)


def test_consolidate_no_vehicles():
    out = consolidate_transport([("i", {"road": 0.3})])
    assert out[0].as_dict()["road_transport"] == 0.0


def test_consolidate_all_six_subclasses():
    shares = {"car": 0.01, "truck": 0.02, "bus": 0.03, "train": 0.04, "motorcycle": 0.05, "bicycle": 0.06}
    out = consolidate_transport([("i", shares)])
    assert out[0].as_dict()["road_transport"] == pytest.approx(sum(shares.values()))


# --- VIF ------------------------------------------------------------------------------

def _orthogonal(rng, n, p):
    q, _ = np.linalg.qr(rng.normal(size=(n, p)) - 0.0)
    q -= q.mean(axis=0)
    q2, _ = np.linalg.qr(q)
    return q2


def test_vif_orthogonal_all_one(rng):
    X = _orthogonal(rng, 60, 3)
    report = vif_filter(X, ["f1", "f2", "f3"])
    assert report.removed == ()
    for value in report.vif.values():
        assert value == pytest.approx(1.0, abs=1e-9)


def test_vif_duplicate_removed_infinite(rng):
    base = rng.normal(size=(50, 2))
    X = np.column_stack([base, base[:, 0]])
    report = vif_filter(X, ["a", "b", "a_copy"])
    assert report.vif[report.removed[0]] == float("inf")
    assert len(report.removed) == 1
    assert all(report.vif[name] <= 10.0 for name in report.retained)


def test_vif_correlated_pair_value(rng):
    q = _orthogonal(rng, 80, 3)
    f1 = q[:, 0]
    f2 = 0.9 * q[:, 0] + np.sqrt(1 - 0.81) * q[:, 1]
    X = np.column_stack([f1, f2, q[:, 2]])
    report = vif_filter(X, ["f1", "f2", "f3"])
    expected = vif_normal_equations(X, 0)
    assert expected == pytest.approx(1.0 / (1.0 - 0.81), abs=1e-9)
    assert report.vif["f1"] == pytest.approx(expected, abs=1e-9)
    assert report.vif["f2"] == pytest.approx(expected, abs=1e-9)


def test_vif_retained_set_order_independent(rng):
    base = rng.normal(size=(60, 4))
    base[:, 1] = base[:, 0] * 0.99 + rng.normal(size=60) * 0.01  # near-collinear pair
    names = ["a", "b", "c", "d"]
    report = vif_filter(base, names)
    flipped = vif_filter(base[:, ::-1], names[::-1])
    assert set(report.retained) == set(flipped.retained)


# --- scaler ------------------------------------------------------------------------------

def test_scaler_endpoints_and_midpoint():
    scaler = fit_scaler([3.0, 10.0, 5.0])
    assert apply_scaler(scaler, 3.0) == -1.0
    assert apply_scaler(scaler, 10.0) == 1.0
    assert apply_scaler(scaler, 6.5) == pytest.approx(0.0)


def test_scaler_hand_value():
    scaler = fit_scaler([-2.0, 0.0, 6.0])
    assert apply_scaler(scaler, 0.0) == pytest.approx(-0.5)


def test_scaler_clamps():
    scaler = fit_scaler([0.0, 1.0])
    assert apply_scaler(scaler, 99.0) == 1.0
    assert apply_scaler(scaler, -99.0) == -1.0


def test_scaler_inverse_identity(rng):
    scaler = fit_scaler([-1.7, 2.9])
    for value in rng.uniform(-1.7, 2.9, size=50):
        assert invert_scaler(scaler, apply_scaler(scaler, value)) == pytest.approx(value, abs=1e-12)


def test_scaler_degenerate():
    with pytest.raises(DegenerateRange):
        fit_scaler([2.0, 2.0, 2.0])


# --- boosted trees ---------------------------------------------------------------------------

def test_constant_target(rng):
    X = rng.random((40, 3))
    model = train_gbt(X, np.full(40, 0.37), ["a", "b", "c"], GbtParams(depth=3, iterations=30, l2=2.0))
    assert np.abs(predict_matrix(model, X) - 0.37).max() < 1e-9


def test_step_function_learned(rng):
    X = rng.uniform(-1, 1, (200, 1))
    y = np.sign(X[:, 0])
    model = train_gbt(X, y, ["x"], GbtParams())
    X_test = rng.uniform(-1, 1, (200, 1))
    assert metrics(predict_matrix(model, X_test), np.sign(X_test[:, 0]))["mae"] < 0.05


def test_default_hyperparameters():
    params = GbtParams()
    assert (params.depth, params.iterations, params.l2, params.learning_rate) == (8, 300, 9.0, 0.1)


def test_training_loss_monotone(rng):
    X = rng.random((150, 4))
    y = X[:, 0] - 2 * X[:, 1] + rng.normal(0, 0.1, 150)
    model = train_gbt(X, y, list("abcd"), GbtParams(depth=4, iterations=80))
    losses = np.array(model.training_loss)
    assert (np.diff(losses) <= 1e-12).all()


def test_row_order_invariance(rng):
    X = rng.random((120, 5))
    y = rng.normal(size=120)
    perm = rng.permutation(120)
    a = train_gbt(X, y, list("abcde"), GbtParams(depth=5, iterations=40))
    b = train_gbt(X[perm], y[perm], list("abcde"), GbtParams(depth=5, iterations=40))
    assert (predict_matrix(a, X) == predict_matrix(b, X)).all()


def test_tree_depth_bounded(rng):
    X = rng.random((300, 3))
    y = rng.normal(size=300)
    model = train_gbt(X, y, list("abc"), GbtParams(depth=4, iterations=5, l2=0.0))
    for tree in model.trees:
        depth = np.zeros(tree.feature.size, dtype=int)
        stack = [0]
        while stack:
            node = stack.pop()
            if tree.feature[node] >= 0:
                for child in (tree.left[node], tree.right[node]):
                    depth[child] = depth[node] + 1
                    stack.append(int(child))
        assert depth.max() <= 4


def test_large_l2_shrinks_to_base(rng):
    X = rng.random((100, 3))
    y = rng.normal(size=100)
    model = train_gbt(X, y, list("abc"), GbtParams(depth=3, iterations=50, l2=1e12))
    assert np.abs(predict_matrix(model, X) - model.base_score).max() < 1e-6


def test_predict_named_row(rng):
    X = rng.random((60, 2))
    y = X[:, 0]
    model = train_gbt(X, y, ["u", "v"], GbtParams(depth=2, iterations=50))
    row = {"u": float(X[0, 0]), "v": float(X[0, 1])}
    assert predict(model, row) == pytest.approx(predict_matrix(model, X[:1])[0])
    with pytest.raises(MissingFeature):
        predict(model, {"u": 0.5})


def test_predict_deterministic(rng):
    X = rng.random((80, 3))
    model = train_gbt(X, rng.normal(size=80), list("abc"), GbtParams(depth=3, iterations=20))
    row = np.vstack([X[5], X[5]])
    out = predict_matrix(model, row)
    assert out[0] == out[1]


def test_single_split_hand_traced():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    model = train_gbt(X, y, ["x"], GbtParams(depth=1, iterations=1, l2=1.0, learning_rate=1.0))
    tree = model.trees[0]
    # split at 1.5; leaf value = sum(residual) / (n + l2)
    assert tree.threshold[0] == pytest.approx(1.5)
    left, right = int(tree.left[0]), int(tree.right[0])
    assert tree.value[left] == pytest.approx((0 - 5) * 2 / (2 + 1.0))
    assert tree.value[right] == pytest.approx((10 - 5) * 2 / (2 + 1.0))
    assert predict_matrix(model, np.array([[0.5]]))[0] == pytest.approx(5.0 + tree.value[left])


def test_train_errors(rng):
    with pytest.raises(EmptyTrainingSet):
        train_gbt(np.zeros((0, 2)), np.zeros(0), ["a", "b"], GbtParams())
    X = rng.random((10, 2))
    X[3, 1] = np.nan
    with pytest.raises(NonFiniteFeature):
        train_gbt(X, np.zeros(10), ["a", "b"], GbtParams())


# --- grid search -------------------------------------------------------------------------------

def test_grid_single_cell(rng):
    X = rng.random((30, 2))
    y = X[:, 0]
    result = grid_search_cv(X, y, ["a", "b"], {"depth": [2], "iterations": [10]}, 3, 0)
    assert result.best == GbtParams(depth=2, iterations=10)
    assert len(result.cells) == 1


def test_grid_tie_breaks_to_fewer_iterations(rng):
    X = rng.random((24, 1))
    y = np.zeros(24)  # noise-free constant: extra iterations change nothing
    result = grid_search_cv(X, y, ["x"], {"iterations": [3, 4], "depth": [1]}, 3, 0)
    assert result.cells[0][1] == result.cells[1][1]
    assert result.best.iterations == 3


def test_grid_planted_depth_wins(rng):
    X = rng.uniform(-1, 1, (160, 2))
    y = np.logical_xor(X[:, 0] > 0, X[:, 1] > 0).astype(float)  # needs depth 2
    result = grid_search_cv(
        X, y, ["a", "b"], {"depth": [1, 2], "iterations": [60]}, 4, 1
    )
    scores = {cell[0].depth: cell[1] for cell in result.cells}
    assert scores[2] < scores[1]
    assert result.best.depth == 2


def test_grid_fold_errors(rng):
    X = rng.random((4, 1))
    with pytest.raises(FoldTooSmall):
        grid_search_cv(X, np.zeros(4), ["x"], {"depth": [1]}, 1, 0)
    with pytest.raises(FoldTooSmall):
        grid_search_cv(X, np.zeros(4), ["x"], {"depth": [1]}, 9, 0)


# --- metrics -----------------------------------------------------------------------------------

def test_metrics_examples():
    assert metrics([1.0, 2.0], [1.0, 2.0]) == {"mae": 0.0, "mse": 0.0}
    out = metrics([1.5, 2.5], [1.0, 2.0])
    assert out["mae"] == pytest.approx(0.5)
    assert out["mse"] == pytest.approx(0.25)


def test_metrics_hand_fixture():
    out = metrics([1.0, -1.0, 2.0], [0.0, 1.0, 0.0])
    assert out["mae"] == pytest.approx((1 + 2 + 2) / 3)
    assert out["mse"] == pytest.approx((1 + 4 + 4) / 3)


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        metrics([1.0], [1.0, 2.0])
    with pytest.raises(LengthMismatch):
        metrics([], [])


# --- serialization --------------------------------------------------------------------------------

def test_model_dict_roundtrip(rng):
    X = rng.random((50, 3))
    model = train_gbt(X, rng.normal(size=50), list("abc"), GbtParams(depth=3, iterations=15))
    scaler = fit_scaler([-2.0, 2.0])
    restored, restored_scaler = model_from_dict(model_to_dict(model, scaler))
    assert (predict_matrix(restored, X) == predict_matrix(model, X)).all()
    assert restored_scaler == scaler
