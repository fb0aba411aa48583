import numpy as np
import pytest

from oracles import gstar_dense, knn_scan, moran_dense, radius_scan
from urbanalign.errors import DegenerateVariance, TooFewPoints
from urbanalign.geo import (
    PointIndex,
    WeightScheme,
    getis_ord_gstar,
    knn_weights,
    morans_i,
)


def _random_points(rng, n, span=1000.0):
    xy = rng.uniform(0, span, size=(n, 2))
    return [(f"p{i:03d}", float(x), float(y)) for i, (x, y) in enumerate(xy)]


# --- radius queries ------------------------------------------------------------

def test_radius_boundary_inclusive():
    index = PointIndex([("a", 0.0, 0.0), ("b", 50.0, 0.0), ("c", 50.0001, 0.0)])
    assert index.radius_query((0.0, 0.0), 50.0) == ["a", "b"]


def test_radius_empty_index():
    assert PointIndex([]).radius_query((0.0, 0.0), 10.0) == []


def test_radius_matches_brute_force(rng):
    for trial in range(20):
        points = _random_points(rng, int(rng.integers(1, 120)))
        center = tuple(rng.uniform(0, 1000, 2))
        radius = float(rng.uniform(5, 400))
        index = PointIndex(points)
        assert set(index.radius_query(center, radius)) == radius_scan(points, center, radius)


# --- k nearest neighbors ----------------------------------------------------------

def test_knn_collinear_middle():
    index = PointIndex([("a", 0.0, 0.0), ("b", 10.0, 0.0), ("c", 25.0, 0.0)])
    assert index.knn_indices(1, 1) == [0]  # nearer endpoint


def test_knn_tie_lower_id_wins():
    index = PointIndex([("m", 0.0, 0.0), ("z", 10.0, 0.0), ("a", -10.0, 0.0)])
    assert index.knn_indices(0, 1) == [2]  # "a" beats "z" at equal distance


def test_knn_matches_brute_force(rng):
    for trial in range(15):
        n = int(rng.integers(10, 120))
        points = _random_points(rng, n)
        index = PointIndex(points)
        k = int(rng.integers(1, min(9, n - 1) + 1))
        for i in range(0, n, 7):
            assert index.knn_indices(i, k) == knn_scan(points, i, k)


def test_knn_weights_row_sums(rng):
    points = _random_points(rng, 40)
    wm = knn_weights(PointIndex(points), 8, WeightScheme.KNN_ROW_STANDARDIZED)
    assert np.allclose(wm.weights.sum(axis=1), 1.0, atol=1e-12)
    binary = knn_weights(PointIndex(points), 8, WeightScheme.KNN_BINARY)
    assert binary.weights.shape == (40, 8)
    with_self = knn_weights(PointIndex(points), 8, WeightScheme.KNN_PLUS_SELF)
    assert (with_self.neighbors[:, 0] == np.arange(40)).all()


def test_knn_too_few_points():
    with pytest.raises(TooFewPoints):
        knn_weights(PointIndex([("a", 0, 0), ("b", 1, 1)]), 2, WeightScheme.KNN_BINARY)


# --- Moran's I -----------------------------------------------------------------------

def _dense_from(wm, n):
    dense = np.zeros((n, n))
    for i in range(n):
        dense[i, wm.neighbors[i]] = wm.weights[i]
    return dense


def test_moran_constant_values_error():
    points = [(f"p{i}", float(i), 0.0) for i in range(10)]
    wm = knn_weights(PointIndex(points), 2, WeightScheme.KNN_ROW_STANDARDIZED)
    with pytest.raises(DegenerateVariance):
        morans_i(np.ones(10), wm)


def test_moran_alternating_line_negative():
    points = [(f"p{i}", float(i), 0.0) for i in range(10)]
    values = np.array([1.0, -1.0] * 5)
    wm = knn_weights(PointIndex(points), 2, WeightScheme.KNN_ROW_STANDARDIZED)
    result = morans_i(values, wm)
    assert result.i_statistic < 0
    assert result.i_statistic == pytest.approx(
        moran_dense(values, _dense_from(wm, 10)), abs=1e-12
    )
    assert result.expected_i == pytest.approx(-1.0 / 9.0)


def test_moran_gradient_positive():
    points = [(f"p{i}{j}", float(i * 10), float(j * 10)) for i in range(5) for j in range(5)]
    values = np.array([x for _, x, _ in points]) + np.array([y for _, _, y in points])
    wm = knn_weights(PointIndex(points), 8, WeightScheme.KNN_ROW_STANDARDIZED)
    result = morans_i(values, wm)
    assert result.i_statistic > 0.5
    assert result.p_permutation < 0.05


def test_moran_matches_dense_oracle(rng):
    for trial in range(10):
        n = int(rng.integers(8, 50))
        points = _random_points(rng, n)
        values = rng.normal(size=n)
        k = int(rng.integers(2, min(8, n - 1) + 1))
        wm = knn_weights(PointIndex(points), k, WeightScheme.KNN_ROW_STANDARDIZED)
        mine = morans_i(values, wm).i_statistic
        assert mine == pytest.approx(moran_dense(values, _dense_from(wm, n)), abs=1e-9)


def test_moran_affine_invariance(rng):
    points = _random_points(rng, 30)
    values = rng.normal(size=30)
    wm = knn_weights(PointIndex(points), 4, WeightScheme.KNN_ROW_STANDARDIZED)
    base = morans_i(values, wm).i_statistic
    scaled = morans_i(-3.0 * values + 2.0, wm).i_statistic
    assert base == pytest.approx(scaled, abs=1e-12)


def test_moran_permutation_seeded(rng):
    points = _random_points(rng, 25)
    values = rng.normal(size=25)
    wm = knn_weights(PointIndex(points), 4, WeightScheme.KNN_ROW_STANDARDIZED)
    a = morans_i(values, wm, seed=9)
    b = morans_i(values, wm, seed=9)
    assert a == b


# --- Getis-Ord G* -----------------------------------------------------------------------

def test_gstar_constant_error():
    points = [(f"p{i}", float(i), 0.0) for i in range(12)]
    with pytest.raises(DegenerateVariance):
        getis_ord_gstar(np.ones(12), PointIndex(points), 3)


def test_gstar_hot_cluster_flagged(rng):
    cluster = [(f"h{i}", float(rng.uniform(0, 10)), float(rng.uniform(0, 10))) for i in range(5)]
    spread = [(f"z{i}", float(rng.uniform(200, 900)), float(rng.uniform(200, 900))) for i in range(15)]
    points = cluster + spread
    values = np.array([10.0] * 5 + [0.0] * 15) + rng.normal(0, 0.01, 20)
    index = PointIndex(points)
    result = getis_ord_gstar(values, index, 3)
    assert all(c == "hot" for c in result.classes[:5])
    assert result.z_scores[:5].min() >= 1.96


def test_gstar_negation_swaps_flags(rng):
    points = _random_points(rng, 30)
    values = rng.normal(size=30)
    index = PointIndex(points)
    pos = getis_ord_gstar(values, index, 4)
    neg = getis_ord_gstar(-values, index, 4)
    assert np.allclose(pos.z_scores, -neg.z_scores, atol=1e-9)
    swap = {"hot": "cold", "cold": "hot", "none": "none"}
    assert [swap[c] for c in pos.classes] == neg.classes


def test_gstar_positive_affine_invariance(rng):
    points = _random_points(rng, 25)
    values = rng.normal(size=25)
    index = PointIndex(points)
    a = getis_ord_gstar(values, index, 4).z_scores
    b = getis_ord_gstar(2.5 * values + 7.0, index, 4).z_scores
    assert np.allclose(a, b, atol=1e-9)


def test_gstar_matches_dense_oracle(rng):
    for trial in range(10):
        n = int(rng.integers(10, 50))
        points = _random_points(rng, n)
        values = rng.normal(size=n)
        k = int(rng.integers(2, min(8, n - 2) + 1))
        mine = getis_ord_gstar(values, PointIndex(points), k).z_scores
        ref = gstar_dense(values, [(x, y) for _, x, y in points], k)
        assert np.allclose(mine, ref, atol=1e-9)
