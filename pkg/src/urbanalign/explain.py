"""Model interpretation: permutation importance, exact SHAP, decision paths.

SHAP values use the path-dependent formulation for tree ensembles: when a
feature is outside the conditioning set, tree traversal branches into both
children weighted by their training cover. Contributions are exact Shapley
values of that game, computed per leaf in polynomial time. For each leaf,
only the distinct features on its root path matter; features off the path
are null players, so the Shapley sum collapses to the path features with
reweighted coalition terms. Everything else (which side of each split the
row satisfies) is vectorized across rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySample, MissingFeature
from .model import GbtModel, Tree, metrics, predict_matrix


@dataclass(frozen=True)
class ImportanceTable:
    features: tuple
    importance: tuple  # mean increase in MAE when the column is shuffled
    ranks: tuple  # 1 = most important


def permutation_importance(
    model: GbtModel,
    X: np.ndarray,
    truth: Sequence[float],
    n_repeats: int = 10,
    seed: int = 0,
) -> ImportanceTable:
    """Mean MAE increase per feature when its column is randomly shuffled.

    A feature that no tree splits on leaves predictions untouched and scores
    exactly zero. Rank ties are broken by feature order.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    X = np.asarray(X, dtype=float)
    truth = np.asarray(truth, dtype=float)
    baseline = metrics(predict_matrix(model, X), truth)["mae"]

    rng = np.random.default_rng(seed)
    p = len(model.feature_names)
    used = _features_in_splits(model)
    importance = np.zeros(p)
    for j in range(p):
        if j not in used:
            # predictions cannot change; skip the shuffles but keep rng
            # consumption identical so per-feature results stay stable
            for _ in range(n_repeats):
                rng.permutation(X.shape[0])
            continue
        deltas = []
        for _ in range(n_repeats):
            shuffled = X.copy()
            shuffled[:, j] = X[rng.permutation(X.shape[0]), j]
            deltas.append(metrics(predict_matrix(model, shuffled), truth)["mae"] - baseline)
        importance[j] = float(np.mean(deltas))

    order = sorted(range(p), key=lambda j: (-importance[j], j))
    ranks = [0] * p
    for rank, j in enumerate(order, start=1):
        ranks[j] = rank
    return ImportanceTable(
        features=tuple(model.feature_names),
        importance=tuple(float(v) for v in importance),
        ranks=tuple(ranks),
    )


def _features_in_splits(model: GbtModel) -> set:
    used: set = set()
    for tree in model.trees:
        used.update(int(f) for f in tree.feature[tree.feature >= 0])
    return used


# --- exact SHAP -----------------------------------------------------------------

@dataclass(frozen=True)
class ShapMatrix:
    base_value: float
    contributions: np.ndarray  # (n_rows, n_features)
    feature_names: tuple

    def predictions(self) -> np.ndarray:
        return self.base_value + self.contributions.sum(axis=1)


@dataclass(frozen=True)
class _LeafPlan:
    value: float
    feat_ids: np.ndarray  # distinct features on the path, first-occurrence order
    node_feats: np.ndarray  # per path node: position within feat_ids
    node_thresholds: np.ndarray
    node_goes_left: np.ndarray
    table: np.ndarray  # (2**u, u): contribution per satisfied-mask and feature
    mean_weight: float  # product of all cover ratios (leaf mass under no conditioning)


def _leaf_plans(tree: Tree) -> list:
    plans: list = []

    def walk(node: int, path: list) -> None:
        if tree.feature[node] < 0:
            plans.append(_build_plan(tree, node, path))
            return
        f = int(tree.feature[node])
        thr = float(tree.threshold[node])
        for child, goes_left in ((int(tree.left[node]), True), (int(tree.right[node]), False)):
            ratio = float(tree.cover[child] / tree.cover[node])
            path.append((f, thr, goes_left, ratio))
            walk(child, path)
            path.pop()

    walk(0, [])
    return plans


def _build_plan(tree: Tree, leaf: int, path: list) -> _LeafPlan:
    value = float(tree.value[leaf])
    feat_ids: list = []
    positions: dict = {}
    zero = []
    for f, _, _, ratio in path:
        if f not in positions:
            positions[f] = len(feat_ids)
            feat_ids.append(f)
            zero.append(ratio)
        else:
            zero[positions[f]] *= ratio
    u = len(feat_ids)
    zero_arr = np.array(zero)

    # Z[mask] = product of zero_d over set bits; C[mask] = coefficients of
    # prod_{d in mask} (t + zero_d); both built by adding one feature at a time
    size = 1 << u
    Z = np.ones(size)
    C = np.zeros((size, u + 1))
    C[0, 0] = 1.0
    for b in range(u):
        bit = 1 << b
        lower = np.array([m for m in range(size) if not m & bit], dtype=np.int64)
        Z[lower | bit] = Z[lower] * zero_arr[b]
        C[lower | bit, 1:] = C[lower, :-1]
        C[lower | bit, :] += zero_arr[b] * C[lower, :]

    if u == 0:
        table = np.zeros((1, 0))
        return _LeafPlan(
            value=value,
            feat_ids=np.array([], dtype=np.int64),
            node_feats=np.array([], dtype=np.int64),
            node_thresholds=np.array([]),
            node_goes_left=np.array([], dtype=bool),
            table=table,
            mean_weight=1.0,
        )

    weights = np.array(
        [math.factorial(k) * math.factorial(u - 1 - k) / math.factorial(u) for k in range(u)]
    )
    G = C[:, :u] @ weights  # meaningful for masks with popcount <= u - 1

    masks = np.arange(size)
    full = size - 1
    table = np.empty((size, u))
    for b in range(u):
        bit = 1 << b
        in_a = (masks & bit).astype(bool)
        with_i = (1.0 - zero_arr[b]) * Z[full ^ masks] * G[masks ^ bit]
        without_i = (0.0 - zero_arr[b]) * Z[(full ^ masks) ^ bit] * G[masks]
        table[:, b] = value * np.where(in_a, with_i, without_i)

    return _LeafPlan(
        value=value,
        feat_ids=np.array(feat_ids, dtype=np.int64),
        node_feats=np.array([positions[f] for f, _, _, _ in path], dtype=np.int64),
        node_thresholds=np.array([thr for _, thr, _, _ in path]),
        node_goes_left=np.array([gl for _, _, gl, _ in path], dtype=bool),
        table=table,
        mean_weight=float(Z[full]),
    )


def _tree_shap_batch(tree: Tree, X: np.ndarray, phi: np.ndarray, scale: float) -> float:
    """Add this tree's scaled contributions into ``phi``; return its mean."""
    mean = 0.0
    for plan in _leaf_plans(tree):
        mean += plan.value * plan.mean_weight
        u = plan.feat_ids.size
        if u == 0:
            continue
        # which path features does each row satisfy end to end?
        sat = np.ones((X.shape[0], u), dtype=bool)
        for pos, thr, goes_left in zip(plan.node_feats, plan.node_thresholds, plan.node_goes_left):
            cond = X[:, plan.feat_ids[pos]] <= thr
            sat[:, pos] &= cond if goes_left else ~cond
        mask = (sat.astype(np.int64) << np.arange(u, dtype=np.int64)).sum(axis=1)
        phi[:, plan.feat_ids] += scale * plan.table[mask]
    return mean


def shap_matrix(model: GbtModel, X: np.ndarray) -> ShapMatrix:
    """Exact per-row SHAP contributions for every feature.

    The base value is the cover-weighted mean output of the ensemble; for
    every row, ``base_value + contributions.sum()`` equals the model
    prediction up to floating-point error.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise MissingFeature(
            f"expected {len(model.feature_names)} feature columns, got {X.shape}"
        )
    phi = np.zeros((X.shape[0], X.shape[1]))
    base = model.base_score
    lr = model.params.learning_rate
    for tree in model.trees:
        base += lr * _tree_shap_batch(tree, X, phi, lr)
    return ShapMatrix(base_value=float(base), contributions=phi, feature_names=model.feature_names)


def tree_shap(model: GbtModel, features) -> tuple:
    """Contributions and base value for one row (mapping or array)."""
    if hasattr(features, "keys"):
        missing = [name for name in model.feature_names if name not in features]
        if missing:
            raise MissingFeature(f"missing features: {missing}")
        row = np.array([[float(features[name]) for name in model.feature_names]])
    else:
        row = np.asarray(features, dtype=float).reshape(1, -1)
    result = shap_matrix(model, row)
    return result.contributions[0], result.base_value


# --- decision paths ---------------------------------------------------------------

@dataclass(frozen=True)
class DecisionPathStep:
    row_id: str
    step: int
    feature: str
    cumulative_value: float


def decision_paths(
    shap: ShapMatrix, row_ids: Sequence[str], sample_size: int, seed: int = 0
) -> list:
    """Cumulative contribution walk for a random sample of rows.

    Features are ordered by descending global mean absolute contribution;
    the cumulative value starts from the base value and after the last step
    equals the row's prediction.
    """
    n = shap.contributions.shape[0]
    if len(row_ids) != n:
        raise ValueError("row_ids and shap matrix disagree on row count")
    if sample_size < 1 or n == 0:
        raise EmptySample("need at least one row")
    if sample_size > n:
        raise EmptySample(f"sample_size {sample_size} exceeds {n} rows")

    global_order = sorted(
        range(len(shap.feature_names)),
        key=lambda j: (-float(np.abs(shap.contributions[:, j]).mean()), j),
    )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=sample_size, replace=False))

    steps = []
    for i in chosen:
        running = shap.base_value
        for step, j in enumerate(global_order, start=1):
            running += float(shap.contributions[i, j])
            steps.append(
                DecisionPathStep(
                    row_id=row_ids[i],
                    step=step,
                    feature=shap.feature_names[j],
                    cumulative_value=running,
                )
            )
    return steps
