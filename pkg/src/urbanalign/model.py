"""Feature screening and gradient-boosted tree regression.

The regressor is a squared-error gradient-boosted ensemble of depth-limited
binary trees with exact greedy split search (no histogramming) and L2
shrinkage applied in the leaf-value denominator. Split search is evaluated
level by level with presorted feature columns, which keeps training fast at
desk scale while staying exactly deterministic: same data, same model,
regardless of row order or thread count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import CANONICAL_FEATURES, VEHICLE_SUBCLASSES, FeatureVector
from .errors import (
    DegenerateRange,
    EmptyTrainingSet,
    FoldTooSmall,
    LengthMismatch,
    MissingFeature,
    NonFiniteFeature,
)

VIF_THRESHOLD = 10.0
MODEL_SCHEMA_VERSION = 1
_GAIN_EPS = 1e-12


def consolidate_transport(raw_table: Sequence[tuple]) -> list:
    """Collapse vehicle subclasses into a single road-transport proportion.

    ``raw_table`` rows are ``(image_id, {class_name: proportion})``. Any of
    car, truck, bus, train, motorcycle, and bicycle are summed into
    ``road_transport``; canonical classes pass through; anything else is
    treated as remainder and dropped.
    """
    out = []
    for image_id, values in raw_table:
        merged = {name: float(values.get(name, 0.0)) for name in CANONICAL_FEATURES}
        merged["road_transport"] = float(values.get("road_transport", 0.0)) + sum(
            float(values.get(sub, 0.0)) for sub in VEHICLE_SUBCLASSES
        )
        out.append(FeatureVector.from_mapping(image_id, merged))
    return out


# --- collinearity screening -----------------------------------------------------

@dataclass(frozen=True)
class VifReport:
    vif: dict  # feature -> VIF at the final (or removal) evaluation
    removed: tuple  # removal order
    retained: tuple  # surviving features, input order


def _vif_single(X: np.ndarray, j: int) -> float:
    """VIF of column j regressed on the remaining columns plus an intercept."""
    y = X[:, j]
    others = np.delete(X, j, axis=1)
    design = np.column_stack([np.ones(X.shape[0]), others])
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return float("inf")  # constant column: collinear with the intercept
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    r2 = 1.0 - float((resid * resid).sum()) / ss_tot
    if r2 >= 1.0 - 1e-12:
        return float("inf")
    return 1.0 / (1.0 - max(r2, 0.0))


def vif_filter(
    X: np.ndarray, feature_names: Sequence[str], threshold: float = VIF_THRESHOLD
) -> VifReport:
    """Iteratively drop the highest-VIF feature until all VIFs are in bounds.

    Exactly collinear features evaluate to infinite VIF and therefore leave
    first. VIF ties are broken by removing the alphabetically first name, so
    the retained set does not depend on column order.
    """
    X = np.asarray(X, dtype=float)
    names = list(feature_names)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise ValueError("X and feature_names disagree")
    if len(names) < 2:
        raise ValueError("need at least two features")
    if X.shape[0] <= X.shape[1]:
        raise ValueError("need more rows than features")

    active = list(range(len(names)))
    removed: list = []
    vif_records: dict = {}
    while True:
        if len(active) == 1:
            vif_records[names[active[0]]] = 1.0
            break
        sub = X[:, active]
        vifs = np.array([_vif_single(sub, idx) for idx in range(len(active))])
        for idx, col in enumerate(active):
            vif_records[names[col]] = float(vifs[idx])
        worst = float(np.max(vifs))
        if worst <= threshold:
            break
        tied = [active[idx] for idx in range(len(active)) if vifs[idx] == worst]
        drop = min(tied, key=lambda col: names[col])
        removed.append(names[drop])
        active.remove(drop)

    return VifReport(
        vif=vif_records,
        removed=tuple(removed),
        retained=tuple(names[col] for col in active),
    )


# --- target scaling ---------------------------------------------------------------

@dataclass(frozen=True)
class TargetScaler:
    observed_min: float
    observed_max: float


def fit_scaler(targets: Sequence[float]) -> TargetScaler:
    values = np.asarray(targets, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        raise DegenerateRange("all target values are equal")
    return TargetScaler(observed_min=lo, observed_max=hi)


def apply_scaler(scaler: TargetScaler, value: float):
    """Map [observed_min, observed_max] linearly onto [-1, +1], clamping outside."""
    span = scaler.observed_max - scaler.observed_min
    scaled = 2.0 * (np.asarray(value, dtype=float) - scaler.observed_min) / span - 1.0
    return np.clip(scaled, -1.0, 1.0) if scaled.ndim else float(np.clip(scaled, -1.0, 1.0))


def invert_scaler(scaler: TargetScaler, value: float):
    span = scaler.observed_max - scaler.observed_min
    raw = scaler.observed_min + (np.asarray(value, dtype=float) + 1.0) * span / 2.0
    return raw if raw.ndim else float(raw)


# --- gradient-boosted trees ---------------------------------------------------------

@dataclass(frozen=True)
class GbtParams:
    depth: int = 8
    iterations: int = 300
    l2: float = 9.0
    learning_rate: float = 0.1


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray  # training rows through each node


@dataclass(frozen=True)
class GbtModel:
    feature_names: tuple
    params: GbtParams
    seed: int
    base_score: float
    trees: tuple
    training_loss: tuple = field(default=())  # training MSE after each iteration


def _grow_tree(
    X: np.ndarray,
    residual: np.ndarray,
    order: np.ndarray,
    max_depth: int,
    l2: float,
) -> Tree:
    """Fit one regression tree to the residuals, level by level.

    ``order`` holds, per feature, the sample indices presorted by that
    feature. Split gain is the L2-regularized sum-of-squares improvement
    ``S_L^2/(n_L+l2) + S_R^2/(n_R+l2) - S^2/(n+l2)``; leaf values are
    ``S/(n+l2)``. Ties break toward the lower feature index, then the
    smaller threshold.
    """
    n, p = X.shape
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    cover = [float(n)]
    total = [float(residual.sum())]
    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]

    for _ in range(max_depth):
        splittable = [nid for nid in frontier if cover[nid] >= 2.0]
        if not splittable:
            break
        n_nodes = len(feature)
        is_active = np.zeros(n_nodes, dtype=bool)
        is_active[splittable] = True
        best_gain = np.full(n_nodes, _GAIN_EPS)
        best_feat = np.full(n_nodes, -1, dtype=np.int64)
        best_thr = np.zeros(n_nodes)
        best_sl = np.zeros(n_nodes)
        best_nl = np.zeros(n_nodes)

        for f in range(p):
            idx = order[f]
            sel = idx[is_active[node_of[idx]]]
            if sel.size < 2:
                continue
            seg = node_of[sel]
            regroup = np.argsort(seg, kind="stable")
            sel = sel[regroup]
            seg = seg[regroup]
            xs = X[sel, f]
            rs = residual[sel]
            csum = np.cumsum(rs)

            starts = np.flatnonzero(np.concatenate([[True], seg[1:] != seg[:-1]]))
            ends = np.concatenate([starts[1:], [seg.size]]) - 1
            seg_slot = np.cumsum(np.concatenate([[0], (seg[1:] != seg[:-1]).astype(np.int64)]))
            seg_before = np.concatenate([[0.0], csum[ends[:-1]]])[seg_slot]
            seg_total = (csum[ends] - np.concatenate([[0.0], csum[ends[:-1]]]))[seg_slot]
            seg_count = (ends - starts + 1).astype(float)[seg_slot]
            pos_in_seg = np.arange(seg.size) - starts[seg_slot]

            can_split = np.zeros(seg.size, dtype=bool)
            can_split[:-1] = (seg[1:] == seg[:-1]) & (xs[1:] > xs[:-1])
            cand = np.flatnonzero(can_split)
            if cand.size == 0:
                continue
            s_l = csum[cand] - seg_before[cand]
            n_l = pos_in_seg[cand] + 1.0
            s_all = seg_total[cand]
            n_all = seg_count[cand]
            s_r = s_all - s_l
            n_r = n_all - n_l
            gain = (
                s_l * s_l / (n_l + l2)
                + s_r * s_r / (n_r + l2)
                - s_all * s_all / (n_all + l2)
            )
            thr = 0.5 * (xs[cand] + xs[cand + 1])

            # best candidate per node: max gain, then min threshold
            by = np.lexsort((thr, -gain, seg[cand]))
            first = np.flatnonzero(
                np.concatenate([[True], seg[cand][by][1:] != seg[cand][by][:-1]])
            )
            pick = cand[by[first]]
            nodes_here = seg[pick]
            g = gain[by[first]]
            better = g > best_gain[nodes_here]
            upd = nodes_here[better]
            best_gain[upd] = g[better]
            best_feat[upd] = f
            best_thr[upd] = thr[by[first]][better]
            best_sl[upd] = s_l[by[first]][better]
            best_nl[upd] = n_l[by[first]][better]

        split_nodes = [nid for nid in splittable if best_feat[nid] >= 0]
        if not split_nodes:
            break
        next_frontier = []
        child_left = np.full(n_nodes, -1, dtype=np.int64)
        child_right = np.full(n_nodes, -1, dtype=np.int64)
        for nid in split_nodes:
            feature[nid] = int(best_feat[nid])
            threshold[nid] = float(best_thr[nid])
            lid = len(feature)
            for child_total, child_cover in (
                (float(best_sl[nid]), float(best_nl[nid])),
                (float(total[nid] - best_sl[nid]), float(cover[nid] - best_nl[nid])),
            ):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                cover.append(child_cover)
                total.append(child_total)
            left[nid], right[nid] = lid, lid + 1
            child_left[nid], child_right[nid] = lid, lid + 1
            next_frontier.extend((lid, lid + 1))

        moving = child_left[node_of] >= 0
        mi = np.flatnonzero(moving)
        nodes_m = node_of[mi]
        go_left = X[mi, np.asarray(feature, dtype=np.int64)[nodes_m]] <= np.asarray(threshold)[nodes_m]
        node_of[mi] = np.where(go_left, child_left[nodes_m], child_right[nodes_m])
        frontier = next_frontier

    values = np.zeros(len(feature))
    feat_arr = np.array(feature, dtype=np.int64)
    cover_arr = np.array(cover)
    total_arr = np.array(total)
    leaves = feat_arr == -1
    values[leaves] = total_arr[leaves] / (cover_arr[leaves] + l2)
    return Tree(
        feature=feat_arr,
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=values,
        cover=cover_arr,
    )


def _tree_predict(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        at_split = tree.feature[node] >= 0
        if not at_split.any():
            return tree.value[node]
        idx = np.flatnonzero(at_split)
        cur = node[idx]
        go_left = X[idx, tree.feature[cur]] <= tree.threshold[cur]
        node[idx] = np.where(go_left, tree.left[cur], tree.right[cur])


class _EnsembleRouter:
    """All trees concatenated into one node block for batched prediction.

    Leaves are rewritten to route to themselves, so every (row, tree) pair
    can be advanced ``depth`` times with pure gather ops and no masking.
    """

    def __init__(self, model: GbtModel):
        sizes = [tree.feature.size for tree in model.trees]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.roots = offsets
        self.depth = model.params.depth
        feature = np.concatenate([t.feature for t in model.trees])
        left = np.concatenate([t.left for t in model.trees]).astype(np.int64)
        right = np.concatenate([t.right for t in model.trees]).astype(np.int64)
        shift = np.repeat(offsets, sizes)
        leaf = feature < 0
        self_idx = np.arange(feature.size, dtype=np.int64)
        self.left = np.where(leaf, self_idx, left + shift)
        self.right = np.where(leaf, self_idx, right + shift)
        self.feature = np.where(leaf, 0, feature)
        self.threshold = np.concatenate([t.threshold for t in model.trees])
        self.value = np.where(leaf, np.concatenate([t.value for t in model.trees]), 0.0)

    def predict_sum(self, X: np.ndarray) -> np.ndarray:
        """Sum of leaf values per row across all trees (row, tree routed jointly)."""
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, self.roots.size)).copy()
        row_idx = np.arange(n)[:, None]
        for _ in range(self.depth):
            go_left = X[row_idx, self.feature[node]] <= self.threshold[node]
            node = np.where(go_left, self.left[node], self.right[node])
        return self.value[node].sum(axis=1)


def train_gbt(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    params: GbtParams = GbtParams(),
    seed: int = 0,
) -> GbtModel:
    """Fit the boosted ensemble to scaled targets.

    Each iteration fits one tree to the current residuals and advances the
    prediction by ``learning_rate`` times the tree output; the base score is
    the target mean. Training has no stochastic element; the seed is
    recorded for provenance and reproducibility bookkeeping.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise LengthMismatch("features and targets disagree on row count")
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training rows")
    if X.shape[1] != len(feature_names):
        raise ValueError("X and feature_names disagree")
    if not np.isfinite(X).all():
        raise NonFiniteFeature("feature matrix contains NaN or infinite values")
    if not np.isfinite(y).all():
        raise NonFiniteFeature("targets contain NaN or infinite values")

    # canonical row order, so float summation order (and thus the fitted
    # model) cannot depend on how the caller happened to order the rows
    canon = np.lexsort((y, *[X[:, f] for f in range(X.shape[1] - 1, -1, -1)]))
    X = X[canon]
    y = y[canon]

    order = np.vstack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])])
    base = float(y.mean())
    pred = np.full(y.size, base)
    trees = []
    losses = []
    for _ in range(params.iterations):
        residual = y - pred
        tree = _grow_tree(X, residual, order, params.depth, params.l2)
        pred = pred + params.learning_rate * _tree_predict(tree, X)
        trees.append(tree)
        losses.append(float(((y - pred) ** 2).mean()))

    return GbtModel(
        feature_names=tuple(feature_names),
        params=params,
        seed=seed,
        base_score=base,
        trees=tuple(trees),
        training_loss=tuple(losses),
    )


_ROUTER_CACHE: dict = {}


def predict_matrix(model: GbtModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise MissingFeature(
            f"expected {len(model.feature_names)} feature columns, got {X.shape}"
        )
    if not model.trees:
        return np.full(X.shape[0], model.base_score)
    key = id(model)
    router = _ROUTER_CACHE.get(key)
    if router is None or router[0] is not model:
        router = (model, _EnsembleRouter(model))
        _ROUTER_CACHE.clear()  # keep at most one cached ensemble
        _ROUTER_CACHE[key] = router
    return model.base_score + model.params.learning_rate * router[1].predict_sum(X)


def predict(model: GbtModel, features: Mapping[str, float]) -> float:
    """Predict a single row given by feature name."""
    missing = [name for name in model.feature_names if name not in features]
    if missing:
        raise MissingFeature(f"missing features: {missing}")
    row = np.array([[float(features[name]) for name in model.feature_names]])
    return float(predict_matrix(model, row)[0])


# --- cross-validated grid search -----------------------------------------------------

@dataclass(frozen=True)
class GridSearchResult:
    best: GbtParams
    cells: tuple  # ((params, mean validation MAE), ...) in evaluation order


def grid_search_cv(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    grid: Mapping[str, Sequence],
    k_folds: int,
    seed: int,
) -> GridSearchResult:
    """Pick hyperparameters by k-fold mean validation MAE.

    The fold split shuffles rows once with the given seed. Exact MAE ties
    break toward smaller (iterations, depth, l2, learning_rate).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if k_folds < 2:
        raise FoldTooSmall("need k_folds >= 2")
    if y.size < k_folds:
        raise FoldTooSmall(f"cannot split {y.size} rows into {k_folds} folds")
    if not grid:
        raise ValueError("empty grid")

    defaults = GbtParams()
    axes = {
        "depth": [int(v) for v in grid.get("depth", [defaults.depth])],
        "iterations": [int(v) for v in grid.get("iterations", [defaults.iterations])],
        "l2": [float(v) for v in grid.get("l2", [defaults.l2])],
        "learning_rate": [float(v) for v in grid.get("learning_rate", [defaults.learning_rate])],
    }
    unknown = set(grid) - set(axes)
    if unknown:
        raise ValueError(f"unknown grid axes: {sorted(unknown)}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(y.size)
    folds = np.array_split(perm, k_folds)

    cells = []
    for depth, iterations, l2, lr in product(
        axes["depth"], axes["iterations"], axes["l2"], axes["learning_rate"]
    ):
        params = GbtParams(depth=depth, iterations=iterations, l2=l2, learning_rate=lr)
        maes = []
        for fold in folds:
            mask = np.ones(y.size, dtype=bool)
            mask[fold] = False
            fitted = train_gbt(X[mask], y[mask], feature_names, params, seed=seed)
            maes.append(metrics(predict_matrix(fitted, X[fold]), y[fold])["mae"])
        cells.append((params, float(np.mean(maes))))

    best = min(
        cells,
        key=lambda cell: (
            cell[1],
            cell[0].iterations,
            cell[0].depth,
            cell[0].l2,
            cell[0].learning_rate,
        ),
    )[0]
    return GridSearchResult(best=best, cells=tuple(cells))


def metrics(predictions: Sequence[float], truth: Sequence[float]) -> dict:
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predictions.shape != truth.shape or predictions.size == 0:
        raise LengthMismatch(
            f"need equal-length non-empty vectors, got {predictions.shape} and {truth.shape}"
        )
    err = predictions - truth
    return {"mae": float(np.abs(err).mean()), "mse": float((err * err).mean())}


# --- serialization -------------------------------------------------------------------

def model_to_dict(model: GbtModel, scaler: TargetScaler | None = None) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "feature_names": list(model.feature_names),
        "hyperparams": {
            "depth": model.params.depth,
            "iterations": model.params.iterations,
            "l2": model.params.l2,
            "learning_rate": model.params.learning_rate,
        },
        "seed": model.seed,
        "base_score": model.base_score,
        "scaler": (
            {"observed_min": scaler.observed_min, "observed_max": scaler.observed_max}
            if scaler
            else None
        ),
        "training_loss": list(model.training_loss),
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "value": tree.value.tolist(),
                "cover": tree.cover.tolist(),
            }
            for tree in model.trees
        ],
    }


def model_from_dict(doc: dict) -> tuple:
    """Return (model, scaler-or-None) from the JSON document form."""
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {doc.get('schema_version')!r}")
    hp = doc["hyperparams"]
    params = GbtParams(
        depth=int(hp["depth"]),
        iterations=int(hp["iterations"]),
        l2=float(hp["l2"]),
        learning_rate=float(hp["learning_rate"]),
    )
    trees = tuple(
        Tree(
            feature=np.array(t["feature"], dtype=np.int64),
            threshold=np.array(t["threshold"], dtype=float),
            left=np.array(t["left"], dtype=np.int64),
            right=np.array(t["right"], dtype=np.int64),
            value=np.array(t["value"], dtype=float),
            cover=np.array(t["cover"], dtype=float),
        )
        for t in doc["trees"]
    )
    model = GbtModel(
        feature_names=tuple(doc["feature_names"]),
        params=params,
        seed=int(doc["seed"]),
        base_score=float(doc["base_score"]),
        trees=trees,
        training_loss=tuple(doc.get("training_loss", ())),
    )
    scaler_doc = doc.get("scaler")
    scaler = (
        TargetScaler(float(scaler_doc["observed_min"]), float(scaler_doc["observed_max"]))
        if scaler_doc
        else None
    )
    return model, scaler


def save_model(path, model: GbtModel, scaler: TargetScaler | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(model_to_dict(model, scaler), fh, indent=2)
        fh.write("\n")


def load_model(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
