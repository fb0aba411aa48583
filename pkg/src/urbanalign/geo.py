"""Spatial primitives: point index, neighbor weights, autocorrelation.

Distances are Euclidean on planar meter coordinates throughout. The point
index is a uniform grid hash; every query is defined to return exactly the
brute-force result set, with deterministic tie handling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DegenerateVariance, TooFewPoints

HOTSPOT_Z = 1.96  # two-sided 0.05


class WeightScheme(Enum):
    KNN_BINARY = "KnnBinary"
    KNN_ROW_STANDARDIZED = "KnnRowStandardized"
    KNN_PLUS_SELF = "KnnPlusSelf"


class PointIndex:
    """Uniform grid hash over 2-D points for radius and k-NN queries."""

    def __init__(self, points: Sequence[tuple], cell_size: float | None = None):
        """``points`` is a sequence of (id, x, y) triples."""
        self.ids = [p[0] for p in points]
        self.xy = np.array([(p[1], p[2]) for p in points], dtype=float).reshape(-1, 2)
        n = len(self.ids)
        if cell_size is None:
            if n >= 2:
                span = max(float(np.ptp(self.xy[:, 0])), float(np.ptp(self.xy[:, 1])))
                cell_size = span / math.sqrt(n) if span > 0 else 1.0
            else:
                cell_size = 1.0
        self.cell_size = float(cell_size)
        self._cells: dict = {}
        for i in range(n):
            self._cells.setdefault(self._cell_of(self.xy[i, 0], self.xy[i, 1]), []).append(i)

    def __len__(self) -> int:
        return len(self.ids)

    def _cell_of(self, x: float, y: float) -> tuple:
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size))

    def _candidates_in_box(self, cx_lo, cx_hi, cy_lo, cy_hi) -> list:
        found = []
        for cx in range(cx_lo, cx_hi + 1):
            for cy in range(cy_lo, cy_hi + 1):
                found.extend(self._cells.get((cx, cy), ()))
        return found

    def radius_query_indices(self, center: tuple, radius_m: float) -> list:
        """Indices of all points with distance <= radius (boundary inclusive)."""
        if radius_m <= 0:
            raise ValueError("radius must be positive")
        if not self.ids:
            return []
        x, y = center
        cx_lo, cy_lo = self._cell_of(x - radius_m, y - radius_m)
        cx_hi, cy_hi = self._cell_of(x + radius_m, y + radius_m)
        cand = self._candidates_in_box(cx_lo, cx_hi, cy_lo, cy_hi)
        if not cand:
            return []
        cand = np.array(sorted(cand), dtype=int)
        d2 = ((self.xy[cand] - (x, y)) ** 2).sum(axis=1)
        return [int(i) for i in cand[d2 <= radius_m * radius_m]]

    def radius_query(self, center: tuple, radius_m: float) -> list:
        """Ids of all points within the radius, in input order."""
        return [self.ids[i] for i in self.radius_query_indices(center, radius_m)]

    def knn_indices(self, i: int, k: int) -> list:
        """Indices of the k nearest points other than ``i`` itself.

        Distance ties are broken by ascending point id. Uses expanding grid
        rings; the search stops once no unexplored cell can hold a closer
        point than the current k-th candidate.
        """
        n = len(self.ids)
        if n <= k:
            raise TooFewPoints(f"k = {k} needs more than k points, have {n}")
        x, y = self.xy[i]
        cx, cy = self._cell_of(x, y)
        best: list = []
        ring = 0
        max_ring = 1 + int(
            max(
                abs(cx - self._cell_of(self.xy[:, 0].min(), 0)[0]),
                abs(cx - self._cell_of(self.xy[:, 0].max(), 0)[0]),
                abs(cy - self._cell_of(0, self.xy[:, 1].min())[1]),
                abs(cy - self._cell_of(0, self.xy[:, 1].max())[1]),
            )
        )
        while True:
            if ring == 0:
                cells = [(cx, cy)]
            else:
                cells = []
                for dx in range(-ring, ring + 1):
                    cells.append((cx + dx, cy - ring))
                    cells.append((cx + dx, cy + ring))
                for dy in range(-ring + 1, ring):
                    cells.append((cx - ring, cy + dy))
                    cells.append((cx + ring, cy + dy))
            for cell in cells:
                for j in self._cells.get(cell, ()):
                    if j == i:
                        continue
                    d2 = float(((self.xy[j] - (x, y)) ** 2).sum())
                    best.append((d2, self.ids[j], j))
            # points in rings > `ring` are at least (ring * cell) away
            ring_floor = ring * self.cell_size
            if len(best) >= k:
                best.sort()
                kth = best[k - 1][0]
                if kth <= ring_floor * ring_floor or ring > max_ring:
                    return [j for _, _, j in best[:k]]
            elif ring > max_ring:
                raise TooFewPoints(f"only {len(best)} neighbors found for k = {k}")
            ring += 1


@dataclass(frozen=True)
class WeightMatrix:
    """Sparse k-NN weights: per row, neighbor indices and weights."""

    neighbors: np.ndarray  # (n, k) or (n, k+1) with self
    weights: np.ndarray  # same shape
    scheme: WeightScheme


def knn_weights(index: PointIndex, k: int, scheme: WeightScheme) -> WeightMatrix:
    """Build a k-nearest-neighbor weight matrix under the given scheme."""
    n = len(index)
    if n <= k:
        raise TooFewPoints(f"k = {k} needs more than k points, have {n}")
    rows = np.array([index.knn_indices(i, k) for i in range(n)], dtype=int)
    if scheme is WeightScheme.KNN_BINARY:
        return WeightMatrix(neighbors=rows, weights=np.ones((n, k)), scheme=scheme)
    if scheme is WeightScheme.KNN_ROW_STANDARDIZED:
        return WeightMatrix(neighbors=rows, weights=np.full((n, k), 1.0 / k), scheme=scheme)
    if scheme is WeightScheme.KNN_PLUS_SELF:
        with_self = np.column_stack([np.arange(n), rows])
        return WeightMatrix(neighbors=with_self, weights=np.ones((n, k + 1)), scheme=scheme)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class MoranResult:
    i_statistic: float
    expected_i: float
    z: float
    p_permutation: float
    n_permutations: int


def morans_i(
    values: Sequence[float],
    weights: WeightMatrix,
    n_permutations: int = 999,
    seed: int = 0,
) -> MoranResult:
    """Global spatial autocorrelation with a permutation p-value.

    Expects row-standardized weights. The p-value comes from randomly
    permuting the values across locations: two-sided, computed as twice the
    smaller tail proportion (with the observed statistic counted once),
    capped at 1. The z-score is taken against the permutation distribution.
    """
    if weights.scheme is not WeightScheme.KNN_ROW_STANDARDIZED:
        raise ValueError("Moran's I expects row-standardized weights")
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 4:
        raise ValueError(f"need n >= 4, got {n}")
    if n != weights.neighbors.shape[0]:
        raise ValueError("values and weight matrix disagree on n")
    if x.var() == 0.0:
        raise DegenerateVariance("values have zero variance")

    nbr = weights.neighbors
    w = weights.weights
    s0 = float(w.sum())

    def statistic(vec: np.ndarray) -> float:
        dev = vec - vec.mean()
        lag = (dev[nbr] * w).sum(axis=1)
        return float(n / s0 * (dev * lag).sum() / (dev * dev).sum())

    i_obs = statistic(x)
    rng = np.random.default_rng(seed)
    sims = np.empty(n_permutations)
    for p in range(n_permutations):
        sims[p] = statistic(rng.permutation(x))
    p_high = (1 + int((sims >= i_obs).sum())) / (n_permutations + 1)
    p_low = (1 + int((sims <= i_obs).sum())) / (n_permutations + 1)
    p_two = min(1.0, 2.0 * min(p_high, p_low))
    sd = float(sims.std(ddof=1))
    z = (i_obs - float(sims.mean())) / sd if sd > 0 else math.inf

    return MoranResult(
        i_statistic=i_obs,
        expected_i=-1.0 / (n - 1),
        z=z,
        p_permutation=p_two,
        n_permutations=n_permutations,
    )


@dataclass(frozen=True)
class HotspotResult:
    z_scores: np.ndarray
    classes: list  # "hot" | "cold" | "none" per point


def getis_ord_gstar(values: Sequence[float], index: PointIndex, k: int) -> HotspotResult:
    """Local high/low clustering z-scores with a k-NN-plus-self neighborhood.

    Binary weights over each point's k nearest neighbors and itself; the
    standard mean/variance normalization yields a z-score per point, flagged
    hot at z >= 1.96 and cold at z <= -1.96.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < k + 2:
        raise TooFewPoints(f"need n >= k + 2 = {k + 2}, got {n}")
    if len(index) != n:
        raise ValueError("values and index disagree on n")
    if x.var() == 0.0:
        raise DegenerateVariance("values have zero variance")

    wm = knn_weights(index, k, WeightScheme.KNN_PLUS_SELF)
    x_bar = float(x.mean())
    s = math.sqrt(float((x * x).mean()) - x_bar * x_bar)
    w_i = float(k + 1)  # binary weights, k neighbors plus self
    denom = s * math.sqrt((n * w_i - w_i * w_i) / (n - 1))
    z = (x[wm.neighbors].sum(axis=1) - x_bar * w_i) / denom
    classes = ["hot" if v >= HOTSPOT_Z else "cold" if v <= -HOTSPOT_Z else "none" for v in z]
    return HotspotResult(z_scores=z, classes=classes)
