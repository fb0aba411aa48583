"""Rater standardization, per-image targets, reliability, and luminosity.

Raters use the 1-7 scale very differently, so raw scores are converted to
per-rater z-scores before anything else consumes them. Reliability of the
rating campaign is summarized by Cronbach's alpha with raters as items,
using pairwise deletion so that incomplete rater/image coverage still
yields a defined coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import RatingRecord
from .errors import (
    DegenerateVariance,
    EmptyImage,
    InsufficientOverlap,
    RaterTooFewRatings,
)

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)  # BT.709 RGB coefficients


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    mean: float
    sd: float  # sample sd (n-1 denominator)
    count: int


@dataclass(frozen=True)
class StandardizedRating:
    rater_id: str
    image_id: str
    z: float


@dataclass(frozen=True)
class ImageTarget:
    image_id: str
    mean_z: float
    n_ratings: int


def standardize(ratings: Sequence[RatingRecord]) -> tuple:
    """Convert each rater's scores to z-scores.

    Uses the sample standard deviation (n-1 denominator). A rater whose
    scores have zero spread gets all-zero z-scores instead of being
    dropped, preserving image coverage counts.

    Returns
    -------
    (profiles, standardized)
        Per-rater summary rows and the standardized rating table, both in
        first-appearance order of the input.

    Raises
    ------
    RaterTooFewRatings
        If any rater has fewer than two ratings.
    """
    by_rater: dict = {}
    for rec in ratings:
        by_rater.setdefault(rec.rater_id, []).append(rec)

    profiles = []
    standardized = []
    for rater_id, records in by_rater.items():
        scores = np.array([r.raw_score for r in records], dtype=float)
        if scores.size < 2:
            raise RaterTooFewRatings(f"rater {rater_id!r} has {scores.size} rating(s); need >= 2")
        mean = float(scores.mean())
        sd = float(scores.std(ddof=1))
        profiles.append(RaterProfile(rater_id=rater_id, mean=mean, sd=sd, count=scores.size))
        if sd == 0.0:
            zs = np.zeros_like(scores)
        else:
            zs = (scores - mean) / sd
        standardized.extend(
            StandardizedRating(rater_id=rater_id, image_id=rec.image_id, z=float(z))
            for rec, z in zip(records, zs)
        )
    return profiles, standardized


def image_targets(standardized: Sequence[StandardizedRating]) -> list:
    """Average the z-scores per image; the result is the modeling target."""
    sums: dict = {}
    counts: dict = {}
    for rec in standardized:
        sums[rec.image_id] = sums.get(rec.image_id, 0.0) + rec.z
        counts[rec.image_id] = counts.get(rec.image_id, 0) + 1
    return [
        ImageTarget(image_id=image_id, mean_z=sums[image_id] / counts[image_id], n_ratings=counts[image_id])
        for image_id in sums
    ]


def ratings_matrix(ratings: Sequence[RatingRecord]) -> tuple:
    """Arrange ratings as a raters x images matrix with NaN for missing cells.

    Returns (matrix, rater_ids, image_ids) in first-appearance order.
    """
    rater_ids: list = []
    image_ids: list = []
    rater_pos: dict = {}
    image_pos: dict = {}
    for rec in ratings:
        if rec.rater_id not in rater_pos:
            rater_pos[rec.rater_id] = len(rater_ids)
            rater_ids.append(rec.rater_id)
        if rec.image_id not in image_pos:
            image_pos[rec.image_id] = len(image_ids)
            image_ids.append(rec.image_id)
    matrix = np.full((len(rater_ids), len(image_ids)), np.nan)
    for rec in ratings:
        matrix[rater_pos[rec.rater_id], image_pos[rec.image_id]] = rec.raw_score
    return matrix, rater_ids, image_ids


def cronbach_alpha(matrix: np.ndarray) -> float:
    """Cronbach's alpha over a raters x images matrix, raters as items.

    Missing cells (NaN) are handled by pairwise deletion: each rater
    variance uses that rater's observed images, and each rater-pair
    covariance uses the images both rated. The total-score variance is
    assembled as ``sum(var_i) + 2 * sum(cov_ij)``.

    Raises
    ------
    InsufficientOverlap
        If a rater has fewer than two observations or a rater pair shares
        fewer than two images.
    DegenerateVariance
        If the assembled total-score variance is zero.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("expected a 2-D raters x images matrix")
    k, n_images = matrix.shape
    if k < 2 or n_images < 2:
        raise InsufficientOverlap(f"need >= 2 raters and >= 2 images, got {k} x {n_images}")

    observed = np.isfinite(matrix)
    variances = np.empty(k)
    for i in range(k):
        values = matrix[i, observed[i]]
        if values.size < 2:
            raise InsufficientOverlap(f"rater row {i} has {values.size} observation(s); need >= 2")
        variances[i] = values.var(ddof=1)

    cov_sum = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            both = observed[i] & observed[j]
            m = int(both.sum())
            if m < 2:
                raise InsufficientOverlap(f"rater rows {i} and {j} share {m} image(s); need >= 2")
            xi = matrix[i, both]
            xj = matrix[j, both]
            cov_sum += float(((xi - xi.mean()) * (xj - xj.mean())).sum() / (m - 1))

    var_items = float(variances.sum())
    var_total = var_items + 2.0 * cov_sum
    if abs(var_total) <= 1e-12 * max(var_items, 1.0):
        raise DegenerateVariance("total-score variance is zero")
    return (k / (k - 1.0)) * (1.0 - var_items / var_total)


def luminosity(pixels: np.ndarray) -> float:
    """Mean perceived brightness of an RGB pixel array (channels 0-255)."""
    arr = np.asarray(pixels, dtype=float)
    if arr.size == 0:
        raise EmptyImage("pixel array is empty")
    if arr.shape[-1] != 3:
        raise ValueError("expected RGB pixels with a trailing channel axis of size 3")
    flat = arr.reshape(-1, 3)
    luma = flat @ np.array(LUMA_WEIGHTS)
    return float(luma.mean())


def luminosity_rating_correlation(luminosities: Sequence[float], mean_ratings: Sequence[float]) -> float:
    """Pearson correlation between image brightness and raw mean ratings."""
    from .stats import pearson_r

    return pearson_r(np.asarray(luminosities, dtype=float), np.asarray(mean_ratings, dtype=float))
