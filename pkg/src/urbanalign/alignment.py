"""Buffer aggregation of predictions and agreement classification.

Each mapped point gets the mean predicted attractiveness of all images
within a 50 m buffer (points with fewer than five images are excluded but
reported). Agreement compares that mean against the distribution of
predictions over all images: strict agreement needs the mean beyond one
standard deviation on the label's side, moderate agreement only the
matching side of the mean. Boundary values fall to the weaker class.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .domain import PpgisLabel, PpgisPoint
from .errors import DegenerateSigma, EmptyInput
from .geo import PointIndex

DEFAULT_BUFFER_M = 50.0
DEFAULT_MIN_IMAGES = 5


class Agreement(Enum):
    STRICT_AGREE = "StrictAgree"
    MODERATE_AGREE = "ModerateAgree"
    DISAGREE = "Disagree"


@dataclass(frozen=True)
class PredictionDistribution:
    """Mean and spread of model outputs over all predicted images."""

    mu: float
    sigma: float  # sample standard deviation
    n: int


def prediction_distribution(predictions: Sequence[float]) -> PredictionDistribution:
    values = np.asarray(predictions, dtype=float)
    if values.size == 0:
        raise EmptyInput("no predictions")
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return PredictionDistribution(mu=float(values.mean()), sigma=sigma, n=int(values.size))


@dataclass(frozen=True)
class PointScore:
    point_id: str
    label: PpgisLabel
    mean_pred: float
    n_images: int


@dataclass(frozen=True)
class ExcludedPoint:
    point_id: str
    label: PpgisLabel
    n_images: int


@dataclass(frozen=True)
class AgreementRecord:
    point_id: str
    label: PpgisLabel
    classification: Agreement


def buffer_scores(
    points: Sequence[PpgisPoint],
    image_index: PointIndex,
    predictions: Mapping[str, float],
    radius_m: float = DEFAULT_BUFFER_M,
    min_images: int = DEFAULT_MIN_IMAGES,
) -> tuple:
    """Average predictions of the images inside each point's buffer.

    Returns (scores, excluded): points with fewer than ``min_images``
    in-range images land in the excluded list with their counts rather
    than being silently dropped.
    """
    scores = []
    excluded = []
    for pt in points:
        ids = image_index.radius_query((pt.x, pt.y), radius_m)
        preds = [predictions[i] for i in ids if i in predictions]
        if len(preds) < min_images:
            excluded.append(ExcludedPoint(point_id=pt.point_id, label=pt.label, n_images=len(preds)))
            continue
        scores.append(
            PointScore(
                point_id=pt.point_id,
                label=pt.label,
                mean_pred=float(np.mean(preds)),
                n_images=len(preds),
            )
        )
    return scores, excluded


def classify_agreement(score: PointScore, dist: PredictionDistribution) -> AgreementRecord:
    """Strict/moderate/disagree classification against mu and sigma.

    For attractive points: strict iff the buffer mean exceeds mu + sigma,
    moderate iff it exceeds mu; unattractive points mirror this below
    mu - sigma and mu. All inequalities are strict, so exact boundary
    values classify as the weaker outcome.
    """
    if dist.sigma <= 0.0:
        raise DegenerateSigma("prediction distribution has zero sigma")
    v = score.mean_pred
    if score.label is PpgisLabel.ATTRACTIVE:
        if v > dist.mu + dist.sigma:
            cls = Agreement.STRICT_AGREE
        elif v > dist.mu:
            cls = Agreement.MODERATE_AGREE
        else:
            cls = Agreement.DISAGREE
    else:
        if v < dist.mu - dist.sigma:
            cls = Agreement.STRICT_AGREE
        elif v < dist.mu:
            cls = Agreement.MODERATE_AGREE
        else:
            cls = Agreement.DISAGREE
    return AgreementRecord(point_id=score.point_id, label=score.label, classification=cls)


@dataclass(frozen=True)
class AgreementSummary:
    label: PpgisLabel
    n: int
    strict_rate: float
    moderate_rate: float  # strict-inclusive


def agreement_summary(records: Sequence[AgreementRecord]) -> list:
    """Per-label strict and moderate agreement rates.

    The moderate rate counts strict agreements too; the reported moderate
    figure is the share of points at least moderately aligned.
    """
    if not records:
        raise EmptyInput("no agreement records")
    out = []
    for label in PpgisLabel:
        subset = [r for r in records if r.label is label]
        if not subset:
            continue
        n = len(subset)
        strict = sum(1 for r in subset if r.classification is Agreement.STRICT_AGREE)
        moderate = strict + sum(
            1 for r in subset if r.classification is Agreement.MODERATE_AGREE
        )
        out.append(
            AgreementSummary(
                label=label, n=n, strict_rate=strict / n, moderate_rate=moderate / n
            )
        )
    return out


@dataclass(frozen=True)
class ScoreStats:
    label: PpgisLabel
    mean: float
    sd: float
    minimum: float
    median: float
    maximum: float


def score_distributions(scores: Sequence[PointScore]) -> list:
    """Descriptive statistics of buffer means per label.

    The median of an even-sized sample is the lower middle value; the
    standard deviation is the sample (n-1) form.
    """
    if not scores:
        raise EmptyInput("no point scores")
    out = []
    for label in PpgisLabel:
        values = np.sort([s.mean_pred for s in scores if s.label is label])
        if values.size == 0:
            continue
        out.append(
            ScoreStats(
                label=label,
                mean=float(values.mean()),
                sd=float(values.std(ddof=1)) if values.size > 1 else 0.0,
                minimum=float(values[0]),
                median=float(values[(values.size - 1) // 2]),
                maximum=float(values[-1]),
            )
        )
    return out
