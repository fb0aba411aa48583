import numpy as np
import pytest

from urbanalign.alignment import (
    Agreement,
    AgreementRecord,
    PointScore,
    agreement_summary,
    buffer_scores,
    classify_agreement,
    prediction_distribution,
    score_distributions,
)
from urbanalign.domain import PpgisLabel, PpgisPoint
from urbanalign.errors import DegenerateSigma, EmptyInput
from urbanalign.geo import PointIndex


def _dist(mu=0.0, sigma=0.2):
    from urbanalign.alignment import PredictionDistribution

    return PredictionDistribution(mu=mu, sigma=sigma, n=100)


def _score(value, label=PpgisLabel.ATTRACTIVE):
    return PointScore(point_id="p", label=label, mean_pred=value, n_images=5)


# --- buffer scores -----------------------------------------------------------

def test_point_below_min_images_excluded():
    images = [(f"i{k}", float(k), 0.0) for k in range(4)]
    index = PointIndex(images)
    preds = {f"i{k}": 0.1 for k in range(4)}
    pts = [PpgisPoint("p", 0.0, 0.0, PpgisLabel.ATTRACTIVE)]
    scores, excluded = buffer_scores(pts, index, preds, radius_m=50, min_images=5)
    assert scores == []
    assert excluded[0].n_images == 4


def test_buffer_mean_of_five():
    images = [(f"i{k}", float(k), 0.0) for k in range(5)]
    index = PointIndex(images)
    preds = {f"i{k}": 0.1 * (k + 1) for k in range(5)}
    pts = [PpgisPoint("p", 2.0, 0.0, PpgisLabel.ATTRACTIVE)]
    scores, excluded = buffer_scores(pts, index, preds, radius_m=50, min_images=5)
    assert excluded == []
    assert scores[0].mean_pred == pytest.approx(0.3)
    assert scores[0].n_images == 5


def test_buffer_matches_brute_force(rng):
    images = [(f"i{k}", float(x), float(y)) for k, (x, y) in enumerate(rng.uniform(0, 500, (200, 2)))]
    preds = {pid: float(rng.normal()) for pid, _, _ in images}
    pts = [
        PpgisPoint(f"p{j}", float(x), float(y), PpgisLabel.ATTRACTIVE)
        for j, (x, y) in enumerate(rng.uniform(0, 500, (40, 2)))
    ]
    index = PointIndex(images)
    scores, excluded = buffer_scores(pts, index, preds, radius_m=60, min_images=3)
    got = {s.point_id: (s.mean_pred, s.n_images) for s in scores}
    for pt in pts:
        in_range = [
            preds[pid]
            for pid, x, y in images
            if np.hypot(x - pt.x, y - pt.y) <= 60
        ]
        if len(in_range) < 3:
            assert pt.point_id not in got
        else:
            mean, count = got[pt.point_id]
            assert count == len(in_range)
            assert mean == pytest.approx(np.mean(in_range), abs=1e-12)


def test_buffer_insertion_order_irrelevant(rng):
    images = [(f"i{k}", float(x), float(y)) for k, (x, y) in enumerate(rng.uniform(0, 100, (30, 2)))]
    preds = {pid: float(rng.normal()) for pid, _, _ in images}
    pts = [PpgisPoint("p", 50.0, 50.0, PpgisLabel.ATTRACTIVE)]
    a, _ = buffer_scores(pts, PointIndex(images), preds, 60, 1)
    b, _ = buffer_scores(pts, PointIndex(list(reversed(images))), preds, 60, 1)
    assert a[0].mean_pred == pytest.approx(b[0].mean_pred, abs=1e-12)
    assert a[0].n_images == b[0].n_images


# --- classification ------------------------------------------------------------

def test_strict_agreement_attractive():
    record = classify_agreement(_score(0.25), _dist())
    assert record.classification is Agreement.STRICT_AGREE


def test_moderate_agreement_attractive():
    assert classify_agreement(_score(0.1), _dist()).classification is Agreement.MODERATE_AGREE


def test_disagree_attractive():
    assert classify_agreement(_score(-0.05), _dist()).classification is Agreement.DISAGREE


def test_unattractive_mirrored():
    ua = PpgisLabel.UNATTRACTIVE
    assert classify_agreement(_score(-0.25, ua), _dist()).classification is Agreement.STRICT_AGREE
    assert classify_agreement(_score(-0.1, ua), _dist()).classification is Agreement.MODERATE_AGREE
    assert classify_agreement(_score(0.05, ua), _dist()).classification is Agreement.DISAGREE


def test_boundaries_fall_to_weaker_class():
    dist = _dist(mu=0.0, sigma=0.2)
    assert classify_agreement(_score(0.2), dist).classification is Agreement.MODERATE_AGREE
    assert classify_agreement(_score(0.0), dist).classification is Agreement.DISAGREE
    ua = PpgisLabel.UNATTRACTIVE
    assert classify_agreement(_score(-0.2, ua), dist).classification is Agreement.MODERATE_AGREE
    assert classify_agreement(_score(0.0, ua), dist).classification is Agreement.DISAGREE


def test_strict_implies_moderate(rng):
    dist = _dist(0.1, 0.3)
    for value in rng.uniform(-2, 2, 200):
        for label in PpgisLabel:
            cls = classify_agreement(_score(float(value), label), dist).classification
            if cls is Agreement.STRICT_AGREE:
                if label is PpgisLabel.ATTRACTIVE:
                    assert value > dist.mu
                else:
                    assert value < dist.mu


def test_classification_affine_invariant(rng):
    values = rng.normal(size=100)
    dist = prediction_distribution(values)
    a, b = 2.5, -0.7
    dist2 = prediction_distribution(a * values + b)
    for v in rng.normal(size=50):
        for label in PpgisLabel:
            c1 = classify_agreement(_score(float(v), label), dist).classification
            c2 = classify_agreement(_score(float(a * v + b), label), dist2).classification
            assert c1 is c2


def test_degenerate_sigma():
    with pytest.raises(DegenerateSigma):
        classify_agreement(_score(0.5), _dist(sigma=0.0))


# --- summaries --------------------------------------------------------------------

def _records(label, classes):
    return [
        AgreementRecord(f"p{i}", label, cls) for i, cls in enumerate(classes)
    ]


def test_summary_all_strict():
    records = _records(PpgisLabel.ATTRACTIVE, [Agreement.STRICT_AGREE] * 4)
    summary = agreement_summary(records)[0]
    assert summary.strict_rate == 1.0
    assert summary.moderate_rate == 1.0


def test_summary_half_moderate():
    records = _records(
        PpgisLabel.UNATTRACTIVE,
        [Agreement.DISAGREE, Agreement.MODERATE_AGREE, Agreement.DISAGREE, Agreement.MODERATE_AGREE],
    )
    summary = agreement_summary(records)[0]
    assert summary.strict_rate == 0.0
    assert summary.moderate_rate == 0.5


def test_summary_moderate_includes_strict():
    records = _records(
        PpgisLabel.ATTRACTIVE,
        [Agreement.STRICT_AGREE, Agreement.MODERATE_AGREE, Agreement.DISAGREE],
    )
    summary = agreement_summary(records)[0]
    assert summary.strict_rate == pytest.approx(1 / 3)
    assert summary.moderate_rate == pytest.approx(2 / 3)


def test_summary_empty():
    with pytest.raises(EmptyInput):
        agreement_summary([])


# --- score distributions ------------------------------------------------------------

def test_stats_single_score():
    stats = score_distributions([_score(0.42)])[0]
    assert (stats.mean, stats.sd, stats.minimum, stats.median, stats.maximum) == (
        0.42, 0.0, 0.42, 0.42, 0.42,
    )


def test_stats_hand_values():
    scores = [_score(v) for v in (-1.0, 0.0, 1.0)]
    stats = score_distributions(scores)[0]
    assert stats.mean == 0.0
    assert stats.median == 0.0
    assert stats.sd == pytest.approx(1.0)


def test_stats_median_lower_middle():
    scores = [_score(v) for v in (1.0, 2.0, 3.0, 4.0)]
    assert score_distributions(scores)[0].median == 2.0


def test_stats_match_recount(rng):
    values = rng.normal(size=31)
    scores = [_score(float(v)) for v in values]
    stats = score_distributions(scores)[0]
    assert stats.mean == pytest.approx(values.mean(), abs=1e-12)
    assert stats.sd == pytest.approx(values.std(ddof=1), abs=1e-12)
    assert stats.minimum == values.min()
    assert stats.maximum == values.max()
    assert stats.median == float(np.sort(values)[15])
