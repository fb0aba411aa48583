import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from urbanalign.domain import (
    FeatureVector,
    ImageRecord,
    PpgisLabel,
    PpgisPoint,
    RatingRecord,
)


@pytest.fixture
def toy_dataset():
    """Consistent 3-image, 2-rater dataset passing every invariant."""
    images = [
        ImageRecord("i1", 0.0, 0.0, 2015, 6),
        ImageRecord("i2", 100.0, 0.0, 2016, 9),
        ImageRecord("i3", 0.0, 100.0, 2014, 1),
    ]
    features = [
        FeatureVector.from_mapping("i1", {"road": 0.2, "vegetation": 0.5, "sky": 0.1}),
        FeatureVector.from_mapping("i2", {"building": 0.6, "road": 0.3}),
        FeatureVector.from_mapping("i3", {"vegetation": 0.8, "terrain": 0.1}),
    ]
    ratings = [
        RatingRecord("a", "i1", 5),
        RatingRecord("a", "i2", 2),
        RatingRecord("a", "i3", 6),
        RatingRecord("b", "i1", 4),
        RatingRecord("b", "i2", 3),
        RatingRecord("b", "i3", 7),
    ]
    ppgis = [
        PpgisPoint("p1", 10.0, 10.0, PpgisLabel.ATTRACTIVE),
        PpgisPoint("p2", 90.0, 5.0, PpgisLabel.UNATTRACTIVE, comment="loud"),
    ]
    return ratings, images, features, ppgis


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
