"""Shared data model and dataset validation.

All record types are frozen dataclasses: once a dataset is ingested it is
immutable, so tables can be shared freely across threads. ``validate_dataset``
is the single gate every external dataset passes through; downstream stages
assume its invariants hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

CANONICAL_FEATURES = (
    "road",
    "sidewalk",
    "building",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "road_transport",
)

VEHICLE_SUBCLASSES = ("car", "truck", "bus", "train", "motorcycle", "bicycle")

PROPORTION_SUM_TOL = 1e-6


class PpgisLabel(Enum):
    ATTRACTIVE = "Attractive"
    UNATTRACTIVE = "Unattractive"


class GridSemantic(Enum):
    POPULATION_PRESENCE_HOURLY = "PopulationPresenceHourly"
    NOISE_LAEQ = "NoiseLAeq"
    LAND_USE_CLASS = "LandUseClass"


@dataclass(frozen=True)
class RatingRecord:
    """One rater's 1-7 score for one image."""

    rater_id: str
    image_id: str
    raw_score: int


@dataclass(frozen=True)
class ImageRecord:
    """Image metadata: planar location in meters plus capture date."""

    image_id: str
    x: float
    y: float
    capture_year: int
    capture_month: int


@dataclass(frozen=True)
class FeatureVector:
    """Per-image proportions of the eight canonical segmented classes.

    Classes absent from the source table default to 0; unlisted segmentation
    classes may absorb the remainder, so the proportions sum to at most 1.
    """

    image_id: str
    proportions: tuple  # aligned with CANONICAL_FEATURES

    def as_dict(self) -> dict:
        return dict(zip(CANONICAL_FEATURES, self.proportions))

    @staticmethod
    def from_mapping(image_id: str, values: dict) -> "FeatureVector":
        props = tuple(float(values.get(name, 0.0)) for name in CANONICAL_FEATURES)
        return FeatureVector(image_id=image_id, proportions=props)


@dataclass(frozen=True)
class PpgisPoint:
    """A resident-mapped location labeled attractive or unattractive."""

    point_id: str
    x: float
    y: float
    label: PpgisLabel
    comment: Optional[str] = None


@dataclass(frozen=True)
class GridLayer:
    """Regular raster with lower-left origin and square cells.

    ``values`` is ``(nrows, ncols)`` for single-band layers or
    ``(24, nrows, ncols)`` for hourly population slabs; row 0 is the
    southernmost row. Missing cells are NaN.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray
    semantic: GridSemantic

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        v = self.values
        if self.semantic is GridSemantic.POPULATION_PRESENCE_HOURLY:
            if v.ndim != 3 or v.shape[0] != 24:
                raise ValueError("hourly population layer needs exactly 24 slabs")
        elif v.ndim != 2:
            raise ValueError("single-band layer must be 2-D")

    @property
    def nrows(self) -> int:
        return self.values.shape[-2]

    @property
    def ncols(self) -> int:
        return self.values.shape[-1]

    def cell_center(self, row: int, col: int) -> tuple:
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (row + 0.5) * self.cell_size,
        )


@dataclass(frozen=True)
class StreetSegment:
    """Street polyline with daily traffic volume and speed limit."""

    segment_id: str
    coords: tuple  # ((x, y), ...) with at least two vertices
    traffic_volume: float  # vehicles/day, >= 0
    speed_limit: float  # km/h, > 0


# --- validation --------------------------------------------------------------

OUT_OF_RANGE_SCORE = "OutOfRangeScore"
MISSING_FOREIGN_KEY = "MissingForeignKey"
MALFORMED_GEOMETRY = "MalformedGeometry"
DUPLICATE_RATING = "DuplicateRating"
DUPLICATE_ID = "DuplicateId"
OUT_OF_RANGE_MONTH = "OutOfRangeMonth"
OUT_OF_RANGE_PROPORTION = "OutOfRangeProportion"
BAD_LABEL = "BadLabel"
UNRATED_IMAGE = "UnratedImage"


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    table: str
    message: str


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add_error(self, code: str, table: str, message: str) -> None:
        self.errors.append(ValidationIssue(code, table, message))

    def add_warning(self, code: str, table: str, message: str) -> None:
        self.warnings.append(ValidationIssue(code, table, message))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": [vars(i) for i in self.errors],
            "warnings": [vars(i) for i in self.warnings],
        }


def validate_dataset(
    ratings: Sequence[RatingRecord],
    images: Sequence[ImageRecord],
    features: Sequence[FeatureVector],
    ppgis: Sequence[PpgisPoint],
) -> ValidationReport:
    """Check every ingest invariant and cross-table reference.

    Returns a report with per-issue error and warning entries. The dataset
    passes iff the error list is empty. Validation is pure: running it twice
    on the same tables yields identical reports.
    """
    report = ValidationReport()

    image_ids = set()
    for rec in images:
        if rec.image_id in image_ids:
            report.add_error(DUPLICATE_ID, "images", f"duplicate image_id {rec.image_id!r}")
        image_ids.add(rec.image_id)
        if not (math.isfinite(rec.x) and math.isfinite(rec.y)):
            report.add_error(
                MALFORMED_GEOMETRY, "images", f"image {rec.image_id!r} has non-finite coordinates"
            )
        if not 1 <= rec.capture_month <= 12:
            report.add_error(
                OUT_OF_RANGE_MONTH,
                "images",
                f"image {rec.image_id!r} capture_month {rec.capture_month} not in 1..12",
            )

    feature_ids = set()
    for fv in features:
        if fv.image_id in feature_ids:
            report.add_error(DUPLICATE_ID, "features", f"duplicate image_id {fv.image_id!r}")
        feature_ids.add(fv.image_id)
        total = 0.0
        for name, value in zip(CANONICAL_FEATURES, fv.proportions):
            if not math.isfinite(value) or value < 0.0 or value > 1.0:
                report.add_error(
                    OUT_OF_RANGE_PROPORTION,
                    "features",
                    f"image {fv.image_id!r} feature {name!r} = {value} outside [0, 1]",
                )
            else:
                total += value
        if total > 1.0 + PROPORTION_SUM_TOL:
            report.add_error(
                OUT_OF_RANGE_PROPORTION,
                "features",
                f"image {fv.image_id!r} proportions sum to {total:.6f} > 1",
            )

    seen_pairs = set()
    rated_ids = set()
    for rec in ratings:
        key = (rec.rater_id, rec.image_id)
        if key in seen_pairs:
            report.add_error(
                DUPLICATE_RATING, "ratings", f"duplicate rating for rater/image pair {key!r}"
            )
        seen_pairs.add(key)
        rated_ids.add(rec.image_id)
        if not isinstance(rec.raw_score, int) or not 1 <= rec.raw_score <= 7:
            report.add_error(
                OUT_OF_RANGE_SCORE,
                "ratings",
                f"rating by {rec.rater_id!r} on {rec.image_id!r} has raw_score {rec.raw_score!r}",
            )
        if rec.image_id not in image_ids:
            report.add_error(
                MISSING_FOREIGN_KEY,
                "ratings",
                f"rating references unknown image_id {rec.image_id!r}",
            )
        elif rec.image_id not in feature_ids:
            report.add_error(
                MISSING_FOREIGN_KEY,
                "ratings",
                f"rated image {rec.image_id!r} has no feature vector",
            )

    point_ids = set()
    for pt in ppgis:
        if pt.point_id in point_ids:
            report.add_error(DUPLICATE_ID, "ppgis", f"duplicate point_id {pt.point_id!r}")
        point_ids.add(pt.point_id)
        if not (math.isfinite(pt.x) and math.isfinite(pt.y)):
            report.add_error(
                MALFORMED_GEOMETRY, "ppgis", f"point {pt.point_id!r} has non-finite coordinates"
            )
        if not isinstance(pt.label, PpgisLabel):
            report.add_error(BAD_LABEL, "ppgis", f"point {pt.point_id!r} has label {pt.label!r}")

    for image_id in sorted(image_ids - rated_ids):
        report.add_warning(UNRATED_IMAGE, "images", f"image {image_id!r} has no ratings")

    return report


@dataclass(frozen=True)
class CoverageStats:
    per_image: dict
    per_rater: dict
    min_per_image: int
    mean_per_image: float
    min_per_rater: int
    mean_per_rater: float


def coverage_summary(
    ratings: Sequence[RatingRecord], images: Sequence[ImageRecord]
) -> CoverageStats:
    """Tally rating counts per image and per rater.

    Images present in the image table but never rated count as zero, which
    pulls ``min_per_image`` down to 0.
    """
    per_image = {rec.image_id: 0 for rec in images}
    per_rater: dict = {}
    for rec in ratings:
        per_image[rec.image_id] = per_image.get(rec.image_id, 0) + 1
        per_rater[rec.rater_id] = per_rater.get(rec.rater_id, 0) + 1

    image_counts = list(per_image.values())
    rater_counts = list(per_rater.values())
    return CoverageStats(
        per_image=per_image,
        per_rater=per_rater,
        min_per_image=min(image_counts) if image_counts else 0,
        mean_per_image=float(np.mean(image_counts)) if image_counts else 0.0,
        min_per_rater=min(rater_counts) if rater_counts else 0,
        mean_per_rater=float(np.mean(rater_counts)) if rater_counts else 0.0,
    )
