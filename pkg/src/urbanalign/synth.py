"""Deterministic synthetic city bundles for end-to-end testing.

The generator plants a known linear ground truth over the eight canonical
image features, derives ratings from it with controllable rater bias and
noise, and places mapped points so that a chosen fraction of them contradict
the visual signal (their labels disagree with the ground truth around them).
Those disagreement-designated points can carry planted contextual shifts,
such as extra noise, which the contrast stage should then recover.

Everything is driven by one seeded generator, so equal specs produce
byte-identical bundles on disk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .context import CATEGORY_ORDER, LandUseCategoryMap, _cells_touching_disk
from .domain import (
    CANONICAL_FEATURES,
    VEHICLE_SUBCLASSES,
    GridLayer,
    GridSemantic,
    ImageRecord,
    PpgisLabel,
    PpgisPoint,
    RatingRecord,
    StreetSegment,
)
from .errors import InfeasibleSpec
from . import io as fmt

DEFAULT_WEIGHTS = {
    "road": -0.5,
    "sidewalk": 0.1,
    "building": 0.35,
    "vegetation": 1.6,
    "terrain": 0.05,
    "sky": -0.4,
    "person": 0.3,
    "road_transport": -0.2,
}

_CLUSTER_IMAGE_RADIUS = 25.0
_POINT_JITTER = 10.0
_IMAGES_PER_POINT = 7
_FEATURE_ALPHA = np.array([2.0, 1.0, 2.0, 3.0, 1.0, 2.0, 0.5, 0.8, 2.0])  # 8 classes + other
_LANDUSE_CODES = (1, 2, 12, 17, 23, 48)  # urban, suburban, park, arable, forest, water


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_images: int = 900
    n_raters: int = 12
    ratings_per_image: int = 10
    n_ppgis_attractive: int = 60
    n_ppgis_unattractive: int = 60
    extent_m: float = 4000.0
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    rater_bias_sd: float = 0.8
    rater_noise_sd: float = 0.4
    discretize: bool = True
    disagreement_fraction: float = 0.25
    noise_shift_db: float = 0.0

    @staticmethod
    def from_dict(doc: Mapping) -> "SynthSpec":
        known = {f for f in SynthSpec.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InfeasibleSpec(f"unknown spec fields: {sorted(unknown)}")
        return SynthSpec(**doc)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_images": self.n_images,
            "n_raters": self.n_raters,
            "ratings_per_image": self.ratings_per_image,
            "n_ppgis_attractive": self.n_ppgis_attractive,
            "n_ppgis_unattractive": self.n_ppgis_unattractive,
            "extent_m": self.extent_m,
            "weights": dict(self.weights),
            "rater_bias_sd": self.rater_bias_sd,
            "rater_noise_sd": self.rater_noise_sd,
            "discretize": self.discretize,
            "disagreement_fraction": self.disagreement_fraction,
            "noise_shift_db": self.noise_shift_db,
        }


@dataclass
class Bundle:
    spec: SynthSpec
    images: list  # ImageRecord
    features_raw: list  # (image_id, {class: proportion}) with vehicle subclasses
    ratings: list  # RatingRecord
    ppgis: list  # PpgisPoint
    population: GridLayer
    noise_layers: list  # [road, rail]
    landuse: GridLayer  # raw land-cover codes
    category_map: LandUseCategoryMap
    segments: list  # StreetSegment
    truth: dict  # image_id -> ground-truth attractiveness
    designated_disagreement: set  # point ids placed to contradict the visual signal


def _check_spec(spec: SynthSpec) -> None:
    if spec.n_images <= 0 or spec.n_raters <= 0 or spec.ratings_per_image <= 0:
        raise InfeasibleSpec("counts must be positive")
    if spec.n_ppgis_attractive <= 0 or spec.n_ppgis_unattractive <= 0:
        raise InfeasibleSpec("need at least one point of each label")
    if spec.extent_m <= 0:
        raise InfeasibleSpec("extent must be positive")
    if spec.ratings_per_image > spec.n_raters:
        raise InfeasibleSpec("ratings_per_image cannot exceed n_raters")
    if not 0.0 <= spec.disagreement_fraction <= 1.0:
        raise InfeasibleSpec("disagreement_fraction must be within [0, 1]")
    if set(spec.weights) != set(CANONICAL_FEATURES):
        raise InfeasibleSpec("weights must cover exactly the canonical features")
    n_points = spec.n_ppgis_attractive + spec.n_ppgis_unattractive
    if spec.n_images < _IMAGES_PER_POINT * n_points:
        raise InfeasibleSpec(
            f"{spec.n_images} images cannot host {n_points} points "
            f"({_IMAGES_PER_POINT} images per point cluster)"
        )
    if spec.n_images * spec.ratings_per_image < 2 * spec.n_raters:
        raise InfeasibleSpec("not enough ratings to give every rater two")


def generate(spec: SynthSpec) -> Bundle:
    """Build the full synthetic dataset bundle for a spec."""
    _check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    n_points = spec.n_ppgis_attractive + spec.n_ppgis_unattractive
    n_clusters = n_points + max(4, n_points // 3)

    # jittered-grid cluster centers keep clusters well separated
    g = math.ceil(math.sqrt(n_clusters))
    cell_w = spec.extent_m / g
    chosen_cells = rng.choice(g * g, size=n_clusters, replace=False)
    jitter = rng.uniform(-0.25, 0.25, size=(n_clusters, 2)) * cell_w
    centers = np.column_stack(
        [(chosen_cells % g + 0.5) * cell_w, (chosen_cells // g + 0.5) * cell_w]
    ) + jitter

    profiles = rng.dirichlet(_FEATURE_ALPHA, size=n_clusters)  # 8 classes + remainder
    weight_vec = np.array([spec.weights[name] for name in CANONICAL_FEATURES])

    # image allocation: hosting clusters first, leftovers round-robin
    counts = np.zeros(n_clusters, dtype=int)
    counts[:n_points] = _IMAGES_PER_POINT
    leftover = spec.n_images - counts.sum()
    counts += np.bincount(np.arange(leftover) % n_clusters, minlength=n_clusters)

    images: list = []
    features_raw: list = []
    truth: dict = {}
    gvals = np.empty(spec.n_images)
    pos = 0
    for ci in range(n_clusters):
        k = counts[ci]
        if k == 0:
            continue
        angles = rng.uniform(0, 2 * math.pi, k)
        radii = _CLUSTER_IMAGE_RADIUS * np.sqrt(rng.uniform(0, 1, k))
        xs = centers[ci, 0] + radii * np.cos(angles)
        ys = centers[ci, 1] + radii * np.sin(angles)
        mix = rng.dirichlet(_FEATURE_ALPHA, size=k)
        props = 0.85 * profiles[ci] + 0.15 * mix  # rows still sum to 1
        years = rng.integers(2009, 2018, k)
        months = rng.integers(1, 13, k)
        veh_split = rng.dirichlet(np.ones(len(VEHICLE_SUBCLASSES)), size=k)
        for j in range(k):
            image_id = f"img{pos:05d}"
            images.append(
                ImageRecord(
                    image_id=image_id,
                    x=float(xs[j]),
                    y=float(ys[j]),
                    capture_year=int(years[j]),
                    capture_month=int(months[j]),
                )
            )
            values = {
                name: float(props[j, i])
                for i, name in enumerate(CANONICAL_FEATURES)
                if name != "road_transport"
            }
            transport = float(props[j, CANONICAL_FEATURES.index("road_transport")])
            for vi, sub in enumerate(VEHICLE_SUBCLASSES):
                values[sub] = transport * float(veh_split[j, vi])
            features_raw.append((image_id, values))
            gval = float(props[j, :8] @ weight_vec)
            truth[image_id] = gval
            gvals[pos] = gval
            pos += 1

    # ratings derived from standardized ground truth plus rater effects
    g_std = (gvals - gvals.mean()) / gvals.std()
    biases = rng.normal(0.0, spec.rater_bias_sd, spec.n_raters)
    rater_ids = [f"r{i:03d}" for i in range(spec.n_raters)]
    ratings: list = []
    for i in range(spec.n_images):
        raters = rng.choice(spec.n_raters, size=spec.ratings_per_image, replace=False)
        noise = rng.normal(0.0, spec.rater_noise_sd, spec.ratings_per_image)
        raw = 4.0 + 1.3 * g_std[i] + biases[raters] + noise
        for r_idx, value in zip(raters, raw):
            if spec.discretize:
                score = int(min(7, max(1, round(value))))
            else:
                score = float(value)  # reliability studies only; fails validation
            ratings.append(
                RatingRecord(rater_id=rater_ids[r_idx], image_id=images[i].image_id, raw_score=score)
            )

    # mapped points on hosting clusters, ordered blocks by cluster-level truth
    host_g = profiles[:n_points, :8] @ weight_vec
    order = np.argsort(-host_g, kind="stable")  # descending
    n_att_dis = round(spec.disagreement_fraction * spec.n_ppgis_attractive)
    n_un_dis = round(spec.disagreement_fraction * spec.n_ppgis_unattractive)
    blocks = (
        [(PpgisLabel.ATTRACTIVE, False)] * (spec.n_ppgis_attractive - n_att_dis)
        + [(PpgisLabel.UNATTRACTIVE, True)] * n_un_dis
        + [(PpgisLabel.ATTRACTIVE, True)] * n_att_dis
        + [(PpgisLabel.UNATTRACTIVE, False)] * (spec.n_ppgis_unattractive - n_un_dis)
    )
    ppgis: list = []
    designated: set = set()
    for slot, (label, is_disagree) in enumerate(blocks):
        ci = int(order[slot])
        angle = rng.uniform(0, 2 * math.pi)
        radius = _POINT_JITTER * math.sqrt(rng.uniform(0, 1))
        point_id = f"pt{slot:04d}"
        ppgis.append(
            PpgisPoint(
                point_id=point_id,
                x=float(centers[ci, 0] + radius * math.cos(angle)),
                y=float(centers[ci, 1] + radius * math.sin(angle)),
                label=label,
            )
        )
        if is_disagree:
            designated.add(point_id)

    population = _population_layer(rng, spec.extent_m)
    noise_layers = _noise_layers(rng, spec.extent_m, ppgis, designated, spec.noise_shift_db)
    landuse = _landuse_layer(rng, spec.extent_m)
    segments = _street_segments(rng, spec.extent_m)

    return Bundle(
        spec=spec,
        images=images,
        features_raw=features_raw,
        ratings=ratings,
        ppgis=ppgis,
        population=population,
        noise_layers=noise_layers,
        landuse=landuse,
        category_map=LandUseCategoryMap.defaults(),
        segments=segments,
        truth=truth,
        designated_disagreement=designated,
    )


def _population_layer(rng, extent: float) -> GridLayer:
    cell = 250.0
    n = max(1, math.ceil(extent / cell))
    base = rng.gamma(shape=2.0, scale=6.0, size=(n, n))
    hours = np.arange(24)
    day_curve = 0.35 + 0.65 * np.exp(-0.5 * ((hours - 14.0) / 5.0) ** 2)
    values = day_curve[:, None, None] * base[None, :, :]
    return GridLayer(0.0, 0.0, cell, values, GridSemantic.POPULATION_PRESENCE_HOURLY)


def _noise_layers(rng, extent: float, ppgis, designated, shift_db: float) -> list:
    cell = 50.0
    n = max(1, math.ceil(extent / cell))
    road = np.clip(rng.normal(55.0, 6.0, (n, n)), 30.0, 80.0)
    rail = np.clip(rng.normal(45.0, 8.0, (n, n)), 20.0, 75.0)
    road_layer = GridLayer(0.0, 0.0, cell, road, GridSemantic.NOISE_LAEQ)
    if shift_db != 0.0:
        for pt in ppgis:
            if pt.point_id in designated:
                rows, cols = _cells_touching_disk(road_layer, pt.x, pt.y, 50.0)
                road[rows, cols] += shift_db
    return [
        GridLayer(0.0, 0.0, cell, road, GridSemantic.NOISE_LAEQ),
        GridLayer(0.0, 0.0, cell, rail, GridSemantic.NOISE_LAEQ),
    ]


def _landuse_layer(rng, extent: float) -> GridLayer:
    cell = 20.0
    n = max(1, math.ceil(extent / cell))
    block = 20  # 400 m patches
    nb = math.ceil(n / block)
    codes = np.asarray(_LANDUSE_CODES)
    patch = codes[rng.integers(0, codes.size, (nb, nb))]
    full = np.repeat(np.repeat(patch, block, axis=0), block, axis=1)[:n, :n]
    return GridLayer(0.0, 0.0, cell, full.astype(float), GridSemantic.LAND_USE_CLASS)


def _street_segments(rng, extent: float) -> list:
    spacing = 90.0  # keeps every location within 45 m of a street
    piece = 180.0
    segments: list = []
    n_lines = math.ceil(extent / spacing) + 1
    n_pieces = math.ceil(extent / piece)
    speeds = np.asarray([30.0, 40.0, 50.0])
    idx = 0
    for li in range(n_lines):
        offset = li * spacing
        for pi in range(n_pieces):
            a, b = pi * piece, min((pi + 1) * piece, extent)
            for coords in (((a, offset), (b, offset)), ((offset, a), (offset, b))):
                segments.append(
                    StreetSegment(
                        segment_id=f"seg{idx:05d}",
                        coords=coords,
                        traffic_volume=float(np.round(rng.lognormal(7.5, 0.8))),
                        speed_limit=float(speeds[rng.integers(0, 3)]),
                    )
                )
                idx += 1
    return segments


# --- disk round trip -----------------------------------------------------------------

RAW_FEATURE_COLUMNS = tuple(
    name for name in CANONICAL_FEATURES if name != "road_transport"
) + VEHICLE_SUBCLASSES


def write_bundle(bundle: Bundle, out_dir) -> dict:
    """Write every bundle file in the formats the ingest layer reads.

    Returns the path map used by the generated run configuration.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt.write_ratings_csv(out / "ratings.csv", bundle.ratings)
    fmt.write_images_csv(out / "images.csv", bundle.images)
    fmt.write_features_csv(out / "features.csv", bundle.features_raw, RAW_FEATURE_COLUMNS)
    fmt.write_ppgis_geojson(out / "ppgis.geojson", bundle.ppgis)
    fmt.write_segments_geojson(out / "segments.geojson", bundle.segments)

    layer = bundle.landuse
    fmt.write_ascii_grid(out / "landuse.asc", layer.values, layer.origin_x, layer.origin_y, layer.cell_size)
    for name, noise in zip(("noise_road.asc", "noise_rail.asc"), bundle.noise_layers):
        fmt.write_ascii_grid(out / name, noise.values, noise.origin_x, noise.origin_y, noise.cell_size)
    pop = bundle.population
    pop_dir = out / "population"
    for hour in range(24):
        fmt.write_ascii_grid(
            pop_dir / f"hour_{hour:02d}.asc", pop.values[hour], pop.origin_x, pop.origin_y, pop.cell_size
        )

    fmt.write_csv(
        out / "landuse_categories.csv",
        ["code", "class_name", "category"],
        (
            (code, bundle.category_map.code_to_name[code],
             bundle.category_map.name_to_category[bundle.category_map.code_to_name[code]].value)
            for code in sorted(bundle.category_map.code_to_name)
        ),
    )
    fmt.write_csv(
        out / "truth.csv",
        ["image_id", "ground_truth"],
        ((rec.image_id, bundle.truth[rec.image_id]) for rec in bundle.images),
    )
    fmt.write_csv(
        out / "designated.csv",
        ["point_id", "designated_disagree"],
        ((pt.point_id, pt.point_id in bundle.designated_disagreement) for pt in bundle.ppgis),
    )
    with open(out / "synth_spec.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(bundle.spec.to_dict(), fh, indent=2)
        fh.write("\n")

    inputs = {
        "ratings": "ratings.csv",
        "images": "images.csv",
        "features": "features.csv",
        "ppgis": "ppgis.geojson",
        "segments": "segments.geojson",
        "landuse": "landuse.asc",
        "landuse_categories": "landuse_categories.csv",
        "noise": ["noise_road.asc", "noise_rail.asc"],
        "population_pattern": "population/hour_{hour:02d}.asc",
    }
    config = {"inputs": inputs, "seed": bundle.spec.seed}
    with open(out / "run_config.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return inputs


# --- brute-force oracle ----------------------------------------------------------------

@dataclass(frozen=True)
class OracleAgreement:
    records: dict  # point_id -> (label value, classification value)
    excluded: dict  # point_id -> in-range image count
    strict_rate: dict  # label value -> rate
    moderate_rate: dict  # label value -> rate (strict-inclusive)


def oracle_agreement(
    bundle: Bundle,
    predictions: Mapping[str, float],
    radius_m: float = 50.0,
    min_images: int = 5,
) -> OracleAgreement:
    """Recompute buffer agreement by exhaustive scan, no spatial index.

    Test-only reference: reimplements the buffer means, the global mean and
    standard deviation, and the strict/moderate rules directly.
    """
    ids = [rec.image_id for rec in bundle.images if rec.image_id in predictions]
    coords = np.array([(rec.x, rec.y) for rec in bundle.images if rec.image_id in predictions])
    preds = np.array([predictions[i] for i in ids])
    if preds.size == 0:
        return OracleAgreement(records={}, excluded={}, strict_rate={}, moderate_rate={})
    mu = float(preds.mean())
    sigma = float(preds.std(ddof=1)) if preds.size > 1 else 0.0

    records: dict = {}
    excluded: dict = {}
    tally: dict = {}
    for pt in bundle.ppgis:
        in_range = [
            preds[i]
            for i in range(len(ids))
            if math.hypot(coords[i, 0] - pt.x, coords[i, 1] - pt.y) <= radius_m
        ]
        if len(in_range) < min_images:
            excluded[pt.point_id] = len(in_range)
            continue
        mean_pred = float(np.mean(in_range))
        if pt.label is PpgisLabel.ATTRACTIVE:
            cls = (
                "StrictAgree"
                if mean_pred > mu + sigma
                else "ModerateAgree" if mean_pred > mu else "Disagree"
            )
        else:
            cls = (
                "StrictAgree"
                if mean_pred < mu - sigma
                else "ModerateAgree" if mean_pred < mu else "Disagree"
            )
        records[pt.point_id] = (pt.label.value, cls)
        stats = tally.setdefault(pt.label.value, [0, 0, 0])  # n, strict, moderate
        stats[0] += 1
        stats[1] += cls == "StrictAgree"
        stats[2] += cls in ("StrictAgree", "ModerateAgree")

    return OracleAgreement(
        records=records,
        excluded=excluded,
        strict_rate={label: s[1] / s[0] for label, s in tally.items()},
        moderate_rate={label: s[2] / s[0] for label, s in tally.items()},
    )


def correlated_series(n: int, target_r: float, seed: int = 0) -> tuple:
    """Two series whose sample correlation equals ``target_r`` exactly."""
    if not -1.0 <= target_r <= 1.0:
        raise ValueError("target_r must be in [-1, 1]")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    a = (a - a.mean()) / a.std()
    b = b - b.mean()
    b -= a * (a @ b) / (a @ a)  # orthogonalize
    b /= b.std()
    y = target_r * a + math.sqrt(1.0 - target_r**2) * b
    return a, y
