"""Non-visual covariates around each mapped point.

Population presence, peak noise, traffic, and speed are read from buffers
around the point; land use comes from a 1 km inverse-squared-distance
weighting of raster pixel centers, normalized into proportions over six
aggregated categories. Seasonality summarizes the capture months of the
buffer's images.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .domain import GridLayer, GridSemantic, ImageRecord, StreetSegment
from .errors import NoCoverage, NoImages, NoSegments, UnmappedClass
from .geo import PointIndex

ACTIVE_HOURS = range(7, 22)  # hourly slabs 07:00 through 21:59
DEFAULT_BUFFER_M = 50.0
DEFAULT_LANDUSE_RADIUS_M = 1000.0


class LandUseCategory(Enum):
    URBAN = "Urban"
    SUBURBAN = "Suburban"
    PARKS_RECREATION = "ParksRecreation"
    AGRICULTURAL = "Agricultural"
    NATURAL = "Natural"
    BLUE = "Blue"


CATEGORY_ORDER = tuple(LandUseCategory)


@dataclass(frozen=True)
class LandUseCategoryMap:
    """Total mapping from source land-cover classes to the six categories.

    ``code_to_name`` ties integer raster codes to class names;
    ``name_to_category`` assigns every class name exactly one category.
    """

    name_to_category: dict
    code_to_name: dict

    def category_of_code(self, code: int):
        name = self.code_to_name.get(code)
        if name is None:
            return None
        return self.name_to_category.get(name)

    @staticmethod
    def from_csv(path) -> "LandUseCategoryMap":
        name_to_category: dict = {}
        code_to_name: dict = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                name = row["class_name"]
                code_to_name[int(row["code"])] = name
                name_to_category[name] = LandUseCategory(row["category"])
        return LandUseCategoryMap(name_to_category=name_to_category, code_to_name=code_to_name)

    @staticmethod
    def defaults() -> "LandUseCategoryMap":
        """The categorization shipped with the package."""
        with resources.as_file(
            resources.files("urbanalign").joinpath("data/corine_categories.csv")
        ) as path:
            return LandUseCategoryMap.from_csv(path)

    @staticmethod
    def identity() -> "LandUseCategoryMap":
        """Map whose classes are the six categories themselves (codes 0-5)."""
        return LandUseCategoryMap(
            name_to_category={c.value: c for c in CATEGORY_ORDER},
            code_to_name={i: c.value for i, c in enumerate(CATEGORY_ORDER)},
        )


def _cells_touching_disk(layer: GridLayer, x: float, y: float, radius: float) -> tuple:
    """(rows, cols) of all cells whose square overlaps the disk."""
    c = layer.cell_size
    col_lo = max(0, math.floor((x - radius - layer.origin_x) / c))
    col_hi = min(layer.ncols - 1, math.floor((x + radius - layer.origin_x) / c))
    row_lo = max(0, math.floor((y - radius - layer.origin_y) / c))
    row_hi = min(layer.nrows - 1, math.floor((y + radius - layer.origin_y) / c))
    if col_lo > col_hi or row_lo > row_hi:
        return np.array([], dtype=int), np.array([], dtype=int)
    rows = np.arange(row_lo, row_hi + 1)
    cols = np.arange(col_lo, col_hi + 1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    # nearest point of each cell square to the buffer center
    nx = np.clip(x, layer.origin_x + cc * c, layer.origin_x + (cc + 1) * c)
    ny = np.clip(y, layer.origin_y + rr * c, layer.origin_y + (rr + 1) * c)
    inside = (nx - x) ** 2 + (ny - y) ** 2 <= radius * radius
    return rr[inside], cc[inside]


def population_presence(
    point: tuple, layer: GridLayer, radius_m: float = DEFAULT_BUFFER_M
) -> float:
    """Mean hourly presence over the 07:00-21:59 slabs in the buffer.

    Each hour contributes the mean over all grid cells intersecting the
    buffer (square/disk overlap); missing cells are ignored per hour.
    """
    if layer.semantic is not GridSemantic.POPULATION_PRESENCE_HOURLY:
        raise ValueError("expected an hourly population layer")
    rows, cols = _cells_touching_disk(layer, point[0], point[1], radius_m)
    if rows.size == 0:
        raise NoCoverage("population grid does not cover the buffer")
    hourly = []
    for hour in ACTIVE_HOURS:
        values = layer.values[hour, rows, cols]
        values = values[np.isfinite(values)]
        if values.size == 0:
            raise NoCoverage(f"population grid has no data in the buffer at hour {hour}")
        hourly.append(float(values.mean()))
    return float(np.mean(hourly))


def noise_max(
    point: tuple, layers: Sequence[GridLayer], radius_m: float = DEFAULT_BUFFER_M
) -> float:
    """Highest noise level across all sources within the buffer."""
    if not layers:
        raise NoCoverage("no noise layers supplied")
    best = -math.inf
    for layer in layers:
        rows, cols = _cells_touching_disk(layer, point[0], point[1], radius_m)
        if rows.size == 0:
            continue
        values = layer.values[rows, cols]
        values = values[np.isfinite(values)]
        if values.size:
            best = max(best, float(values.max()))
    if best == -math.inf:
        raise NoCoverage("no noise layer has data in the buffer")
    return best


def _point_segment_distance(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> float:
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / seg2))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _polyline_distance(point: tuple, seg: StreetSegment) -> float:
    px, py = point
    return min(
        _point_segment_distance(px, py, ax, ay, bx, by)
        for (ax, ay), (bx, by) in zip(seg.coords[:-1], seg.coords[1:])
    )


def traffic_max(
    point: tuple, segments: Sequence[StreetSegment], radius_m: float = DEFAULT_BUFFER_M
) -> tuple:
    """(max vehicles/day within the buffer, whether any segment was in range).

    No street in range is reported as zero traffic with the flag cleared,
    since the absence of streets genuinely means no vehicles.
    """
    best = 0.0
    found = False
    for seg in segments:
        if _polyline_distance(point, seg) <= radius_m:
            found = True
            best = max(best, seg.traffic_volume)
    return best, found


def speed_mean(
    point: tuple, segments: Sequence[StreetSegment], radius_m: float = DEFAULT_BUFFER_M
) -> float:
    """Unweighted mean speed limit of in-range segments."""
    speeds = [seg.speed_limit for seg in segments if _polyline_distance(point, seg) <= radius_m]
    if not speeds:
        raise NoSegments("no street segments within the buffer")
    return float(np.mean(speeds))


def landuse_proportions(
    point: tuple,
    raster: GridLayer,
    cmap: LandUseCategoryMap,
    radius_m: float = DEFAULT_LANDUSE_RADIUS_M,
) -> dict:
    """Inverse-squared-distance land-use proportions over six categories.

    Every raster pixel whose center lies within the radius contributes
    weight 1/d^2, with d clamped below at half a cell so the containing
    pixel stays finite. Weights are normalized across all categories, so
    the six proportions sum to 1.
    """
    if raster.semantic is not GridSemantic.LAND_USE_CLASS:
        raise ValueError("expected a land-use class raster")
    x, y = point
    c = raster.cell_size
    half = c / 2.0
    col_lo = max(0, math.floor((x - radius_m - raster.origin_x) / c))
    col_hi = min(raster.ncols - 1, math.floor((x + radius_m - raster.origin_x) / c))
    row_lo = max(0, math.floor((y - radius_m - raster.origin_y) / c))
    row_hi = min(raster.nrows - 1, math.floor((y + radius_m - raster.origin_y) / c))
    if col_lo > col_hi or row_lo > row_hi:
        raise NoCoverage("land-use raster does not cover the buffer")

    window = raster.values[row_lo : row_hi + 1, col_lo : col_hi + 1]
    rows = np.arange(row_lo, row_hi + 1)
    cols = np.arange(col_lo, col_hi + 1)
    cx = raster.origin_x + (cols + 0.5) * c
    cy = raster.origin_y + (rows + 0.5) * c
    d = np.hypot(cx[None, :] - x, cy[:, None] - y)
    in_range = (d <= radius_m) & np.isfinite(window)
    if not in_range.any():
        raise NoCoverage("no land-use pixel center within the radius")

    codes = window[in_range].astype(int)
    weights = 1.0 / np.maximum(d[in_range], half) ** 2

    cat_index = np.full(max(cmap.code_to_name, default=0) + 1, -1, dtype=int)
    for code, name in cmap.code_to_name.items():
        cat_index[code] = CATEGORY_ORDER.index(cmap.name_to_category[name])
    bad = (codes < 0) | (codes >= cat_index.size) | (cat_index[np.clip(codes, 0, cat_index.size - 1)] < 0)
    if bad.any():
        names = sorted({cmap.code_to_name.get(int(code), f"code {int(code)}") for code in codes[bad]})
        raise UnmappedClass(names)

    sums = np.bincount(cat_index[codes], weights=weights, minlength=len(CATEGORY_ORDER))
    proportions = sums / weights.sum()
    return {cat.value: float(p) for cat, p in zip(CATEGORY_ORDER, proportions)}


def aggregate_corine(raster: GridLayer, cmap: LandUseCategoryMap) -> GridLayer:
    """Relabel a land-cover raster into the six category codes (0-5).

    Raises :class:`UnmappedClass` listing every class present in the raster
    but absent from the map. NaN cells stay NaN.
    """
    if raster.semantic is not GridSemantic.LAND_USE_CLASS:
        raise ValueError("expected a land-use class raster")
    values = raster.values
    finite = np.isfinite(values)
    codes = values[finite].astype(int)
    present = np.unique(codes)
    lookup: dict = {}
    unmapped = []
    for code in present:
        category = cmap.category_of_code(int(code))
        if category is None:
            unmapped.append(cmap.code_to_name.get(int(code), f"code {int(code)}"))
        else:
            lookup[int(code)] = CATEGORY_ORDER.index(category)
    if unmapped:
        raise UnmappedClass(sorted(unmapped))

    out = np.full(values.shape, np.nan)
    if present.size:
        table = np.full(int(present.max()) + 1, -1, dtype=int)
        for code, idx in lookup.items():
            table[code] = idx
        out[finite] = table[codes].astype(float)
    return GridLayer(
        origin_x=raster.origin_x,
        origin_y=raster.origin_y,
        cell_size=raster.cell_size,
        values=out,
        semantic=GridSemantic.LAND_USE_CLASS,
    )


# --- seasonality ------------------------------------------------------------------

SEASONS = ("winter", "spring", "summer", "fall")
_MONTH_SEASON = {
    12: "winter", 1: "winter", 2: "winter",
    3: "spring", 4: "spring", 5: "spring",
    6: "summer", 7: "summer", 8: "summer",
    9: "fall", 10: "fall", 11: "fall",
}


def season_of_month(month: int) -> str:
    return _MONTH_SEASON[month]


@dataclass(frozen=True)
class SeasonProfile:
    point_id: str
    proportions: dict  # season -> share of in-range images
    dominant: str


def season_profile(
    point_id: str,
    point: tuple,
    image_index: PointIndex,
    images_by_id: Mapping[str, ImageRecord],
    radius_m: float = DEFAULT_BUFFER_M,
) -> SeasonProfile:
    """Seasonal composition of the images within the buffer.

    Dominant season is the one with the highest share; ties resolve in the
    fixed order winter, spring, summer, fall.
    """
    ids = image_index.radius_query(point, radius_m)
    if not ids:
        raise NoImages(f"no images within {radius_m} m of point {point_id!r}")
    counts = dict.fromkeys(SEASONS, 0)
    for image_id in ids:
        counts[season_of_month(images_by_id[image_id].capture_month)] += 1
    total = len(ids)
    proportions = {season: counts[season] / total for season in SEASONS}
    dominant = max(SEASONS, key=lambda s: (proportions[s], -SEASONS.index(s)))
    return SeasonProfile(point_id=point_id, proportions=proportions, dominant=dominant)


# --- assembled sample ----------------------------------------------------------------

@dataclass(frozen=True)
class ContextSample:
    point_id: str
    population: float
    noise_laeq: float
    traffic: float
    traffic_in_range: bool
    speed: float
    landuse: dict  # category token -> proportion


def context_sample(
    point_id: str,
    point: tuple,
    population_layer: GridLayer,
    noise_layers: Sequence[GridLayer],
    segments: Sequence[StreetSegment],
    landuse_raster: GridLayer,
    cmap: LandUseCategoryMap,
    buffer_m: float = DEFAULT_BUFFER_M,
    landuse_radius_m: float = DEFAULT_LANDUSE_RADIUS_M,
) -> ContextSample:
    traffic, in_range = traffic_max(point, segments, buffer_m)
    return ContextSample(
        point_id=point_id,
        population=population_presence(point, population_layer, buffer_m),
        noise_laeq=noise_max(point, noise_layers, buffer_m),
        traffic=traffic,
        traffic_in_range=in_range,
        speed=speed_mean(point, segments, buffer_m),
        landuse=landuse_proportions(point, landuse_raster, cmap, landuse_radius_m),
    )
