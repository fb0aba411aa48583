"""Readers and writers for the documented file formats.

Tabular data travels as UTF-8 CSV with a header row, point and line
geometries as GeoJSON in planar meter coordinates, and rasters as ESRI
ASCII grids. Writers are deterministic: fixed column order, ``repr``
float formatting, and ``\\n`` line endings, so identical inputs always
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    CANONICAL_FEATURES,
    FeatureVector,
    GridLayer,
    GridSemantic,
    ImageRecord,
    PpgisLabel,
    PpgisPoint,
    RatingRecord,
    StreetSegment,
)
from .errors import FormatError

ASCII_GRID_NODATA = -9999.0


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple:
    """Return (header, rows) where rows are lists of raw strings."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        return header, [row for row in reader]


def _column_map(path, header, required):
    missing = [c for c in required if c not in header]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return {name: header.index(name) for name in header}


# --- ratings / images / features --------------------------------------------

def read_ratings_csv(path) -> list:
    header, rows = read_csv(path)
    col = _column_map(path, header, ["rater_id", "image_id", "raw_score"])
    records = []
    for row in rows:
        raw = row[col["raw_score"]]
        try:
            score = int(raw)
        except ValueError:
            # keep a recognizably bad value so validation can report it
            score = float(raw)  # type: ignore[assignment]
        records.append(
            RatingRecord(rater_id=row[col["rater_id"]], image_id=row[col["image_id"]], raw_score=score)
        )
    return records


def write_ratings_csv(path, ratings: Sequence[RatingRecord]) -> None:
    write_csv(
        path,
        ["rater_id", "image_id", "raw_score"],
        ((r.rater_id, r.image_id, r.raw_score) for r in ratings),
    )


def read_images_csv(path) -> list:
    header, rows = read_csv(path)
    col = _column_map(path, header, ["image_id", "x", "y", "capture_year", "capture_month"])
    return [
        ImageRecord(
            image_id=row[col["image_id"]],
            x=float(row[col["x"]]),
            y=float(row[col["y"]]),
            capture_year=int(row[col["capture_year"]]),
            capture_month=int(row[col["capture_month"]]),
        )
        for row in rows
    ]


def write_images_csv(path, images: Sequence[ImageRecord]) -> None:
    write_csv(
        path,
        ["image_id", "x", "y", "capture_year", "capture_month"],
        ((i.image_id, i.x, i.y, i.capture_year, i.capture_month) for i in images),
    )


def read_features_csv(path) -> list:
    """Read per-image segmentation proportions.

    Columns beyond ``image_id`` are treated as class proportions. Vehicle
    subclass columns are allowed; consolidation into ``road_transport``
    happens downstream, so this returns raw dicts rather than
    :class:`FeatureVector` instances.
    """
    header, rows = read_csv(path)
    col = _column_map(path, header, ["image_id"])
    class_names = [name for name in header if name != "image_id"]
    table = []
    for row in rows:
        values = {name: float(row[col[name]]) for name in class_names}
        table.append((row[col["image_id"]], values))
    return table


def write_features_csv(path, table: Sequence[tuple], class_names: Sequence[str]) -> None:
    write_csv(
        path,
        ["image_id"] + list(class_names),
        ((image_id, *(values.get(name, 0.0) for name in class_names)) for image_id, values in table),
    )


def feature_vectors_from_table(table: Sequence[tuple]) -> list:
    return [FeatureVector.from_mapping(image_id, values) for image_id, values in table]


# --- GeoJSON -----------------------------------------------------------------

def read_ppgis_geojson(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise FormatError(f"{path}: expected a FeatureCollection")
    points = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise FormatError(f"{path}: PPGIS features must be Points")
        x, y = geom["coordinates"][:2]
        props = feat.get("properties") or {}
        label_raw = props.get("label")
        try:
            label = PpgisLabel(label_raw)
        except ValueError:
            label = label_raw  # validation reports it
        points.append(
            PpgisPoint(
                point_id=str(props.get("point_id")),
                x=float(x),
                y=float(y),
                label=label,
                comment=props.get("comment"),
            )
        )
    return points


def write_ppgis_geojson(path, points: Sequence[PpgisPoint]) -> None:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [pt.x, pt.y]},
            "properties": {
                "point_id": pt.point_id,
                "label": pt.label.value if isinstance(pt.label, PpgisLabel) else pt.label,
                **({"comment": pt.comment} if pt.comment is not None else {}),
            },
        }
        for pt in points
    ]
    _write_json(path, {"type": "FeatureCollection", "features": features})


def read_segments_geojson(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise FormatError(f"{path}: expected a FeatureCollection")
    segments = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise FormatError(f"{path}: street segments must be LineStrings")
        coords = tuple((float(x), float(y)) for x, y in geom["coordinates"])
        if len(coords) < 2:
            raise FormatError(f"{path}: LineString needs at least two vertices")
        props = feat.get("properties") or {}
        traffic = float(props["traffic_volume"])
        speed = float(props["speed_limit"])
        if traffic < 0:
            raise FormatError(f"{path}: negative traffic_volume {traffic}")
        if speed <= 0:
            raise FormatError(f"{path}: non-positive speed_limit {speed}")
        segments.append(
            StreetSegment(
                segment_id=str(props.get("segment_id")),
                coords=coords,
                traffic_volume=traffic,
                speed_limit=speed,
            )
        )
    return segments


def write_segments_geojson(path, segments: Sequence[StreetSegment]) -> None:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[x, y] for x, y in seg.coords]},
            "properties": {
                "segment_id": seg.segment_id,
                "traffic_volume": seg.traffic_volume,
                "speed_limit": seg.speed_limit,
            },
        }
        for seg in segments
    ]
    _write_json(path, {"type": "FeatureCollection", "features": features})


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


# --- ESRI ASCII grids ----------------------------------------------------------

def read_ascii_grid(path, semantic: GridSemantic) -> GridLayer:
    """Read a single-band ESRI ASCII grid.

    The file stores rows north to south; the returned array has row 0 at
    the southern edge. NODATA cells become NaN.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = {}
        position = fh.tell()
        for _ in range(6):
            position = fh.tell()
            line = fh.readline()
            parts = line.split()
            if len(parts) == 2 and parts[0].lower() in {
                "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value",
            }:
                header[parts[0].lower()] = float(parts[1])
            else:
                fh.seek(position)
                break
        for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
            if key not in header:
                raise FormatError(f"{path}: missing header field {key!r}")
        body = np.loadtxt(fh, dtype=float, ndmin=2)
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if body.shape != (nrows, ncols):
        raise FormatError(f"{path}: body shape {body.shape} != ({nrows}, {ncols})")
    nodata = header.get("nodata_value", ASCII_GRID_NODATA)
    values = body[::-1].copy()  # file top row is the northern edge
    values[values == nodata] = np.nan
    return GridLayer(
        origin_x=header["xllcorner"],
        origin_y=header["yllcorner"],
        cell_size=header["cellsize"],
        values=values,
        semantic=semantic,
    )


def write_ascii_grid(path, layer_values: np.ndarray, origin_x: float, origin_y: float, cell_size: float) -> None:
    """Write a single 2-D band (row 0 = southern edge) as an ESRI ASCII grid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(layer_values, dtype=float)
    if values.ndim != 2:
        raise ValueError("ASCII grid bands are 2-D")
    nrows, ncols = values.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"ncols {ncols}\n")
        fh.write(f"nrows {nrows}\n")
        fh.write(f"xllcorner {repr(float(origin_x))}\n")
        fh.write(f"yllcorner {repr(float(origin_y))}\n")
        fh.write(f"cellsize {repr(float(cell_size))}\n")
        fh.write(f"nodata_value {repr(ASCII_GRID_NODATA)}\n")
        for row in values[::-1]:
            out = [ASCII_GRID_NODATA if not math.isfinite(v) else v for v in row]
            fh.write(" ".join(repr(float(v)) for v in out))
            fh.write("\n")


def read_population_grids(paths: Sequence, origin_check: bool = True) -> GridLayer:
    """Stack 24 single-band hourly grids into one population layer."""
    if len(paths) != 24:
        raise FormatError(f"hourly population needs 24 grids, got {len(paths)}")
    bands = [read_ascii_grid(p, GridSemantic.NOISE_LAEQ) for p in paths]
    first = bands[0]
    for band in bands[1:]:
        same = (
            band.values.shape == first.values.shape
            and band.cell_size == first.cell_size
            and band.origin_x == first.origin_x
            and band.origin_y == first.origin_y
        )
        if origin_check and not same:
            raise FormatError("hourly population grids disagree on shape or georeferencing")
    stacked = np.stack([band.values for band in bands])
    return GridLayer(
        origin_x=first.origin_x,
        origin_y=first.origin_y,
        cell_size=first.cell_size,
        values=stacked,
        semantic=GridSemantic.POPULATION_PRESENCE_HOURLY,
    )
