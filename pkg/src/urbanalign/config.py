"""Run configuration: one JSON file with a published schema.

Relative input paths resolve against the directory containing the config
file. Every tunable has a default mirroring the reference setup: 50 m
buffers with a five-image minimum, 1 km land-use radius, VIF cutoff 10,
8 nearest neighbors, significance 0.05, and the reference model
hyperparameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .model import GbtParams


@dataclass(frozen=True)
class InputPaths:
    ratings: Path
    images: Path
    features: Path
    ppgis: Path
    segments: Path
    landuse: Path
    landuse_categories: Path
    noise: tuple
    population_pattern: str  # contains "{hour"


@dataclass(frozen=True)
class RunConfig:
    inputs: InputPaths
    seed: int = 0
    threads: int = 1
    params: GbtParams = field(default_factory=GbtParams)
    grid: dict | None = None
    k_folds: int = 5
    buffer_m: float = 50.0
    landuse_m: float = 1000.0
    min_images: int = 5
    vif_threshold: float = 10.0
    knn: int = 8
    significance: float = 0.05
    importance_repeats: int = 10
    decision_sample: int = 100

    def population_paths(self) -> list:
        return [Path(self.population_pattern_resolved.format(hour=h)) for h in range(24)]

    @property
    def population_pattern_resolved(self) -> str:
        return self.inputs.population_pattern


def _schema() -> dict:
    with resources.files("urbanalign").joinpath("config_schema.json").open("r") as fh:
        return json.load(fh)


def load_run_config(path, seed_override: int | None = None, threads_override: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config fails schema at {'/'.join(str(p) for p in exc.path)}: {exc.message}") from exc

    base = path.parent
    raw = doc["inputs"]
    inputs = InputPaths(
        ratings=base / raw["ratings"],
        images=base / raw["images"],
        features=base / raw["features"],
        ppgis=base / raw["ppgis"],
        segments=base / raw["segments"],
        landuse=base / raw["landuse"],
        landuse_categories=base / raw["landuse_categories"],
        noise=tuple(base / p for p in raw["noise"]),
        population_pattern=str(base / raw["population_pattern"]),
    )
    if "{hour" not in inputs.population_pattern:
        raise ConfigError("population_pattern must contain an {hour...} placeholder")

    model_doc = doc.get("model", {})
    grid = model_doc.get("grid")
    if grid is not None and any(k in model_doc for k in ("depth", "iterations", "l2", "learning_rate")):
        raise ConfigError("model config must give either fixed parameters or a grid, not both")
    params = GbtParams(
        depth=int(model_doc.get("depth", GbtParams.depth)),
        iterations=int(model_doc.get("iterations", GbtParams.iterations)),
        l2=float(model_doc.get("l2", GbtParams.l2)),
        learning_rate=float(model_doc.get("learning_rate", GbtParams.learning_rate)),
    )

    radii = doc.get("radii", {})
    thresholds = doc.get("thresholds", {})
    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)
    threads = int(doc.get("threads", 1)) if threads_override is None else int(threads_override)
    if threads < 1:
        raise ConfigError("threads must be >= 1")

    return RunConfig(
        inputs=inputs,
        seed=seed,
        threads=threads,
        params=params,
        grid=dict(grid) if grid is not None else None,
        k_folds=int(model_doc.get("k_folds", 5)),
        buffer_m=float(radii.get("buffer_m", 50.0)),
        landuse_m=float(radii.get("landuse_m", 1000.0)),
        min_images=int(thresholds.get("min_images", 5)),
        vif_threshold=float(thresholds.get("vif", 10.0)),
        knn=int(thresholds.get("knn", 8)),
        significance=float(thresholds.get("significance", 0.05)),
        importance_repeats=int(doc.get("importance", {}).get("n_repeats", 10)),
        decision_sample=int(doc.get("decision_plot", {}).get("sample_size", 100)),
    )
