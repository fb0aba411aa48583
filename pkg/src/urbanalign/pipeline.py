"""End-to-end pipeline stages.

Stages only communicate through files in the output directory, so any
stage can be rerun in isolation. Every write is deterministic; running the
same configuration and seed twice produces byte-identical trees, and the
worker-thread count never changes results (threads only parallelize the
per-point context extraction, whose results are order-preserved).

Stage outputs:

- ``validate``: validation.json
- ``train``: vif.csv, model.json, predictions.csv, importance.csv,
  shap.csv, decision_paths.csv
- ``align``: point_scores.csv, agreement.csv, summary.csv,
  hotspots_attractive.csv, hotspots_unattractive.csv
- ``context``: context.csv, seasonality.csv
- ``report``: contrasts_strict.csv, contrasts_moderate.csv
- ``run``: all of the above plus manifest.json
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import alignment, context as ctx, domain, explain, geo, model as gbt, ratings, stats
from . import io as fmt
from .config import RunConfig
from .context import CATEGORY_ORDER, LandUseCategoryMap
from .domain import CANONICAL_FEATURES, GridSemantic, PpgisLabel
from .errors import UrbanAlignError

MANIFEST_SCHEMA_VERSION = 1


class StageError(UrbanAlignError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner

    return wrap


# --- input loading -------------------------------------------------------------------

class Dataset:
    """All validated inputs, plus derived canonical feature vectors."""

    def __init__(self, cfg: RunConfig):
        self.ratings = fmt.read_ratings_csv(cfg.inputs.ratings)
        self.images = fmt.read_images_csv(cfg.inputs.images)
        self.features_raw = fmt.read_features_csv(cfg.inputs.features)
        self.features = gbt.consolidate_transport(self.features_raw)
        self.ppgis = fmt.read_ppgis_geojson(cfg.inputs.ppgis)
        self.segments = fmt.read_segments_geojson(cfg.inputs.segments)
        self.images_by_id = {rec.image_id: rec for rec in self.images}

    def validate(self) -> domain.ValidationReport:
        return domain.validate_dataset(self.ratings, self.images, self.features, self.ppgis)


def _require_valid(dataset: Dataset) -> None:
    report = dataset.validate()
    if not report.ok:
        first = report.errors[0]
        raise ValueError(
            f"dataset failed validation with {len(report.errors)} error(s); "
            f"first: [{first.code}] {first.message}"
        )


@_stage("validate")
def stage_validate(cfg: RunConfig, out_dir) -> domain.ValidationReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = Dataset(cfg).validate()
    with open(out / "validation.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


# --- train ----------------------------------------------------------------------------

@_stage("train")
def stage_train(cfg: RunConfig, out_dir) -> None:
    """Screen features, fit the regressor, and export model explanations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Dataset(cfg)
    _require_valid(dataset)

    profiles, standardized = ratings.standardize(dataset.ratings)
    targets = ratings.image_targets(standardized)
    target_by_image = {t.image_id: t.mean_z for t in targets}

    image_ids = [fv.image_id for fv in dataset.features if fv.image_id in target_by_image]
    X_all = np.array(
        [fv.proportions for fv in dataset.features if fv.image_id in target_by_image]
    )
    y_raw = np.array([target_by_image[i] for i in image_ids])

    vif_report = gbt.vif_filter(X_all, CANONICAL_FEATURES, cfg.vif_threshold)
    keep = [CANONICAL_FEATURES.index(name) for name in vif_report.retained]
    X = X_all[:, keep]
    feature_names = vif_report.retained
    removal_order = {name: i + 1 for i, name in enumerate(vif_report.removed)}
    fmt.write_csv(
        out / "vif.csv",
        ["feature", "vif", "removed_order"],
        (
            (name, vif_report.vif[name], removal_order.get(name, ""))
            for name in CANONICAL_FEATURES
        ),
    )

    scaler = gbt.fit_scaler(y_raw)
    y = np.asarray(gbt.apply_scaler(scaler, y_raw))

    params = cfg.params
    if cfg.grid is not None:
        params = gbt.grid_search_cv(X, y, feature_names, cfg.grid, cfg.k_folds, cfg.seed).best
    fitted = gbt.train_gbt(X, y, feature_names, params, seed=cfg.seed)
    gbt.save_model(out / "model.json", fitted, scaler)

    predictions = gbt.predict_matrix(fitted, X)
    fmt.write_csv(
        out / "predictions.csv",
        ["image_id", "prediction"],
        zip(image_ids, predictions),
    )

    importance = explain.permutation_importance(
        fitted, X, y, n_repeats=cfg.importance_repeats, seed=cfg.seed
    )
    fmt.write_csv(
        out / "importance.csv",
        ["feature", "importance", "rank"],
        zip(importance.features, importance.importance, importance.ranks),
    )

    shap = explain.shap_matrix(fitted, X)
    fmt.write_csv(
        out / "shap.csv",
        ["image_id", *feature_names, "base_value", "prediction"],
        (
            (image_ids[i], *shap.contributions[i], shap.base_value, predictions[i])
            for i in range(len(image_ids))
        ),
    )

    sample_size = min(cfg.decision_sample, len(image_ids))
    steps = explain.decision_paths(shap, image_ids, sample_size, seed=cfg.seed)
    fmt.write_csv(
        out / "decision_paths.csv",
        ["row_id", "step", "feature", "cumulative_value"],
        ((s.row_id, s.step, s.feature, s.cumulative_value) for s in steps),
    )


# --- align ----------------------------------------------------------------------------

def _read_predictions(out: Path) -> dict:
    header, rows = fmt.read_csv(out / "predictions.csv")
    col = {name: header.index(name) for name in header}
    return {row[col["image_id"]]: float(row[col["prediction"]]) for row in rows}


@_stage("align")
def stage_align(cfg: RunConfig, out_dir) -> None:
    """Score buffers, classify agreement, and cluster the point scores."""
    out = Path(out_dir)
    dataset = Dataset(cfg)
    _require_valid(dataset)
    predictions = _read_predictions(out)

    image_index = geo.PointIndex([(r.image_id, r.x, r.y) for r in dataset.images])
    scores, excluded = alignment.buffer_scores(
        dataset.ppgis, image_index, predictions, cfg.buffer_m, cfg.min_images
    )
    dist = alignment.prediction_distribution([predictions[i] for i in sorted(predictions)])
    records = [alignment.classify_agreement(s, dist) for s in scores]

    rows = [(s.point_id, s.label.value, s.mean_pred, s.n_images, True) for s in scores]
    rows += [(e.point_id, e.label.value, "", e.n_images, False) for e in excluded]
    rows.sort(key=lambda r: r[0])
    fmt.write_csv(
        out / "point_scores.csv",
        ["point_id", "label", "mean_pred", "n_images", "included"],
        rows,
    )
    fmt.write_csv(
        out / "agreement.csv",
        ["point_id", "label", "classification"],
        sorted((r.point_id, r.label.value, r.classification.value) for r in records),
    )

    summaries = {s.label: s for s in alignment.agreement_summary(records)}
    score_stats = {s.label: s for s in alignment.score_distributions(scores)}
    summary_rows = []
    hotspot_files = {
        PpgisLabel.ATTRACTIVE: "hotspots_attractive.csv",
        PpgisLabel.UNATTRACTIVE: "hotspots_unattractive.csv",
    }
    for label in PpgisLabel:
        subset = [s for s in scores if s.label is label]
        point_index = geo.PointIndex(
            [(s.point_id, *_point_xy(dataset, s.point_id)) for s in subset]
        )
        values = [s.mean_pred for s in subset]
        moran = geo.morans_i(
            values,
            geo.knn_weights(point_index, cfg.knn, geo.WeightScheme.KNN_ROW_STANDARDIZED),
            seed=cfg.seed,
        )
        agg, st = summaries[label], score_stats[label]
        summary_rows.append(
            (
                label.value, agg.n, agg.strict_rate, agg.moderate_rate,
                st.mean, st.sd, st.minimum, st.median, st.maximum,
                moran.i_statistic, moran.expected_i, moran.z, moran.p_permutation,
            )
        )
        hotspots = geo.getis_ord_gstar(values, point_index, cfg.knn)
        fmt.write_csv(
            out / hotspot_files[label],
            ["point_id", "value", "z", "class"],
            sorted(
                zip(
                    (s.point_id for s in subset),
                    values,
                    hotspots.z_scores,
                    hotspots.classes,
                )
            ),
        )
    fmt.write_csv(
        out / "summary.csv",
        [
            "label", "n", "strict_rate", "moderate_rate",
            "mean", "sd", "min", "median", "max",
            "moran_i", "moran_expected_i", "moran_z", "moran_p",
        ],
        summary_rows,
    )


def _point_xy(dataset: Dataset, point_id: str) -> tuple:
    for pt in dataset.ppgis:
        if pt.point_id == point_id:
            return pt.x, pt.y
    raise KeyError(point_id)


# --- context ----------------------------------------------------------------------------

def _included_point_ids(out: Path) -> list:
    header, rows = fmt.read_csv(out / "point_scores.csv")
    col = {name: header.index(name) for name in header}
    return [row[col["point_id"]] for row in rows if row[col["included"]] == "true"]


@_stage("context")
def stage_context(cfg: RunConfig, out_dir) -> None:
    """Extract the non-visual covariates for every included point."""
    out = Path(out_dir)
    dataset = Dataset(cfg)
    _require_valid(dataset)
    included = set(_included_point_ids(out))
    points = [pt for pt in dataset.ppgis if pt.point_id in included]

    population = fmt.read_population_grids(
        [cfg.inputs.population_pattern.format(hour=h) for h in range(24)]
    )
    noise_layers = [fmt.read_ascii_grid(p, GridSemantic.NOISE_LAEQ) for p in cfg.inputs.noise]
    landuse = fmt.read_ascii_grid(cfg.inputs.landuse, GridSemantic.LAND_USE_CLASS)
    cmap = LandUseCategoryMap.from_csv(cfg.inputs.landuse_categories)
    image_index = geo.PointIndex([(r.image_id, r.x, r.y) for r in dataset.images])

    def one(pt):
        sample = ctx.context_sample(
            pt.point_id,
            (pt.x, pt.y),
            population,
            noise_layers,
            dataset.segments,
            landuse,
            cmap,
            buffer_m=cfg.buffer_m,
            landuse_radius_m=cfg.landuse_m,
        )
        season = ctx.season_profile(
            pt.point_id, (pt.x, pt.y), image_index, dataset.images_by_id, cfg.buffer_m
        )
        return sample, season

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(pt) for pt in points]

    fmt.write_csv(
        out / "context.csv",
        [
            "point_id", "population", "noise_laeq", "traffic", "traffic_in_range", "speed",
            *(c.value for c in CATEGORY_ORDER),
        ],
        sorted(
            (
                s.point_id, s.population, s.noise_laeq, s.traffic, s.traffic_in_range, s.speed,
                *(s.landuse[c.value] for c in CATEGORY_ORDER),
            )
            for s, _ in results
        ),
    )
    fmt.write_csv(
        out / "seasonality.csv",
        ["point_id", *ctx.SEASONS, "dominant"],
        sorted(
            (p.point_id, *(p.proportions[s] for s in ctx.SEASONS), p.dominant)
            for _, p in results
        ),
    )


# --- report -----------------------------------------------------------------------------

_VARIABLE_COLUMNS = {
    "Population": "population",
    "Noise": "noise_laeq",
    "Traffic": "traffic",
    "Speed": "speed",
    **{c.value: c.value for c in CATEGORY_ORDER},
}


@_stage("report")
def stage_report(cfg: RunConfig, out_dir) -> None:
    """Contrast covariates between agreement and disagreement cases."""
    out = Path(out_dir)
    header, rows = fmt.read_csv(out / "context.csv")
    col = {name: header.index(name) for name in header}
    samples = {
        variable: {row[col["point_id"]]: float(row[col[column]]) for row in rows}
        for variable, column in _VARIABLE_COLUMNS.items()
    }

    aheader, arows = fmt.read_csv(out / "agreement.csv")
    acol = {name: aheader.index(name) for name in aheader}
    classification = {row[acol["point_id"]]: row[acol["classification"]] for row in arows}
    scored = {pid for pid in classification if pid in samples["Population"]}

    for mode, filename in (("strict", "contrasts_strict.csv"), ("moderate", "contrasts_moderate.csv")):
        if mode == "strict":
            agree = {pid for pid in scored if classification[pid] == "StrictAgree"}
        else:
            agree = {pid for pid in scored if classification[pid] in ("StrictAgree", "ModerateAgree")}
        disagree = scored - agree
        table = stats.contrast_table(samples, agree, disagree)
        fmt.write_csv(
            out / filename,
            ["variable", "u_statistic", "p_value", "p_rounded", "n_agree", "n_disagree", "method"],
            (
                (
                    row.variable, row.u_statistic, row.p_value, f"{row.p_value:.2f}",
                    row.n_agree, row.n_disagree, row.method.value,
                )
                for row in table
            ),
        )


# --- full run ------------------------------------------------------------------------------

RUN_OUTPUTS = (
    "validation.json",
    "vif.csv",
    "model.json",
    "predictions.csv",
    "importance.csv",
    "shap.csv",
    "decision_paths.csv",
    "point_scores.csv",
    "agreement.csv",
    "summary.csv",
    "hotspots_attractive.csv",
    "hotspots_unattractive.csv",
    "context.csv",
    "seasonality.csv",
    "contrasts_strict.csv",
    "contrasts_moderate.csv",
)


def run_all(cfg: RunConfig, out_dir, config_path=None) -> None:
    """Run every stage in order and write the manifest."""
    out = Path(out_dir)
    report = stage_validate(cfg, out)
    if not report.ok:
        raise StageError("validate", ValueError(f"{len(report.errors)} validation error(s)"))
    stage_train(cfg, out)
    stage_align(cfg, out)
    stage_context(cfg, out)
    stage_report(cfg, out)

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "package_version": __version__,
        "seed": cfg.seed,
        "config_sha256": _sha256_file(config_path) if config_path else None,
        "files": {name: _sha256_file(out / name) for name in RUN_OUTPUTS},
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
