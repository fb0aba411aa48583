"""
Generate a synthetic city and inspect the rating campaign
=========================================================

A bundle contains everything the pipeline ingests: images with locations
and capture dates, segmentation proportions, multi-rater scores, mapped
attractive/unattractive points, and the contextual layers. All of it is
derived deterministically from one seed.
"""

import numpy as np

from urbanalign.domain import coverage_summary, validate_dataset
from urbanalign.model import consolidate_transport
from urbanalign.ratings import cronbach_alpha, ratings_matrix, standardize
from urbanalign.synth import SynthSpec, generate

spec = SynthSpec(seed=7, n_images=400, n_ppgis_attractive=25, n_ppgis_unattractive=25)
bundle = generate(spec)
print(f"images: {len(bundle.images)}, ratings: {len(bundle.ratings)}, "
      f"points: {len(bundle.ppgis)}, street segments: {len(bundle.segments)}")

# every bundle passes ingest validation by construction
features = consolidate_transport(bundle.features_raw)
report = validate_dataset(bundle.ratings, bundle.images, features, bundle.ppgis)
print(f"validation: {'ok' if report.ok else 'FAILED'} "
      f"({len(report.errors)} errors, {len(report.warnings)} warnings)")

coverage = coverage_summary(bundle.ratings, bundle.images)
print(f"ratings per image: min {coverage.min_per_image}, mean {coverage.mean_per_image:.1f}")
print(f"ratings per rater: min {coverage.min_per_rater}, mean {coverage.mean_per_rater:.1f}")

# inter-rater reliability with pairwise deletion over the sparse matrix
matrix, raters, _ = ratings_matrix(bundle.ratings)
print(f"rating matrix: {matrix.shape[0]} raters x {matrix.shape[1]} images, "
      f"{np.isnan(matrix).mean():.0%} missing")
print(f"Cronbach's alpha: {cronbach_alpha(matrix):.3f}")

# raters disagree on scale and level until standardized
profiles, _ = standardize(bundle.ratings)
means = [p.mean for p in profiles]
print(f"rater mean scores span {min(means):.2f} .. {max(means):.2f}; "
      "z-scoring removes this before modeling")
