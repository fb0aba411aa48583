"""Exception types raised across the pipeline.

Every error that a caller is expected to handle has its own class so that
tests and the command-line layer can react to specific failure modes
instead of parsing messages.
"""


class UrbanAlignError(Exception):
    """Base class for all package errors."""


# --- ratings ---------------------------------------------------------------

class RaterTooFewRatings(UrbanAlignError):
    """A rater has fewer than two ratings and cannot be standardized."""


class InsufficientOverlap(UrbanAlignError):
    """A rater pair shares fewer than two commonly rated images."""


class DegenerateVariance(UrbanAlignError):
    """A variance required by a statistic is zero."""


class EmptyImage(UrbanAlignError):
    """Pixel array contains no pixels."""


# --- model -----------------------------------------------------------------

class SingularDesign(UrbanAlignError):
    """Design matrix is exactly collinear."""


class DegenerateRange(UrbanAlignError):
    """All target values are equal; no scaling interval exists."""


class EmptyTrainingSet(UrbanAlignError):
    """No training rows supplied."""


class NonFiniteFeature(UrbanAlignError):
    """A feature value is NaN or infinite."""


class MissingFeature(UrbanAlignError):
    """A feature required by the trained model is absent."""


class FoldTooSmall(UrbanAlignError):
    """Cross-validation folds cannot be formed from the data."""


class LengthMismatch(UrbanAlignError):
    """Paired vectors have different lengths."""


# --- explain ---------------------------------------------------------------

class EmptySample(UrbanAlignError):
    """A sample of zero rows was requested or supplied."""


# --- geo -------------------------------------------------------------------

class TooFewPoints(UrbanAlignError):
    """Not enough points for the requested neighborhood size."""


# --- alignment -------------------------------------------------------------

class DegenerateSigma(UrbanAlignError):
    """Prediction distribution has zero spread; thresholds are undefined."""


class EmptyInput(UrbanAlignError):
    """An aggregation was called on an empty collection."""


# --- context ---------------------------------------------------------------

class NoCoverage(UrbanAlignError):
    """No grid cells with data intersect the query buffer."""


class NoSegments(UrbanAlignError):
    """No street segments lie within the query buffer."""


class UnmappedClass(UrbanAlignError):
    """A raster class has no entry in the land-use category map."""

    def __init__(self, classes):
        self.classes = list(classes)
        super().__init__(f"unmapped land-use classes: {self.classes}")


class NoImages(UrbanAlignError):
    """No images lie within the query buffer."""


# --- stats -----------------------------------------------------------------

class SampleTooSmall(UrbanAlignError):
    """Sample below the minimum size the test supports."""


class SampleTooLarge(UrbanAlignError):
    """Sample above the maximum size the approximation supports."""


class EmptyGroup(UrbanAlignError):
    """A comparison group is empty."""


class InsufficientGroup(UrbanAlignError):
    """A comparison group is too small for the requested test."""


# --- synth -----------------------------------------------------------------

class InfeasibleSpec(UrbanAlignError):
    """Synthetic dataset specification cannot be satisfied."""


# --- cli / io --------------------------------------------------------------

class ConfigError(UrbanAlignError):
    """Run configuration is missing, malformed, or fails its schema."""


class FormatError(UrbanAlignError):
    """An input file does not match its documented format."""
