"""Exception hierarchy shared across the pipeline.

Every failure mode that callers are expected to handle gets its own
class so tests and the CLI can match on type rather than message text.
"""


class SaicError(Exception):
    """Base class for all pipeline errors."""


# --- dataset / bank construction ---------------------------------------

class EmptyDatasetError(SaicError):
    """Dataset contains no annotated regions."""


class MissingMaskError(SaicError):
    """A sampled region has no mask and no segmentation backend is configured."""


class ParseError(SaicError):
    """A dataset file could not be parsed; message carries file and line."""


class SchemaError(SaicError):
    """A dataset record violates the schema; message names the field."""


class IoError(SaicError):
    """Filesystem read/write failure during dataset export."""


class InvalidRatioError(SaicError):
    """Subset ratio outside (0, 1]."""


class NoRegionsError(SaicError):
    """Augmentation planning found no annotated regions to target."""


# --- selection ----------------------------------------------------------

class NoMatchError(SaicError):
    """No bank record satisfies the category/type constraints."""


class EmptyBankError(SaicError):
    """Operation requires a nonempty cell bank."""


class MissingEmbeddingError(SaicError):
    """A bank record lacks the embedding required for reference selection."""


class ZeroVectorError(SaicError):
    """Cosine similarity of a vector with norm below 1e-12."""


class LengthMismatchError(SaicError):
    """Vectors of different lengths where equal lengths are required."""


# --- raster math --------------------------------------------------------

class EmptyImageError(SaicError):
    """Zero-sized image where pixels are required."""


class DimensionMismatchError(SaicError):
    """Rasters disagree in size or channel count."""


class RegionOutOfBoundsError(SaicError):
    """Region bbox does not lie fully inside the background."""


class EmptyMaskError(SaicError):
    """Mask selects no pixels."""


class EmptySelectionError(SaicError):
    """Histogram mask selects no pixels."""


# --- backends -----------------------------------------------------------

class BackendUnavailableError(SaicError):
    """Backend unreachable after the configured number of retries."""


class MalformedResponseError(SaicError):
    """Backend response violates the wire contract."""


class GenerationRejectedError(SaicError):
    """Generation backend declined the request with a server-side error."""


class UnparseableVerdictError(SaicError):
    """Judge response contains no 'Choice:' line."""


# --- filtration ---------------------------------------------------------

class UnknownTemplateError(SaicError):
    """Prompt template id not present in the registry."""


# --- evaluation ---------------------------------------------------------

class TooFewSamplesError(SaicError):
    """Statistic requires more samples than were provided."""


class NumericalFailureError(SaicError):
    """Eigendecomposition failed to converge."""


class EmptyInputError(SaicError):
    """Metric requires a nonempty input list."""


class MissingRunError(SaicError):
    """Evaluation points at a run directory that does not exist."""
