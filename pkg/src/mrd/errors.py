"""Exception types shared across the package."""


class MrdError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(MrdError, ValueError):
    """Array shapes are inconsistent with the model structure."""


class SingularMatrixError(MrdError, ValueError):
    """A matrix could not be factorized even after jitter escalation."""


class NumericalError(MrdError, ValueError):
    """An optimization or evaluation produced persistent non-finite values."""


class DegenerateSegmentationError(MrdError, ValueError):
    """A latent segmentation has no shared dimensions where some are required."""


class DataFormatError(MrdError, ValueError):
    """An input file is malformed (ragged rows, non-numeric cells, empty)."""


class SchemaError(MrdError, ValueError):
    """A model file violates the expected schema or format version."""
