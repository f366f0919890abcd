"""Exception types shared across the package."""


class PointformerError(Exception):
    """Base class for all package errors."""


class ShapeError(PointformerError, ValueError):
    """Operand shapes are incompatible with an operation."""


class NumericError(PointformerError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class GradientError(PointformerError, ValueError):
    """Misuse of the tape / backward machinery."""


class ConfigError(PointformerError, ValueError):
    """Invalid configuration value or config file."""


class ConsistencyError(PointformerError, ValueError):
    """Internal bookkeeping disagrees with itself (e.g. occupancy sums)."""


class DataError(PointformerError, ValueError):
    """Malformed dataset, manifest, or cloud file."""


class SamplingError(PointformerError, ValueError):
    """Invalid sampling request (e.g. more points than available)."""


class QueryError(PointformerError, ValueError):
    """Invalid neighborhood query."""


class CorruptionError(PointformerError, ValueError):
    """A corruption cannot be applied to the given cloud."""


class CheckpointError(PointformerError, ValueError):
    """Unreadable, truncated, or mismatched checkpoint file."""


class RetrievalError(PointformerError, ValueError):
    """Invalid retrieval request (e.g. empty index)."""
