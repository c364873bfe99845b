"""Exception hierarchy for :mod:`amp_prototypes`.

Every error raised on purpose by the package derives from :class:`AMPError`.
Validation failures additionally derive from :class:`ValueError` so callers
that only know about the builtin keep working.
"""


class AMPError(Exception):
    """Base exception for all package errors."""
    pass


class ShapeError(AMPError, ValueError):
    """Array dimensions do not match what the operation expects."""
    pass


class RankDeficientError(AMPError, ValueError):
    """A matrix that must have full column rank does not."""
    pass


class NonFiniteError(AMPError, ValueError):
    """A NaN or Inf was produced or supplied."""
    pass


class LabelError(AMPError, ValueError):
    """A class label is outside ``[0, C)``."""
    pass


class StepError(AMPError, ValueError):
    """A schedule step is outside ``[0, T]``."""
    pass


class EmptyDatasetError(AMPError, ValueError):
    """An operation needs at least one sample."""
    pass


class EmptyClassError(AMPError, ValueError):
    """An operation needs at least one sample of a given class."""
    pass


class DegenerateError(AMPError, ValueError):
    """Statistics are undefined for the supplied data."""
    pass


class ZeroMatrixError(AMPError, ValueError):
    """The zero matrix has no stable rank."""
    pass


class SpecError(AMPError, ValueError):
    """Synthetic dataset specification is invalid."""
    pass


class ConfigError(AMPError, ValueError):
    """Configuration value or file is invalid."""
    pass


class StaleCacheError(AMPError):
    """Feature cache was built against a different model snapshot."""
    pass


class InvariantViolation(AMPError):
    """A manifold or capacity invariant does not hold."""
    pass


class FormatError(AMPError):
    """Base class for binary file format errors."""
    pass


class CorruptCheckpointError(FormatError):
    """Checkpoint file is truncated, has a bad header or a bad checksum."""
    pass


class CorruptDatasetError(FormatError):
    """Dataset file is truncated or has a bad header."""
    pass


class IOFailure(AMPError, OSError):
    """Writing an export file failed."""
    pass
