"""Exception hierarchy shared across the package."""


class EmtuneError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(EmtuneError):
    """Array shapes do not line up for the requested operation."""


class ConfigError(EmtuneError):
    """A configuration value (hyperparameter, flag, spec field) is invalid."""


class DataError(EmtuneError):
    """Input data violates a documented precondition."""


class BatchSizeError(DataError):
    """A batch statistic was requested over a batch that is too small."""


class StateError(EmtuneError):
    """Required state is absent, e.g. a checkpoint without an adapter."""


class NumericError(EmtuneError):
    """A non-finite value appeared where a finite one is required."""


class FormatError(EmtuneError):
    """A binary artifact has an unsupported format version."""


class ParseError(EmtuneError):
    """A file could not be decoded. Carries the offending location."""

    def __init__(self, message, *, offset=None, line=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class DegenerateGeometryError(EmtuneError):
    """The embedding geometry is too degenerate for the requested metric."""
