"""Exception types shared across the package."""


class StreamMemError(Exception):
    """Base class for package errors."""


class StreamOrderError(StreamMemError):
    """Timestamps went backwards in a stream or admit sequence."""


class DimensionError(ValueError):
    """Mismatched buffer sizes, bin counts, or vector dimensions."""


class DegenerateInputError(ValueError):
    """Input has no usable content (zero pixels, zero-norm vector)."""


class DataFormatError(StreamMemError):
    """A file or record did not match its documented format."""


class ConfigError(StreamMemError):
    """Inconsistent or invalid run configuration."""


class BackendError(StreamMemError):
    """A model backend was unreachable or returned a failure."""


class EvictionImpossibleError(StreamMemError):
    """Eviction requested while only the active event is buffered."""
