"""Exception types shared across the package."""


class MilesError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(MilesError):
    """Tensor shapes incompatible with the requested operation."""


class InputError(MilesError):
    """Invalid argument values (labels out of range, empty inputs, ...)."""


class ConfigError(MilesError):
    """Invalid configuration value or combination."""


class NumericError(MilesError):
    """Non-finite value where a finite one is required."""


class FormatError(MilesError):
    """Unrecognized dataset file (bad magic bytes or malformed header)."""


class CorruptionError(MilesError):
    """Dataset file does not contain what its header promises."""
