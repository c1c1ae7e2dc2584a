"""Exception hierarchy shared across the package."""


class UtgError(Exception):
    """Base class for all validation-style failures raised by utgpose."""


class InvalidTimestampsError(UtgError):
    pass


class NoFirstPathError(UtgError):
    pass


class TruncatedWindowError(UtgError):
    pass


class OutOfDomainError(UtgError):
    pass


class ShapeError(UtgError):
    pass


class DivergedError(UtgError):
    pass


class InputRangeError(UtgError):
    pass


class WindowNotReadyError(UtgError):
    pass


class OutOfOrderError(UtgError):
    pass


class MissingModelError(UtgError):
    pass


class ConfigError(UtgError):
    pass


class SchemaError(UtgError):
    """Raised when an imported file cannot be mapped onto the native schema."""
