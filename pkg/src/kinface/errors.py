"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class KinfaceError(Exception):
    """Base class for all library errors."""


class DimensionError(KinfaceError, ValueError):
    """An array does not have the shape an operation requires."""

    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class NumericError(KinfaceError, ArithmeticError):
    """Non-finite values or a degenerate numerical setting."""


class ImageIOError(KinfaceError, OSError):
    """An image or label map could not be read or written."""


class ManifestError(KinfaceError, ValueError):
    """A dataset manifest is malformed or references missing files."""


class ConfigError(KinfaceError, ValueError):
    """A run configuration is invalid or inconsistent with a checkpoint."""


class DigestMismatchError(ConfigError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"config digest mismatch: checkpoint has {expected}, current config gives {actual}"
        )
