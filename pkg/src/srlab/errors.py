"""Exception hierarchy shared across the package."""


class SRLabError(Exception):
    """Base class for all package errors."""


class ConfigError(SRLabError, ValueError):
    """Invalid configuration (channel counts, layer specs, parameters)."""


class ShapeError(SRLabError, ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class FormatError(SRLabError):
    """File content does not match the expected format."""


class UnsupportedFormatError(FormatError):
    """Recognized but unsupported file variant, or unknown file type."""


class TruncatedFileError(FormatError):
    """File ended before all declared content was read."""


class VersionError(FormatError):
    """Checkpoint or archive written by an incompatible format version."""
