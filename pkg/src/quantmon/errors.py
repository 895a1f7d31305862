"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Shapes, coordinates or settings that cannot be used together."""


class DueError(RuntimeError):
    """An inference produced NaN/Inf (a detectable uncorrectable error)."""


class NetworkFormatError(ValueError):
    """Base class for problems reading a serialized network."""


class BadMagicError(NetworkFormatError):
    pass


class VersionMismatchError(NetworkFormatError):
    pass


class TruncatedPayloadError(NetworkFormatError):
    pass
