"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument is outside the domain of the operation."""


class ConfigurationError(ValueError):
    """A network or training configuration cannot be realized."""


class VolumeIOError(OSError):
    """Reading or writing a volume failed.

    ``field`` names the header field (or payload property) that was at fault,
    so callers can report which part of the file is inconsistent.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UnsupportedFormatError(VolumeIOError):
    """The file is valid on disk but uses a format feature we do not read."""


class DegenerateClassWarning(UserWarning):
    """A class is absent from, or fills, the whole volume."""
