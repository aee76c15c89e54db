"""Exception hierarchy shared by all shapegraph modules."""


class ShapegraphError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ShapegraphError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ShapegraphError):
    """A computation produced NaN/Inf or received a degenerate input."""


class ConfigError(ShapegraphError):
    """Invalid configuration value, file, or flag combination."""


class ProtocolError(ShapegraphError):
    """Retrieval protocol violated (e.g. query class absent from gallery)."""


class ArchiveError(ShapegraphError):
    """Base class for interchange-file failures."""


class BadMagicError(ArchiveError):
    """File does not start with the expected magic bytes."""


class TruncatedArchiveError(ArchiveError):
    """File ended before a declared payload was complete."""


class ArchiveShapeError(ArchiveError):
    """Declared tensor shape disagrees with the payload length."""


class UnlabeledItemError(ArchiveError):
    """A tensor in the archive has no entry in the label sidecar."""
