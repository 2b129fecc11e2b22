"""Exception types raised across the package."""


class DsrError(Exception):
    """Base class for all package errors."""


class GridMismatch(DsrError, ValueError):
    pass


class ChannelMismatch(DsrError, ValueError):
    pass


class KTooLarge(DsrError, ValueError):
    pass


class NonFiniteFlow(DsrError, ValueError):
    pass


class TooManyObjects(DsrError):
    pass


class PlacementFailure(DsrError):
    pass


class ActionOutOfGrid(DsrError, ValueError):
    pass


class NoObjects(DsrError):
    pass


class EmptyRegion(DsrError, ValueError):
    pass


class SchemaVersionError(DsrError, ValueError):
    """A file carries a schema version this reader does not understand."""
