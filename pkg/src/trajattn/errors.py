"""Exception types raised across the package.

All of them derive from :class:`TrajAttnError` (itself a ``ValueError``) so
callers such as the CLI can catch one base class.
"""


class TrajAttnError(ValueError):
    pass


class NonDivisible(TrajAttnError):
    pass


class OutOfBounds(TrajAttnError):
    pass


class MalformedDocument(TrajAttnError):
    pass


class FrameCountMismatch(TrajAttnError):
    pass


class EmptyBox(TrajAttnError):
    pass


class OddGroup(TrajAttnError):
    pass


class DimMismatch(TrajAttnError):
    pass


class BoxSizeMismatch(TrajAttnError):
    pass


class SpanOverlap(TrajAttnError):
    pass


class SetsOverlap(TrajAttnError):
    pass


class ShapeMismatch(TrajAttnError):
    pass


class AllBlockedRow(TrajAttnError):
    """A query row has every key blocked; the mask that produced it is broken."""


class WidthMismatch(TrajAttnError):
    pass


class ClientUnavailable(TrajAttnError):
    pass


class MalformedResponse(TrajAttnError):
    pass


class ConfigError(TrajAttnError):
    pass
