"""Exception types shared across the package."""


class InfoAttrError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(InfoAttrError, ValueError):
    """Patch geometry is impossible for the given image (e.g. K larger than a dimension)."""


class DegenerateDataError(InfoAttrError, ValueError):
    """Training or fitting data cannot support the requested model (single class,
    too few samples, singular covariance without jitter, empty training set)."""


class FormatError(InfoAttrError, ValueError):
    """A persisted file does not match its declared format."""


class ProtocolError(InfoAttrError, RuntimeError):
    """Wire-protocol failure: transport, timeout, malformed or invalid peer response."""


class UnsupportedOracleError(InfoAttrError, TypeError):
    """Exact marginalization requested from a sampler without enumerable support."""


class CorrelationUndefinedError(InfoAttrError, ValueError):
    """Correlation of a constant map is undefined; raised instead of silently returning 0."""


class EngineError(InfoAttrError, RuntimeError):
    """Attribution run aborted; the message names the failing patch."""
