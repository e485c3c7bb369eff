"""Exception types shared across the toolkit.

Everything raised on purpose derives from :class:`FptcError` so the CLI can
map library failures to a nonzero exit with a single-line message.
"""


class FptcError(Exception):
    """Base class for all toolkit errors."""


class IngestionError(FptcError):
    """A scene directory is missing a required file or is unreadable."""


class ValidationError(FptcError, ValueError):
    """A value violates a documented invariant."""


class RangeError(FptcError, ValueError):
    """A window or index falls outside the addressable grid."""


class DomainError(FptcError, ValueError):
    """An argument lies outside the mathematical domain of a formula."""


class DegenerateGeometryError(FptcError, ValueError):
    """Geometry collapses, e.g. transmitter and receiver share a cell."""


class CapacityError(FptcError):
    """A sampling request asks for more cells than the scene can provide."""


class GenerationError(FptcError):
    """Synthetic scene generation failed after bounded retries."""


class NumericalError(FptcError):
    """A linear system could not be solved reliably."""


class ConfigurationError(FptcError):
    """Run configuration or checkpoint metadata is inconsistent."""
