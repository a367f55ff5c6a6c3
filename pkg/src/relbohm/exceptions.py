"""Exception hierarchy shared across the package."""


class RelBohmError(Exception):
    """Base class for all package errors."""


class ValidationError(RelBohmError, ValueError):
    """Invalid input: bad geometry, non-finite values, schema mismatch."""


class NoSignalError(RelBohmError, ValueError):
    """Both polarization channels recorded zero counts."""


class DegenerateDesignError(RelBohmError, ValueError):
    """A least-squares design is numerically rank deficient."""


class FitFailureError(RelBohmError, RuntimeError):
    """An iterative fit did not converge.

    The ``diagnostics`` attribute carries the last iterate and the
    iteration count so callers can report why.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MaskedRegionError(RelBohmError):
    """Requested value lies in a region where the field is undefined."""


class OutOfGridError(RelBohmError, ValueError):
    """Point lies outside the sampled grid."""
