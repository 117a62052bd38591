"""Exception types shared across the toolkit."""


class MrmError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MrmError):
    """A parameter or configuration violates a documented constraint."""


class NumericalError(MrmError):
    """A numerical routine failed to converge or produce a usable result."""


class CannotNormalizeError(ValidationError):
    """The jump measure has a divergent exponential moment, so the drift
    that enforces psi(1)=0 does not exist."""


class UnsupportedRegimeError(ValidationError):
    """Parameters fall in a regime the formulas do not cover (e.g. cone
    overlaps with resolution scale above the integral scale)."""


class CoverageError(ValidationError):
    """A sampled point cloud does not cover every cone over the target grid."""


class RangeError(ValidationError):
    """A query point lies outside the domain of a measure or table."""


class EstimatorDegenerateError(NumericalError):
    """A statistical estimator produced an out-of-band or unbracketable value."""


class InvalidExponentError(ValidationError):
    """A structure-function callable failed its monotonicity/normalization checks."""
