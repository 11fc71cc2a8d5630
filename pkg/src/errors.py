"""Exception hierarchy for the critical-set laboratory."""


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class DimensionMismatchError(LabError, ValueError):
    """Operands live in different ambient dimensions."""


class NotHarmonicError(LabError, ValueError):
    """Input was required to be (homogeneous) harmonic and is not."""


class PreconditionError(LabError, ValueError):
    """A documented precondition of an operation does not hold."""


class UndefinedFrequencyError(LabError):
    """Frequency is undefined (constant function on the sphere)."""


class IdentityViolation(LabError):
    """An identity that must hold exactly failed."""


class QuadratureError(LabError):
    """Quadrature could not reach the requested accuracy."""


class ProjectionError(LabError):
    """Projection onto harmonic polynomials left too large a residual."""


class SolverError(LabError):
    """Finite-difference solve failed or missed its residual tolerance."""


class CoveringError(LabError):
    """The covering algorithm broke one of its own guards."""


class ConfigurationError(LabError, ValueError):
    """Invalid configuration or override."""
