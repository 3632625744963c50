"""Exception types shared across the package."""


class InvalidProbabilityError(ValueError):
    """Selection probabilities are negative or do not sum to one."""


class NumericalBlowupError(RuntimeError):
    """A state or map output left the finite, bounded regime."""


class ParameterDomainError(ValueError):
    """A sampled parameter fell outside the declared parameter space."""


class SingularNormalMatrixError(RuntimeError):
    """The control normal matrix R + B'QB is singular or near-singular."""


class InvalidDensityError(ValueError):
    """A supplied probability density is negative or malformed."""


class IncompatibleMeasureError(ValueError):
    """Empirical measures do not share bin edges."""


class EvaluationError(RuntimeError):
    """A user-supplied function returned a non-finite value."""
