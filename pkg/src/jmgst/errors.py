"""Exception hierarchy.

Numerical failures inside a Monte Carlo replicate are caught by the harness
and tallied; they never abort a run.
"""


class JmgstError(Exception):
    """Base class for all package errors."""


class ValidationError(JmgstError, ValueError):
    """A parameter, design or config value violates its invariants."""


class NumericalError(JmgstError):
    """Base class for failures of a numerical procedure."""


class InsufficientData(NumericalError):
    pass


class DegenerateDesign(NumericalError):
    pass


class NoDegreesOfFreedom(NumericalError):
    pass


class EmptyRiskSet(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class MaxIterations(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class NoEvents(NumericalError):
    pass


class MonotoneLikelihood(NumericalError):
    pass


class NonIncreasingInformation(NumericalError):
    pass


class BracketFailure(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    """Estimated covariance of the treatment estimates is not positive definite."""


class NegativeVariance(NumericalError):
    """Efficient recombination produced a non-positive variance."""


class SingularCovariance(NumericalError):
    pass


class ConditionViolated(JmgstError, ValueError):
    """Preconditions of the correlation-ordering inequality do not hold."""
