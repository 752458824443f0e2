"""Exception hierarchy shared by all modules.

The CLI maps ``ContractViolation`` to exit code 1 and ``NumericalFailure``
(and subclasses) to exit code 2.
"""


class ContractViolation(ValueError):
    """A precondition on the arguments was not met."""


class NumericalFailure(RuntimeError):
    """A numerical procedure failed or could not reach its tolerance."""


class SingularityError(NumericalFailure):
    """Evaluation at coincident points or at a pole."""


class PoleError(SingularityError):
    """Anomaly coefficient hits 1 - nu = 0."""


class SizeError(ContractViolation):
    """Requested problem size exceeds the configured maximum."""


class QuadratureError(NumericalFailure):
    pass


class FitError(NumericalFailure):
    pass


class RangeError(NumericalFailure):
    """No root / crossing inside the scanned window."""


class OrientationError(NumericalFailure):
    """Kasteleyn orientation check failed; indicates a construction bug."""
