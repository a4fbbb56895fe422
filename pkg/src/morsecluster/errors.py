"""Exception hierarchy shared by all modules."""


class MorseClusterError(Exception):
    """Base class for every error raised by this package."""


class InputError(MorseClusterError, ValueError):
    """Malformed or inconsistent input (dimensions, shapes, parameters)."""


class UnsupportedDimensionError(InputError):
    """The operation is only defined for a particular dimension."""


class NumericalError(MorseClusterError):
    """A numerical procedure failed to produce a result."""


class NewtonFailure(NumericalError):
    """Newton-Raphson refinement did not produce a critical point."""


class DegenerateStepError(NewtonFailure):
    """The Hessian was singular at an iterate."""


class NonConvergenceError(NewtonFailure):
    """The iteration budget was exhausted."""


class SearchError(NumericalError):
    """No critical point was found from any seed."""


class UnsupportedGeometryError(MorseClusterError):
    """Boundary tracing requested at a point it cannot handle."""


class DegenerateMinimumError(NumericalError):
    """A local minimum has (numerically) vanishing curvature."""
