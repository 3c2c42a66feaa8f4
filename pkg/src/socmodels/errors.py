"""Exception hierarchy shared by all models.

``ModelError`` signals an invalid configuration (maps to CLI exit code 2);
``NumericalFailure`` signals that a valid configuration could not be
evaluated to the requested accuracy (exit code 3).
"""


class ModelError(ValueError):
    """Parameters or inputs violate a model invariant."""


class NumericalFailure(RuntimeError):
    """A numerical kernel could not deliver its accuracy guarantee."""


class SlowConvergenceError(NumericalFailure):
    """A series or quadrature hit its term/interval cap before converging."""


class NoBracketError(NumericalFailure):
    """Root finding was asked for a root on an interval without a sign change."""
