"""Exception hierarchy shared across the package.

Validation problems (bad files, inconsistent dimensions, broken invariants
of the inputs) raise :class:`ValidationError`; failures of the numerics
(singular systems, non-convergence) raise :class:`NumericalError`. The CLI
maps the two families to exit codes 2 and 3 respectively.
"""


class GridTopoError(Exception):
    """Base class for all package errors."""


class ValidationError(GridTopoError, ValueError):
    """Input data or configuration violates a documented precondition."""


class NumericalError(GridTopoError, RuntimeError):
    """A numerical operation failed (singularity, ill-conditioning)."""


class ConvergenceError(NumericalError):
    """An iterative solver did not converge within its iteration budget."""

    def __init__(self, message, gap=None, iterations=None):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations
