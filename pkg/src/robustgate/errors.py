class ValidationError(ValueError):
    """Input failed a precondition check."""


class OptimizationError(RuntimeError):
    """An optimizer could not reach its goal.

    ``best_value`` and ``best`` carry the best point found so callers can retry
    or report.
    """

    def __init__(self, message, best_value=None, best=None):
        super().__init__(message)
        self.best_value = best_value
        self.best = best


class InfeasibleError(RuntimeError):
    """A convex subproblem has an empty feasible set."""


class UnboundedError(RuntimeError):
    """A linear program is unbounded."""
