"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Malformed arguments to a solver or fitting routine."""


class InvalidConfig(ValueError):
    """A market, policy or experiment configuration violates its invariants."""


class UnsupportedSpec(ValueError):
    """The requested computation is not available for this distribution family."""


class NoRootError(RuntimeError):
    """Root finding could not bracket a solution."""


class SolverFailure(RuntimeError):
    """The simplex solver lost feasibility or exhausted its iteration budget.

    ``diagnostics`` carries the iteration count and the worst violation seen.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
