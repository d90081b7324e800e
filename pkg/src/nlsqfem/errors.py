"""Exception types shared across the package."""


class DegenerateElementError(ValueError):
    """A triangle with (numerically) zero area was encountered."""


class ConfigurationError(ValueError):
    """Inconsistent problem, boundary or experiment configuration."""


class SolverFailure(RuntimeError):
    """The linear solver detected a non-SPD matrix or failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonConvergenceError(RuntimeError):
    """Gauss-Newton iteration hit its iteration limit."""

    def __init__(self, message, history=None, state=None):
        super().__init__(message)
        self.history = list(history or [])
        self.state = state
