"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class ConstraintError(ValueError):
    """Input data violates a feasibility constraint (marginals, bistochasticity)."""


class CapacityError(ValueError):
    """Problem size exceeds a hard cap of a dense solver."""


class UnderflowError(ArithmeticError):
    """A log-domain field became non-finite (diffusivity too small for the grid)."""


class ConsistencyError(RuntimeError):
    """Two independent evaluation routes disagree beyond their guaranteed accuracy."""


class SampleSizeError(RuntimeError):
    """A Monte-Carlo confidence interval is too wide for the requested check."""


class AuditError(RuntimeError):
    """A first-order subgradient audit failed; the extracted field is rejected."""
