"""Exception hierarchy shared by all modules."""


class MpcError(Exception):
    """Base class for errors raised by mimpc."""


class ContractError(MpcError, ValueError):
    """Raised when an input violates a documented precondition."""


class SimplexInfeasibleError(ContractError):
    """A multiplier is outside the simplex, or not binary where required."""


class IntegrationOverflowError(MpcError, FloatingPointError):
    """The integrator produced a non-finite state.

    ``substep`` is the zero-based index of the offending integrator substep
    counted from the start of the rollout.
    """

    def __init__(self, substep: int, message: str | None = None):
        self.substep = substep
        super().__init__(message or f"non-finite state after integrator substep {substep}")


class StabilizabilityError(MpcError):
    """The Riccati fixed-point iteration did not converge."""


class SolverInfeasibleError(MpcError):
    """No iterate satisfied the terminal constraint within the budget."""

    def __init__(self, violation: float, message: str | None = None):
        self.violation = violation
        super().__init__(message or f"terminal constraint violated by {violation:.3e}")


class ConfigError(MpcError, ValueError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
