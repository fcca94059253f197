"""Exception hierarchy shared by all modules."""


class WNTError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ValidationError(WNTError, ValueError):
    """Invalid input: bad parameter, domain violation, contract mismatch."""

    exit_code = 2


class DomainError(ValidationError):
    pass


class ContractError(ValidationError):
    pass


class OutOfRangeError(ValidationError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class InfeasibleLatticeError(ValidationError):
    pass


class SolverError(WNTError):
    """A numerical routine failed to produce an acceptable answer."""

    exit_code = 3


class SolverFailure(SolverError):
    def __init__(self, message, worst_node=None, worst_residual=None):
        super().__init__(message)
        self.worst_node = worst_node
        self.worst_residual = worst_residual


class StepSizeError(SolverError):
    pass


class DivergenceError(SolverError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NonConvergenceError(SolverError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InfeasibleMultiplierError(SolverError):
    pass
