"""Exception types shared across the package."""


class SwiptError(Exception):
    """Base class for all package-specific errors."""


class ContractViolationError(SwiptError, ValueError):
    """An input violates a documented precondition (shape, symmetry, sign...)."""


class NotPsdError(ContractViolationError):
    """A matrix required to be positive semidefinite is not, beyond tolerance."""


class RankToleranceError(SwiptError):
    """A range/null split produced a numerically unusable reduced matrix.

    Callers should retry with a coarser rank tolerance.
    """


class ConstructionError(SwiptError):
    """A requested channel construction (e.g. correlation targets) is infeasible."""


class InfeasibleError(SwiptError):
    """The problem instance admits no feasible transmit strategy.

    ``certificate`` carries the separating dual certificate (or the maximum
    achievable slack) of the feasibility program that failed.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class InternalInconsistencyError(SwiptError):
    """An internal invariant that should be impossible to break was broken."""
