"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 infeasible model, 3 validation error, 4 guard exceeded, 5 solver failure.
"""

from __future__ import annotations


class ShiftsiteError(Exception):
    exit_code = 1


class ValidationError(ShiftsiteError, ValueError):
    exit_code = 3

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DisconnectedGraph(ValidationError):
    pass


class InvalidIndex(ValidationError):
    pass


class NonPositiveParameter(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NegativeValue(ValidationError):
    pass


class EmptyHorizon(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SingularNetwork(ValidationError):
    pass


class MissingArtifact(ShiftsiteError):
    exit_code = 3


class InfeasibleModel(ShiftsiteError):
    exit_code = 2


class BaselineInfeasible(InfeasibleModel):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"baseline DC-OPF infeasible at timestep {t}")


class NoFeasiblePlan(InfeasibleModel):
    pass


class InfeasibleLeaf(InfeasibleModel):
    """A terminal location vector whose dispatch is certified infeasible."""

    def __init__(self, mask: int, t: int | None = None):
        self.mask = mask
        self.t = t
        super().__init__(f"location mask {mask:#x} infeasible at timestep {t}")


class GuardExceeded(ShiftsiteError):
    exit_code = 4


class EnumerationTooLarge(GuardExceeded):
    pass


class ProblemTooLarge(GuardExceeded):
    pass


class SolverFailure(ShiftsiteError):
    exit_code = 5
