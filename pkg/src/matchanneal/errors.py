"""Shared exception types with a stable CLI exit-code mapping."""


class InputError(ValueError):
    """Malformed or out-of-contract input (CLI exit code 2)."""


class SizeCapError(RuntimeError):
    """Problem exceeds the hard size cap of an exact oracle (CLI exit code 3)."""


class InfeasibleInstanceError(RuntimeError):
    """No assignment can satisfy the matching constraints (CLI exit code 4)."""


class ApproximationInfeasibleError(InfeasibleInstanceError):
    """The compressed two-candidate model cannot be built or satisfied."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given reference value (e.g. zero optimum)."""


class PenaltyTuningError(RuntimeError):
    """No penalty weight on the grid reached the feasibility threshold."""

    def __init__(self, message: str, table):
        super().__init__(message)
        self.table = table
