"""Exception types shared across the package."""

from __future__ import annotations


class ScenarioError(ValueError):
    """A scenario file or in-memory scenario violates the schema or an invariant."""


class BranchCutError(ValueError):
    """Rotation angle at or beyond the logarithm's principal branch (|angle| >= pi)."""


class SingularGeometryError(RuntimeError):
    """Two ranging tags coincide, so the measurement direction is undefined."""

    def __init__(self, message: str, edge=None):
        super().__init__(message)
        self.edge = edge


class ObservabilityError(RuntimeError):
    """The Fisher information matrix is rank deficient at the queried state."""

    def __init__(self, message: str, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class BarrierPoleError(RuntimeError):
    """An inter-agent distance sits on the collision barrier's pole."""


class InfeasibleStateError(RuntimeError):
    """An inter-agent distance is below the safety radius."""


class GradientError(RuntimeError):
    """A finite-difference probe pair was infinite on both sides."""


class DescentStallError(RuntimeError):
    """Backtracking exhausted its halvings without finding an acceptable step."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class EstimatorSingularError(RuntimeError):
    """The least-squares normal equations are rank deficient."""


class EstimatorMaxIterError(RuntimeError):
    """Gauss-Newton hit its iteration cap without the step norm converging."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
