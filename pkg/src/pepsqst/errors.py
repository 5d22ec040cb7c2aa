"""Exception types shared across the package."""

from __future__ import annotations


class ScaleError(ValueError):
    """Raised when a problem exceeds the dense desk-scale limits."""


class StructureError(ValueError):
    """Raised on inconsistent lattice shapes, bonds or tensor kinds."""


class DegenerateTraceError(ArithmeticError):
    """Raised when trace normalisation would divide by (nearly) zero."""


class InvalidDistributionError(ValueError):
    """Raised when a probability block cannot be sampled from."""


class OptimizationError(RuntimeError):
    """Raised when every restart of a fit diverged.

    The loss trajectories of all restarts are kept on ``trajectories``.
    """

    def __init__(self, message: str, trajectories: list[list[float]] | None = None) -> None:
        super().__init__(message)
        self.trajectories = trajectories or []
