"""Exception types raised by the simulator."""


class SoftRodError(Exception):
    """Base class for all softrod errors."""


class InvalidParameterError(SoftRodError, ValueError):
    """A physical or numerical parameter is out of its valid range."""


class DegenerateEdgeError(SoftRodError):
    """Two adjacent nodes coincide; tangents are undefined."""

    def __init__(self, edge_index: int):
        self.edge_index = edge_index
        super().__init__(f"edge {edge_index} has near-zero length")


class AntiparallelTangentError(SoftRodError):
    """Parallel transport is undefined for a 180 degree tangent flip."""

    def __init__(self, edge_index: int):
        self.edge_index = edge_index
        super().__init__(
            f"edge {edge_index} tangent flipped by ~180 degrees in one step"
        )


class SingularMatrixError(SoftRodError):
    """Banded linear solve hit a singular or non-factorizable matrix."""


class StepFailureError(SoftRodError):
    """Implicit solve produced a non-finite iterate or a singular system."""

    def __init__(self, message: str, residual_norm: float = float("nan"),
                 iterations: int = -1):
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(message)


class InstabilityError(SoftRodError):
    """Explicit integration diverged."""

    def __init__(self, dof_index: int, value: float, step: int = -1):
        self.dof_index = dof_index
        self.value = value
        self.step = step
        super().__init__(
            f"explicit integration unstable at DOF {dof_index} "
            f"(value {value:.3e}, step {step}); reduce dt"
        )


class ConfigError(SoftRodError, ValueError):
    """Run configuration is malformed (unknown key, bad value)."""
