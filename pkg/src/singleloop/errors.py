"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SingleLoopError(Exception):
    """Base class for every error raised by this package."""


class InputError(SingleLoopError, ValueError):
    """Malformed input: wrong dimensions, asymmetric matrix, bad constants."""


class CapabilityError(SingleLoopError):
    """The oracle lacks something the operation needs (usually ground truth)."""


class SingularHessian(SingleLoopError, ArithmeticError):
    """A matrix expected to be symmetric positive definite is not."""


class DivergenceDetected(SingleLoopError, ArithmeticError):
    def __init__(self, message: str, last_finite_step: int, trajectory=None):
        super().__init__(message)
        self.last_finite_step = last_finite_step
        self.trajectory = trajectory


class InnerStall(SingleLoopError):
    def __init__(self, message: str, outer_step: int, trajectory=None):
        super().__init__(message)
        self.outer_step = outer_step
        self.trajectory = trajectory


class InsufficientDecay(SingleLoopError):
    """Not enough points inside the rate-fitting window."""


class StepSizeInfeasible(SingleLoopError, ValueError):
    def __init__(self, violated: list[str], message: str | None = None):
        self.violated = list(violated)
        super().__init__(message or f"step sizes violate: {', '.join(self.violated)}")


class MultiplierInfeasible(SingleLoopError):
    def __init__(self, violated: list[str]):
        self.violated = list(violated)
        super().__init__(f"multiplier conditions fail: {', '.join(self.violated)}")


class TransformInfeasible(SingleLoopError):
    pass


class UnstableScaledSystem(SingleLoopError):
    pass
