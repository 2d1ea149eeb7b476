from typing import Any, Optional


class MonitorError(Exception):
    """Base class for every error raised by the monitor."""


class PreconditionError(MonitorError, ValueError):
    """An operation was called with arguments that violate its contract."""


class ConfigValidationError(MonitorError, ValueError):
    """A JSON input failed schema validation. The message is path-qualified."""


class StructureMismatchError(MonitorError, ValueError):
    """Two coefficient vectors (or a vector and a structure) disagree on layout."""


class DivergenceError(MonitorError):
    """A simulated state became non-finite."""

    def __init__(self, step: int, message: Optional[str] = None):
        self.step = step
        super().__init__(message or f"State diverged (non-finite) at step {step}")


class StepBoundError(MonitorError):
    """The sample period exceeds the Euler step bound for the current coefficients."""

    def __init__(self, tau: float, tau_max: float):
        self.tau = tau
        self.tau_max = tau_max
        super().__init__(f"Step period {tau:g} exceeds the step bound {tau_max:g}")


class MiningConvergenceError(MonitorError):
    """Mining did not reach the distance bound. Carries the best coefficients found."""

    def __init__(self, best: Any, distance: float, upsilon: float, window: Optional[int] = None):
        self.best = best
        self.distance = distance
        self.upsilon = upsilon
        self.window = window
        where = f" in window {window}" if window is not None else ""
        super().__init__(
            f"Mining did not converge{where}: distance {distance:.6g} >= bound {upsilon:.6g}"
        )


class ZeroReferenceError(MonitorError, ZeroDivisionError):
    """A reference coefficient is zero, so the relative deviation is undefined."""

    def __init__(self, index: int, label: str = ""):
        self.index = index
        name = f" ({label})" if label else ""
        super().__init__(f"Reference coefficient {index}{name} is zero")


class ControllerDivergenceError(DivergenceError):
    """The closed loop blew up during a scenario run."""
