import logging
from typing import Callable, Optional, Union

import numpy as np

from src.models.scenario import Integrator
from src.models.system import InputSignal, LinearOdeSystem, Trajectory
from src.utils.errors import DivergenceError, PreconditionError

logger = logging.getLogger(__name__)

Stepper = Callable[[LinearOdeSystem, np.ndarray, np.ndarray, float], np.ndarray]


def euler_step(sys: LinearOdeSystem, x: np.ndarray, u: np.ndarray, tau: float) -> np.ndarray:
    return x + tau * (sys.A @ x + sys.b_diag * u + sys.affine_offset)


def rk4_step(sys: LinearOdeSystem, x: np.ndarray, u: np.ndarray, tau: float) -> np.ndarray:
    """Classical Runge-Kutta step; u is held constant over the step."""
    k1 = sys.derivative(x, u)
    k2 = sys.derivative(x + 0.5 * tau * k1, u)
    k3 = sys.derivative(x + 0.5 * tau * k2, u)
    k4 = sys.derivative(x + tau * k3, u)
    return x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {Integrator.EULER: euler_step, Integrator.RK4: rk4_step}


def _check_inputs(sys: LinearOdeSystem, u: InputSignal, x0: np.ndarray, steps: int) -> np.ndarray:
    if steps < 0:
        raise PreconditionError(f"steps must be non-negative, got {steps}")
    if u.n_channels != sys.n:
        raise PreconditionError(f"input has {u.n_channels} channels, system has {sys.n} states")
    if u.length < steps:
        raise PreconditionError(f"input has {u.length} samples, {steps} steps requested")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise PreconditionError(f"x0 must have length {sys.n}")
    if not np.all(np.isfinite(x0)):
        raise PreconditionError("x0 has non-finite entries")
    return x0


def _integrate(stepper: Stepper, sys: LinearOdeSystem, u: InputSignal, x0, steps: int, t0: float) -> Trajectory:
    x0 = _check_inputs(sys, u, x0, steps)
    tau = u.tau
    states = np.empty((sys.n, steps + 1))
    states[:, 0] = x0
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = stepper(sys, x, u.channels[:, k], tau)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(k + 1)
            states[:, k + 1] = x
    return Trajectory(tau=tau, t0=t0, states=states)


def simulate_euler(sys: LinearOdeSystem, u: InputSignal, x0, steps: int, t0: float = 0.0) -> Trajectory:
    """x[k+1] = x[k] + tau (A x[k] + B u[k] + offset)."""
    return _integrate(euler_step, sys, u, x0, steps, t0)


def simulate_rk4(sys: LinearOdeSystem, u: InputSignal, x0, steps: int, t0: float = 0.0) -> Trajectory:
    return _integrate(rk4_step, sys, u, x0, steps, t0)


def simulate(
    sys: LinearOdeSystem,
    u: InputSignal,
    x0,
    steps: int,
    integrator: Union[Integrator, str] = Integrator.RK4,
    t0: float = 0.0,
) -> Trajectory:
    return _integrate(STEPPERS[Integrator(integrator)], sys, u, x0, steps, t0)


def _observable_mask(beta, n: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    diag = np.diag(beta) if beta.ndim == 2 else beta
    if diag.shape != (n,):
        raise PreconditionError(f"observability mask must cover {n} states")
    return diag == 1.0


def trajectory_distance(a: Trajectory, b: Trajectory, beta) -> float:
    """Root-mean-square error over the observable channels (beta_ii = 1).

    beta may be the n x n matrix or its diagonal.
    """
    if a.states.shape != b.states.shape:
        raise PreconditionError(f"trajectory shapes differ: {a.states.shape} vs {b.states.shape}")
    if not np.isclose(a.tau, b.tau, rtol=1e-9, atol=0.0):
        raise PreconditionError(f"sample periods differ: {a.tau} vs {b.tau}")
    mask = _observable_mask(beta, a.n)
    if not mask.any():
        raise PreconditionError("no observable channels to compare")
    diff = a.states[mask] - b.states[mask]
    return float(np.sqrt(np.mean(diff ** 2)))


def relative_error(a: Trajectory, reference: Trajectory, beta) -> float:
    """RMSE(a, reference) / RMS(reference) over observable channels."""
    mask = _observable_mask(beta, reference.n)
    scale = float(np.sqrt(np.mean(reference.states[mask] ** 2)))
    dist = trajectory_distance(a, reference, beta)
    return dist / scale if scale > 0 else dist


def equilibrium(sys: LinearOdeSystem, u: Optional[np.ndarray] = None) -> np.ndarray:
    """State where A x + B u + offset = 0 (least-squares when A is singular)."""
    drive = sys.affine_offset + (sys.b_diag * np.asarray(u, dtype=float) if u is not None else 0.0)
    if not np.any(drive):
        return np.zeros(sys.n)
    try:
        return np.linalg.solve(sys.A, -drive)
    except np.linalg.LinAlgError:
        logger.warning("Singular A; using the least-squares equilibrium")
        return np.linalg.lstsq(sys.A, -drive, rcond=None)[0]


def is_stable(sys: LinearOdeSystem) -> bool:
    return bool(np.all(np.linalg.eigvals(sys.A).real < 0))
