"""Closed-loop controllers of the case studies.

A controller sees the sensed plant state and returns the command vector that
gets logged. Faults sit downstream (actuation) or upstream (sensing) of it.
"""
import logging
import math
from typing import Dict, Optional

import numpy as np
from scipy import linalg

from src.models.scenario import ControllerSpec, ControllerType
from src.models.system import LinearOdeSystem
from src.tools.fault_injector import FaultInjector
from src.tools.ode_core import equilibrium

logger = logging.getLogger(__name__)

# LQR weights are configured in (s, v, a) order; the brake plant runs in (a, v, s)
CONTROLLER_TO_PLANT = [2, 1, 0]


class Controller:
    def reset(self):
        pass

    def command(self, k: int, t: float, sensed: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def gains(self) -> Dict[str, object]:
        return {}


class BolusScheduleController(Controller):
    """Open-loop AID schedule: insulin boluses on channel 0, meal appearance on channel 2.

    A bolus of D units at t_d is one sample of D / tau (U/min). A meal of g
    grams at t_m appears at g * 1000 * k * exp(-k (t - t_m)) mg/min.
    """

    def __init__(self, spec: ControllerSpec, tau: float, n: int = 3, meal_rate: float = 0.03):
        self.spec = spec
        self.tau = tau
        self.n = n
        self.meal_rate = meal_rate
        self._dose_samples: Dict[int, float] = {}
        for dose in spec.doses:
            k = int(round(dose.t / tau))
            self._dose_samples[k] = self._dose_samples.get(k, 0.0) + dose.units

    def command(self, k: int, t: float, sensed: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n)
        u[0] = self._dose_samples.get(k, 0.0) / self.tau
        rate = self.meal_rate
        u[2] = sum(
            meal.grams * 1000.0 * rate * math.exp(-rate * (t - meal.t))
            for meal in self.spec.meals
            if t >= meal.t
        )
        return u

    @property
    def gains(self) -> Dict[str, object]:
        return {
            "doses": [d.model_dump() for d in self.spec.doses],
            "meals": [m.model_dump() for m in self.spec.meals],
        }


class PidController(Controller):
    """Pitch PID on the sensed theta; derivative on measurement.

    The same elevator command drives both the alpha and q channels.
    """

    def __init__(self, spec: ControllerSpec, tau: float, n: int = 3, output_index: int = 2):
        self.spec = spec
        self.tau = tau
        self.n = n
        self.output_index = output_index
        self._changes = sorted(spec.setpoints, key=lambda c: c.t)
        self.reset()

    def reset(self):
        self._integral = 0.0
        self._previous: Optional[float] = None

    def setpoint(self, t: float) -> float:
        value = 0.0
        for change in self._changes:
            if t >= change.t:
                value = change.value
        return value

    def command(self, k: int, t: float, sensed: np.ndarray) -> np.ndarray:
        y = float(sensed[self.output_index])
        error = self.setpoint(t) - y
        self._integral += error * self.tau
        derivative = 0.0 if self._previous is None else -(y - self._previous) / self.tau
        self._previous = y
        delta = self.spec.kp * error + self.spec.ki * self._integral + self.spec.kd * derivative
        u = np.zeros(self.n)
        u[0] = delta
        u[1] = delta
        return u

    @property
    def gains(self) -> Dict[str, object]:
        return {"kp": self.spec.kp, "ki": self.spec.ki, "kd": self.spec.kd}


def lqr_gain(plant: LinearOdeSystem, Q_diag, R: float, input_index: int = 0) -> np.ndarray:
    """State-feedback gain K = R^-1 B^T P with P from the continuous algebraic Riccati equation."""
    A = plant.A
    B = plant.B[:, [input_index]]
    Q = np.diag(np.asarray(Q_diag, dtype=float))
    R_mat = np.array([[float(R)]])
    P = linalg.solve_continuous_are(A, B, Q, R_mat)
    return (np.linalg.solve(R_mat, B.T @ P)).reshape(-1)


class LqrController(Controller):
    """Braking LQR regulating the plant toward the kinematic rest point x*.

    The Q weights pass through the injector's tune() hook before synthesis,
    so a mis-declared weight changes the gain but never the logged config.
    """

    def __init__(self, spec: ControllerSpec, plant: LinearOdeSystem, injector: Optional[FaultInjector] = None):
        self.spec = spec
        self.plant = plant
        self.weights = injector.tune(spec.Q) if injector is not None else list(spec.Q)
        q_plant = [self.weights[i] for i in CONTROLLER_TO_PLANT]
        self.K = lqr_gain(plant, q_plant, spec.R)
        self.target = equilibrium(plant)
        logger.debug(f"LQR gain {np.round(self.K, 4).tolist()} with Q(s,v,a)={self.weights}")

    def command(self, k: int, t: float, sensed: np.ndarray) -> np.ndarray:
        u = np.zeros(self.plant.n)
        u[0] = -float(self.K @ (np.asarray(sensed, dtype=float) - self.target))
        return u

    @property
    def gains(self) -> Dict[str, object]:
        return {"K": self.K.tolist(), "Q": list(self.weights), "R": self.spec.R}


def build_controller(
    spec: ControllerSpec,
    plant: LinearOdeSystem,
    tau: float,
    injector: Optional[FaultInjector] = None,
    meal_rate: float = 0.03,
) -> Controller:
    kind = ControllerType(spec.type)
    if kind == ControllerType.BOLUS_SCHEDULE:
        return BolusScheduleController(spec, tau, plant.n, meal_rate=meal_rate)
    if kind == ControllerType.PID:
        return PidController(spec, tau, plant.n)
    return LqrController(spec, plant, injector)
