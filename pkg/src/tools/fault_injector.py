import logging
from typing import List, Optional

import numpy as np

from src.models.scenario import AoAError, FaultSpec, InsulinBlockade, QOverflow

logger = logging.getLogger(__name__)

INSULIN_CHANNEL = 0
AOA_CHANNEL = 0


def wrap_signed(value: float, width: int) -> int:
    """Value as stored in a signed two's-complement field of the given bit width."""
    span = 1 << width
    half = span >> 1
    return int(((int(value) + half) % span) - half)


class FaultInjector:
    """Perturbs the plant side of a closed loop; the logged commands are never touched.

    actuate() rewrites what is delivered to the plant, sense() what the
    plant-side sensors report, tune() the controller's configured weights.
    With no fault every hook is the identity.
    """

    def __init__(self, fault: Optional[FaultSpec], tau: float):
        self.fault = fault
        self.tau = tau
        self.reset()

    def reset(self):
        self.depot = 0.0
        self.released = False
        seed = self.fault.seed if self.fault is not None else 0
        self._rng = np.random.default_rng(seed)

    @property
    def kind(self) -> str:
        return self.fault.kind if self.fault is not None else "none"

    def actuate(self, k: int, t: float, command: np.ndarray) -> np.ndarray:
        if not isinstance(self.fault, InsulinBlockade):
            return command
        fault = self.fault
        delivered = np.array(command, dtype=float)
        dose = delivered[INSULIN_CHANNEL] * self.tau
        if not self.released and t >= fault.release_min:
            self.released = True
            if fault.phantom:
                logger.debug(f"Phantom blockade: {self.depot:.3g} U never delivered")
            else:
                dose += self.depot
                logger.debug(f"Blockade releases {self.depot:.3g} U at t={t:g}")
            self.depot = 0.0
        elif not self.released:
            withheld = dose * fault.percent / 100.0
            self.depot += withheld
            dose -= withheld
        delivered[INSULIN_CHANNEL] = dose / self.tau
        return delivered

    def sense(self, k: int, t: float, measurement: np.ndarray) -> np.ndarray:
        if not isinstance(self.fault, AoAError):
            return measurement
        fault = self.fault
        if t < fault.onset_s:
            return measurement
        sensed = np.array(measurement, dtype=float)
        noise = 1.0 + fault.noise_rate * self._rng.uniform(-1.0, 1.0)
        sensed[AOA_CHANNEL] = (sensed[AOA_CHANNEL] + fault.magnitude_rad) * noise
        return sensed

    def tune(self, weights: List[float]) -> List[float]:
        if not isinstance(self.fault, QOverflow):
            return list(weights)
        tuned = list(weights)
        tuned[0] = float(wrap_signed(tuned[0], self.fault.declared_width))
        if tuned[0] != weights[0]:
            logger.info(f"Q(1,1) = {weights[0]:g} stored as {self.fault.declared_width}-bit signed: {tuned[0]:g}")
        return tuned


def inject_fault(stream, fault: Optional[FaultSpec], tau: float = 1.0) -> np.ndarray:
    """Apply a fault to a whole stream.

    Blockades act on a command stream (channels x samples), AoA errors on a
    measurement stream (channels x samples), overflows on a weight vector.
    """
    injector = FaultInjector(fault, tau)
    data = np.array(stream, dtype=float)
    if isinstance(fault, QOverflow):
        return np.array(injector.tune(data.tolist()))
    if fault is None:
        return data
    if data.ndim != 2:
        raise ValueError("command and measurement streams are channels x samples arrays")
    hook = injector.actuate if isinstance(fault, InsulinBlockade) else injector.sense
    out = np.empty_like(data)
    for k in range(data.shape[1]):
        out[:, k] = hook(k, k * tau, data[:, k])
    return out
