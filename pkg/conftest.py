"""Shared fixtures: small linear systems and the traces they generate."""
import numpy as np
import pytest

from src.models.coefficients import InitPolicy, MiningConfig, OptimizerKind
from src.models.system import InputSignal, LinearOdeSystem, SystemTemplate, Trace, TraceSegment
from src.tools.dih_rnn import induce_structure
from src.tools.ode_core import simulate_euler

SCALAR_LABELS = {"a[x,x]": "a", "b[x]": "b"}

# exact fits of noise-free Euler data
LBFGS = MiningConfig(
    optimizer=OptimizerKind.LBFGS,
    init_policy=InitPolicy.UNIFORM,
    max_epochs=500,
    convergence_tol=1e-14,
    upsilon=1e-3,
)


def scalar_system(a: float = -0.5, b: float = 1.0) -> LinearOdeSystem:
    return LinearOdeSystem(n=1, A=[[a]], B_diag=[b], state_names=["x"], input_names=["u"])


def euler_segment(system: LinearOdeSystem, inputs: np.ndarray, x0, tau: float, t0: float = 0.0) -> TraceSegment:
    """Noise-free segment generated by the same Euler recurrence the miner uses."""
    u = InputSignal(tau=tau, channels=np.atleast_2d(inputs))
    trajectory = simulate_euler(system, u, x0, u.length, t0=t0)
    return TraceSegment(inputs=u, trajectory=trajectory)


def scalar_trace(a: float = -0.5, b: float = 1.0, seed: int = 0, steps: int = 50, tau: float = 0.1) -> Trace:
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-1.0, 1.0, size=(1, steps))
    return Trace(segments=[euler_segment(scalar_system(a, b), inputs, [1.0], tau)])


@pytest.fixture
def scalar_template():
    return SystemTemplate.from_system(scalar_system(), labels=SCALAR_LABELS)


@pytest.fixture
def scalar_structure(scalar_template):
    return induce_structure(scalar_template)


@pytest.fixture
def bmm_structure():
    from src.tools.plants import bmm_template

    return induce_structure(bmm_template())
