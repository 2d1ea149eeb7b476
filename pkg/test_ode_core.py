import numpy as np
import pytest

from src.models.scenario import BmmParams
from src.models.system import InputSignal, LinearOdeSystem, Trajectory
from src.tools.ode_core import (
    equilibrium,
    is_stable,
    relative_error,
    simulate,
    simulate_euler,
    simulate_rk4,
    trajectory_distance,
)
from src.tools.plants import bmm_system
from src.utils.errors import DivergenceError, PreconditionError


def _scalar(a: float) -> LinearOdeSystem:
    return LinearOdeSystem(n=1, A=[[a]], B_diag=[0.0])


def test_zero_dynamics_keep_the_initial_state():
    system = LinearOdeSystem(n=2, A=np.zeros((2, 2)))
    u = InputSignal.zeros(2, 10, 0.5)
    for traj in (simulate_euler(system, u, [1.5, -2.0], 10), simulate_rk4(system, u, [1.5, -2.0], 10)):
        assert traj.states.shape == (2, 11)
        assert np.all(traj.states[0] == 1.5)
        assert np.all(traj.states[1] == -2.0)


def test_one_euler_step_by_hand():
    traj = simulate_euler(_scalar(-1.0), InputSignal.zeros(1, 1, 0.1), [1.0], 1)
    assert traj.states[0, 1] == pytest.approx(0.9)


def test_one_rk4_step_matches_the_exponential():
    traj = simulate_rk4(_scalar(-1.0), InputSignal.zeros(1, 1, 0.1), [1.0], 1)
    assert traj.states[0, 1] == pytest.approx(np.exp(-0.1), abs=1e-4)
    assert traj.states[0, 1] == pytest.approx(0.904837, abs=1e-4)


def test_affine_offset_enters_every_step():
    system = LinearOdeSystem(n=1, A=[[0.0]], affine_offset=[2.0])
    traj = simulate_euler(system, InputSignal.zeros(1, 3, 0.5), [0.0], 3)
    np.testing.assert_allclose(traj.states[0], [0.0, 1.0, 2.0, 3.0])


def test_divergence_names_the_step():
    with pytest.raises(DivergenceError) as info:
        simulate_euler(_scalar(1e300), InputSignal.zeros(1, 5, 1.0), [1.0], 5)
    assert info.value.step == 2
    assert "step 2" in str(info.value)


def test_preconditions():
    system = _scalar(-1.0)
    with pytest.raises(PreconditionError):
        simulate_euler(system, InputSignal.zeros(1, 3, 0.1), [1.0], 4)
    with pytest.raises(PreconditionError):
        simulate_euler(system, InputSignal.zeros(2, 3, 0.1), [1.0], 3)
    with pytest.raises(PreconditionError):
        simulate_euler(system, InputSignal.zeros(1, 3, 0.1), [1.0, 2.0], 3)
    with pytest.raises(PreconditionError):
        simulate_euler(system, InputSignal.zeros(1, 3, 0.1), [np.nan], 3)


def test_system_validation():
    with pytest.raises(ValueError):
        LinearOdeSystem(n=2, A=np.zeros((2, 2)), B=[[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        LinearOdeSystem(n=2, A=np.zeros((2, 2)), beta_diag=[1, 0.5])
    with pytest.raises(ValueError):
        LinearOdeSystem(n=1, A=[[np.inf]])


def test_trajectory_distance():
    a = Trajectory(tau=1.0, states=[[0.0, 0.0]])
    b = Trajectory(tau=1.0, states=[[3.0, 4.0]])
    assert trajectory_distance(a, a, [1]) == 0.0
    assert trajectory_distance(a, b, [1]) == pytest.approx(np.sqrt(12.5))
    assert trajectory_distance(a, b, [1]) == pytest.approx(3.5355, abs=1e-4)


def test_distance_ignores_hidden_channels():
    a = Trajectory(tau=1.0, states=[[1.0, 2.0], [0.0, 0.0]])
    b = Trajectory(tau=1.0, states=[[1.0, 2.0], [5.0, -5.0]])
    assert trajectory_distance(a, b, np.diag([1.0, 0.0])) == 0.0
    assert trajectory_distance(a, b, [1.0, 1.0]) > 0.0


def test_distance_rejects_mismatched_trajectories():
    a = Trajectory(tau=1.0, states=[[0.0, 0.0]])
    with pytest.raises(PreconditionError):
        trajectory_distance(a, Trajectory(tau=1.0, states=[[0.0, 0.0, 0.0]]), [1])
    with pytest.raises(PreconditionError):
        trajectory_distance(a, Trajectory(tau=0.5, states=[[0.0, 0.0]]), [1])
    with pytest.raises(PreconditionError):
        trajectory_distance(a, a, [0])


def test_euler_converges_to_rk4_at_first_order():
    system = LinearOdeSystem(n=2, A=[[-1.0, 0.2], [0.0, -0.5]], B_diag=[1.0, 0.0])
    rng = np.random.default_rng(3)
    coarse = InputSignal(tau=0.05, channels=np.vstack([rng.uniform(0, 1, 200), np.zeros(200)]))
    errors = []
    for factor in (1, 2):
        u = coarse.resample(factor)
        steps = 200 * factor
        euler = simulate_euler(system, u, [1.0, 1.0], steps)
        rk4 = simulate_rk4(system, u, [1.0, 1.0], steps)
        errors.append(relative_error(euler, rk4, [1, 1]))
    assert errors[0] < coarse.tau
    assert errors[1] < 0.6 * errors[0]


@pytest.mark.parametrize("psi", [0.005, 0.02])
def test_one_euler_step_at_the_step_bound_stays_within_psi(psi):
    from src.tools.dih_rnn import step_bound

    system = LinearOdeSystem(n=2, A=np.diag([-1.0, -4.0]))
    tau = step_bound(system, psi)
    assert tau == pytest.approx(np.sqrt(2 * psi) / 4.0)
    oracle = simulate_rk4(system, InputSignal.zeros(2, 50, tau), [1.0, 1.0], 50).states
    for k in range(50):
        x = oracle[:, k]
        euler = x + tau * system.A @ x
        assert np.linalg.norm(euler - oracle[:, k + 1]) / np.linalg.norm(x) < psi


def test_linearity_with_zero_inputs():
    system = LinearOdeSystem(n=2, A=[[-0.3, 1.0], [-1.0, -0.3]])
    u = InputSignal.zeros(2, 40, 0.1)
    base = simulate_rk4(system, u, [1.0, -0.5], 40).states
    scaled = simulate_rk4(system, u, [3.0, -1.5], 40).states
    np.testing.assert_allclose(scaled, 3.0 * base, atol=1e-9)


def test_time_invariance():
    system = LinearOdeSystem(n=1, A=[[-0.4]], B_diag=[1.0])
    u = InputSignal(tau=0.1, channels=[[1.0, 0.5, 0.0, 2.0, 0.0, 0.0]])
    original = simulate_euler(system, u, [0.0], 6).states
    delayed = simulate_euler(system, u.shifted(3), [0.0], 9).states
    np.testing.assert_allclose(delayed[:, 3:], original, atol=1e-12)
    assert np.all(delayed[:, :4] == 0.0)


def _bmm_inputs(params: BmmParams, steps: int, tau: float) -> InputSignal:
    t = np.arange(steps) * tau
    channels = np.zeros((3, steps))
    channels[0, 0] = 7.5 / tau
    channels[2] = 20.0 * 1000.0 * params.meal_rate * np.exp(-params.meal_rate * t)
    return InputSignal(tau=tau, channels=channels)


def test_bmm_euler_stays_close_to_a_fine_rk4_oracle():
    params = BmmParams()
    system = bmm_system(params)
    u = _bmm_inputs(params, 240, 1.0)
    euler = simulate_euler(system, u, np.zeros(3), 240)
    oracle = simulate_rk4(system, u.resample(100), np.zeros(3), 24000)
    coarse = Trajectory(tau=1.0, states=oracle.states[:, ::100])
    # tau = 1 min is above the step bound (0.71 min at psi = 0.005), hence the loose tolerance
    assert relative_error(euler, coarse, system.beta) < 0.1


def test_bmm_glucose_returns_toward_basal():
    params = BmmParams()
    system = bmm_system(params)
    traj = simulate(system, _bmm_inputs(params, 400, 1.0), np.zeros(3), 400, integrator="rk4")
    glucose = traj.states[2]
    assert np.abs(glucose[-1]) < 0.01 * np.max(np.abs(glucose))
    # meal absorption dominates the tail, so the excursion decays from above
    assert np.all(glucose[300:] > 0.0)
    assert np.all(np.diff(glucose[300:]) < 0.0)
    assert np.min(glucose) + params.basal_glucose > 70.0


def test_equilibrium_and_stability():
    bmm = bmm_system()
    np.testing.assert_allclose(bmm.derivative(np.zeros(3), np.zeros(3)), 0.0)
    assert is_stable(bmm)
    system = LinearOdeSystem(n=1, A=[[-2.0]], affine_offset=[4.0])
    np.testing.assert_allclose(equilibrium(system), [2.0])
    assert not is_stable(LinearOdeSystem(n=1, A=[[0.1]]))
