"""Closed-loop scenario engine and the scenario families of the three case studies."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.models.scenario import (
    AoAError,
    BmmParams,
    BrakeParams,
    ControllerSpec,
    ControllerType,
    Dose,
    InsulinBlockade,
    Integrator,
    Meal,
    PitchParams,
    PlantKind,
    QOverflow,
    ScenarioConfig,
    ScenarioRun,
    SetpointChange,
)
from src.models.system import InputSignal, Trace, TraceSegment, Trajectory
from src.tools.controllers import build_controller
from src.tools.fault_injector import FaultInjector
from src.tools.ode_core import STEPPERS, equilibrium
from src.tools.plants import plant_system
from src.utils.errors import ControllerDivergenceError

logger = logging.getLogger(__name__)

DEFAULT_INTEGRATOR = {PlantKind.BMM: Integrator.EULER, PlantKind.PITCH: Integrator.RK4, PlantKind.BRAKE: Integrator.RK4}
DEFAULT_NOISE = {PlantKind.BMM: 0.02, PlantKind.PITCH: 1e-4, PlantKind.BRAKE: 1e-4}

# |x| beyond this counts as a blown-up loop
DIVERGENCE_LIMIT = 1e12

# (blockade percent, release minute) of the AID fault table; each pair runs normal and phantom
AID_BLOCKADES: List[Tuple[float, float]] = [(20, 150), (40, 120), (80, 90), (70, 70), (60, 50)]

# (setpoint rad, setpoint change s, AoA error rad, error onset s) of the pitch fault table
PITCH_AOA_ROWS: List[Tuple[float, float, float, float]] = [
    (0.2, 0, 0.6, 5),
    (0.5, 5, 0.2, 7),
    (0.4, 2, 0.4, 10),
    (0.8, 5, 0.4, 5),
    (0.1, 5, 0.6, 5),
    (0.1, 7, 0.6, 5),
    (0.1, 9, 0.7, 2),
    (0.4, 9, 0.9, 2),
    (0.1, 10, 0.6, 10),
    (0.3, 1, 0.3, 10),
]


def _initial_state(config: ScenarioConfig, plant) -> np.ndarray:
    if config.plant != PlantKind.BRAKE:
        return np.zeros(plant.n)
    params: BrakeParams = config.typed_params()
    rest = equilibrium(plant)
    s0 = rest[2] if params.s0 is None else params.s0
    return np.array([params.a0, params.v0, s0], dtype=float)


def _augment(config: ScenarioConfig, params, delivered: np.ndarray, sensed: np.ndarray) -> np.ndarray:
    """Plant-side augmentation downstream of the logged command (pitch only)."""
    if config.plant != PlantKind.PITCH:
        return delivered
    out = np.array(delivered, dtype=float)
    out[0] -= params.k_aug * sensed[0]
    out[1] -= params.k_aug * sensed[0]
    return out


def _segments(
    commands: np.ndarray, recorded: np.ndarray, tau: float, segment_length: Optional[int], theta
) -> List[TraceSegment]:
    steps = commands.shape[1]
    length = segment_length or steps
    segments = []
    for start in range(0, steps, length):
        stop = min(start + length, steps)
        segments.append(
            TraceSegment(
                inputs=InputSignal(tau=tau, channels=commands[:, start:stop], theta=theta),
                trajectory=Trajectory(tau=tau, t0=start * tau, states=recorded[:, start:stop + 1]),
            )
        )
    return segments


def simulate_scenario(config: ScenarioConfig) -> ScenarioRun:
    """Run the closed loop and keep everything, including the plant-side truth."""
    params = config.typed_params()
    plant = plant_system(config.plant, params)
    integrator = config.integrator or DEFAULT_INTEGRATOR[config.plant]
    stepper = STEPPERS[Integrator(integrator)]
    noise_std = DEFAULT_NOISE[config.plant] if config.noise_std is None else config.noise_std
    tau = config.tau
    steps = config.steps

    injector = FaultInjector(config.fault, tau)
    meal_rate = params.meal_rate if isinstance(params, BmmParams) else 0.03
    controller = build_controller(config.controller, plant, tau, injector, meal_rate=meal_rate)
    rng = np.random.default_rng(config.seed)
    observable = plant.observable.astype(float)

    logger.info(
        f"Simulating {config.name}: {config.plant.value}, {steps} steps, fault={injector.kind}"
    )
    x = _initial_state(config, plant)
    true_states = np.empty((plant.n, steps + 1))
    recorded = np.empty((plant.n, steps + 1))
    commands = np.empty((plant.n, steps))
    delivered = np.empty((plant.n, steps))

    def measure(state: np.ndarray) -> np.ndarray:
        return state + noise_std * rng.standard_normal(plant.n) * observable

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t = k * tau
            measured = measure(x)
            true_states[:, k] = x
            recorded[:, k] = measured
            sensed = injector.sense(k, t, measured)
            command = controller.command(k, t, sensed)
            actuated = _augment(config, params, injector.actuate(k, t, command), sensed)
            commands[:, k] = command
            delivered[:, k] = actuated
            x = stepper(plant, x, actuated, tau)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
                logger.error(f"Closed loop of {config.name} diverged at step {k + 1}")
                raise ControllerDivergenceError(k + 1, f"Closed loop of {config.name} diverged at step {k + 1}")
    true_states[:, steps] = x
    recorded[:, steps] = measure(x)

    trace = Trace(segments=_segments(commands, recorded, tau, config.segment_length, config.theta))
    return ScenarioRun(
        config=config,
        trace=trace,
        true_states=true_states,
        delivered=delivered,
        commands=commands,
        gains=controller.gains,
    )


def run_scenario(config: ScenarioConfig) -> Trace:
    """Closed-loop trace of logged commands and sensed states."""
    return simulate_scenario(config).trace


def stopping_distance(trace: Trace, state_index: int = 2) -> float:
    """Largest travel of the gap state past its initial value."""
    states = trace.flatten().trajectory.states[state_index]
    return float(np.max(states) - states[0])


# Scenario families

def aid_scenario(
    name: str,
    bolus_units: float = 7.5,
    meal_grams: float = 20.0,
    fault=None,
    seed: int = 0,
    horizon: float = 240.0,
    params: Optional[BmmParams] = None,
) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        plant=PlantKind.BMM,
        params=(params or BmmParams()).model_dump(),
        controller=ControllerSpec(
            type=ControllerType.BOLUS_SCHEDULE,
            doses=[Dose(t=0.0, units=bolus_units)],
            meals=[Meal(t=0.0, grams=meal_grams)],
        ),
        fault=fault,
        horizon=horizon,
        tau=1.0,
        seed=seed,
        theta=[bolus_units, meal_grams],
    )


def aid_clean_family(count: int = 12, seed: int = 0) -> List[ScenarioConfig]:
    """Error-free AID runs with meals drawn from 15-25 g."""
    rng = np.random.default_rng(seed)
    meals = rng.uniform(15.0, 25.0, size=count)
    return [
        aid_scenario(f"aid-clean-{i:02d}", meal_grams=round(float(g), 2), seed=seed + 1000 + i)
        for i, g in enumerate(meals)
    ]


def aid_fault_family(seed: int = 0) -> List[ScenarioConfig]:
    configs = []
    for phantom in (False, True):
        for percent, release in AID_BLOCKADES:
            tag = "phantom" if phantom else "blockade"
            fault = InsulinBlockade(percent=percent, release_min=release, phantom=phantom, seed=seed)
            configs.append(
                aid_scenario(f"aid-{tag}-{int(percent)}-{int(release)}", fault=fault, seed=seed + 2000 + len(configs))
            )
    return configs


def aid_violation_scenario(seed: int = 0) -> ScenarioConfig:
    """A blockade large enough that the late depot release drives glucose below 70 mg/dl."""
    fault = InsulinBlockade(percent=80, release_min=100, seed=seed)
    return aid_scenario("aid-forced-violation", bolus_units=30.0, fault=fault, seed=seed + 3000)


def pitch_scenario(
    name: str,
    setpoint: float,
    change_s: float,
    fault=None,
    seed: int = 0,
    horizon: float = 20.0,
    gains: Tuple[float, float, float] = (2.0, 0.05, 0.5),
    params: Optional[PitchParams] = None,
) -> ScenarioConfig:
    kp, ki, kd = gains
    return ScenarioConfig(
        name=name,
        plant=PlantKind.PITCH,
        params=(params or PitchParams()).model_dump(),
        controller=ControllerSpec(
            type=ControllerType.PID,
            kp=kp,
            ki=ki,
            kd=kd,
            setpoints=[SetpointChange(t=change_s, value=setpoint)],
        ),
        fault=fault,
        horizon=horizon,
        tau=0.01,
        seed=seed,
        theta=[setpoint, change_s],
    )


def pitch_clean_family(count: int = 10, seed: int = 0) -> List[ScenarioConfig]:
    rng = np.random.default_rng(seed)
    configs = []
    for i in range(count):
        setpoint = round(float(rng.uniform(0.1, 0.8)), 3)
        change = round(float(rng.uniform(0.0, 10.0)), 2)
        configs.append(pitch_scenario(f"pitch-clean-{i:02d}", setpoint, change, seed=seed + 1000 + i))
    return configs


def pitch_fault_family(seed: int = 0, noise_rate: float = 0.2) -> List[ScenarioConfig]:
    configs = []
    for i, (setpoint, change, error, onset) in enumerate(PITCH_AOA_ROWS):
        fault = AoAError(magnitude_rad=error, onset_s=onset, noise_rate=noise_rate, seed=seed + i)
        configs.append(
            pitch_scenario(
                f"pitch-aoa-{setpoint:g}-{change:g}-{error:g}-{onset:g}",
                setpoint,
                change,
                fault=fault,
                seed=seed + 2000 + i,
            )
        )
    return configs


def brake_scenario(
    name: str,
    v0: float,
    fault=None,
    seed: int = 0,
    horizon: float = 6.0,
    Q: Sequence[float] = (10000.0, 1.0, 1.0),
    R: float = 1.0,
) -> ScenarioConfig:
    params = BrakeParams(v0=v0)
    return ScenarioConfig(
        name=name,
        plant=PlantKind.BRAKE,
        params=params.model_dump(),
        controller=ControllerSpec(type=ControllerType.LQR, Q=list(Q), R=R),
        fault=fault,
        horizon=horizon,
        tau=0.1,
        seed=seed,
        theta=[v0],
    )


def _brake_speeds(count: int, seed: int) -> List[float]:
    rng = np.random.default_rng(seed)
    return [round(float(v), 3) for v in rng.uniform(3.0, 5.0, size=count)]


def brake_clean_family(count: int = 11, seed: int = 0) -> List[ScenarioConfig]:
    return [
        brake_scenario(f"brake-clean-{i:02d}", v0, seed=seed + 1000 + i)
        for i, v0 in enumerate(_brake_speeds(count, seed))
    ]


def brake_fault_family(count: int = 11, seed: int = 0) -> List[ScenarioConfig]:
    """Overflow runs from the same initial speeds as the clean family."""
    return [
        brake_scenario(f"brake-overflow-{i:02d}", v0, fault=QOverflow(seed=seed), seed=seed + 2000 + i)
        for i, v0 in enumerate(_brake_speeds(count, seed))
    ]


# Operating envelopes: wider error-free input ranges for the output baseline

def aid_envelope_family(count: int = 16, seed: int = 0) -> List[ScenarioConfig]:
    rng = np.random.default_rng(seed + 1)
    boluses = rng.uniform(0.0, 15.0, size=count)
    meals = rng.uniform(0.0, 60.0, size=count)
    return [
        aid_scenario(f"aid-envelope-{i:02d}", bolus_units=round(float(b), 2), meal_grams=round(float(g), 2), seed=seed + 4000 + i)
        for i, (b, g) in enumerate(zip(boluses, meals))
    ]


def pitch_envelope_family(count: int = 12, seed: int = 0) -> List[ScenarioConfig]:
    rng = np.random.default_rng(seed + 1)
    return [
        pitch_scenario(
            f"pitch-envelope-{i:02d}",
            round(float(rng.uniform(0.0, 1.2)), 3),
            round(float(rng.uniform(0.0, 10.0)), 2),
            seed=seed + 4000 + i,
        )
        for i in range(count)
    ]


def brake_envelope_family(count: int = 12, seed: int = 0) -> List[ScenarioConfig]:
    rng = np.random.default_rng(seed + 1)
    return [
        brake_scenario(f"brake-envelope-{i:02d}", round(float(v0), 3), seed=seed + 4000 + i)
        for i, v0 in enumerate(rng.uniform(2.5, 6.0, size=count))
    ]


FAMILIES = {
    "aid-clean": aid_clean_family,
    "aid-fault": aid_fault_family,
    "pitch-clean": pitch_clean_family,
    "pitch-fault": pitch_fault_family,
    "brake-clean": brake_clean_family,
    "brake-fault": brake_fault_family,
    "aid-envelope": aid_envelope_family,
    "pitch-envelope": pitch_envelope_family,
    "brake-envelope": brake_envelope_family,
}


def scenario_family(name: str, seed: int = 0) -> List[ScenarioConfig]:
    if name not in FAMILIES:
        raise KeyError(f"unknown scenario family '{name}' (known: {', '.join(sorted(FAMILIES))})")
    return FAMILIES[name](seed=seed)
