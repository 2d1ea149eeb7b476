from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import FloatArray
from src.models.system import Trace


class PlantKind(str, Enum):
    BMM = "bmm"
    PITCH = "pitch"
    BRAKE = "brake"


class Integrator(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


class BmmParams(BaseModel):
    """Linearized Bergman minimal model. Gb is the signed coefficient of i_s in dG/dt."""

    p1: float = Field(0.098, description="1/min")
    p2: float = Field(0.035, description="1/min")
    p3: float = Field(0.028, description="1/min")
    p4: float = Field(0.05, description="Insulin appearance gain")
    n: float = Field(0.1406, description="Insulin clearance, 1/min")
    VoI: float = Field(199.6, gt=0, description="Glucose distribution volume, dl")
    Gb: float = Field(-80.0, description="Glucose sensitivity to remote insulin, mg/dl")
    i_b: float = Field(0.0, description="Basal insulin offset")
    basal_glucose: float = Field(120.0, description="mg/dl, added back for absolute-glucose views")
    meal_rate: float = Field(0.03, gt=0, description="Meal absorption rate k, 1/min")


class PitchParams(BaseModel):
    """Short-period pitch dynamics; every field is the signed entry of A or B."""

    c_aa: float = Field(-0.28, description="d(alpha)/d(alpha), 1/s")
    c_aq: float = Field(55.0, description="d(alpha)/d(q)")
    c_ad: float = Field(0.25, description="d(alpha)/d(delta), 1/s")
    c_qa: float = Field(-0.0127, description="d(q)/d(alpha), 1/s")
    c_qq: float = Field(-0.43, description="d(q)/d(q), 1/s")
    c_qd: float = Field(0.022, description="d(q)/d(delta), 1/s^2")
    c_tq: float = Field(62.0, description="d(theta)/d(q), 1/s")
    k_aug: float = Field(0.2, ge=0, description="AoA-fed elevator augmentation gain, downstream of the logged command")


class BrakeParams(BaseModel):
    """Braking kinematics in plant order (a, v, s) plus the jerk input on a."""

    k_as: float = Field(-0.01, description="d(a)/d(s)")
    c_a: float = Field(0.737, description="Constant drift of a")
    k_av: float = Field(-0.3, description="d(a)/d(v)")
    k_aa: float = Field(-0.5, description="d(a)/d(a)")
    k_va: float = Field(0.1, description="d(v)/d(a)")
    c_s: float = Field(-2.5, description="Constant drift of s")
    input_gain: float = Field(1.0, description="Jerk command gain on a")
    s0: Optional[float] = Field(None, description="Initial gap; the controller setpoint when None")
    v0: float = Field(4.0, description="Initial speed")
    a0: float = 0.0


class InsulinBlockade(BaseModel):
    kind: Literal["insulin_blockade"] = "insulin_blockade"
    percent: float = Field(description="Share of each dose withheld, 0 or within [20, 80]")
    release_min: float = Field(description="Depot release time in minutes, within [50, 150]")
    phantom: bool = Field(False, description="Depot is never released")
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self) -> "InsulinBlockade":
        if self.percent != 0 and not 20 <= self.percent <= 80:
            raise ValueError(f"percent must be 0 or within [20, 80], got {self.percent}")
        if not 50 <= self.release_min <= 150:
            raise ValueError(f"release_min must be within [50, 150], got {self.release_min}")
        return self


class AoAError(BaseModel):
    kind: Literal["aoa_error"] = "aoa_error"
    magnitude_rad: float = Field(description="Additive AoA bias from onset")
    onset_s: float = Field(ge=0)
    noise_rate: float = Field(0.0, description="Multiplicative noise rate, 0 or within [0.20, 0.25]")
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self) -> "AoAError":
        if self.noise_rate != 0 and not 0.20 <= self.noise_rate <= 0.25:
            raise ValueError(f"noise_rate must be 0 or within [0.20, 0.25], got {self.noise_rate}")
        return self


class QOverflow(BaseModel):
    kind: Literal["q_overflow"] = "q_overflow"
    declared_width: int = Field(8, ge=2, le=32, description="Bit width of the signed integer Q(1,1) is stored in")
    seed: int = 0


PARAMS_MODELS = {PlantKind.BMM: BmmParams, PlantKind.PITCH: PitchParams, PlantKind.BRAKE: BrakeParams}


def typed_plant_params(kind: PlantKind, params: Dict[str, Any]) -> Union[BmmParams, PitchParams, BrakeParams]:
    return PARAMS_MODELS[PlantKind(kind)].model_validate(params or {})


FaultSpec = Annotated[Union[InsulinBlockade, AoAError, QOverflow], Field(discriminator="kind")]


class Dose(BaseModel):
    t: float = Field(ge=0, description="Minutes from start")
    units: float = Field(ge=0, description="Insulin units")


class Meal(BaseModel):
    t: float = Field(ge=0)
    grams: float = Field(ge=0)


class SetpointChange(BaseModel):
    t: float = Field(ge=0, description="Seconds from start")
    value: float = Field(description="Pitch setpoint, rad")


class ControllerType(str, Enum):
    BOLUS_SCHEDULE = "bolus_schedule"
    PID = "pid"
    LQR = "lqr"


class ControllerSpec(BaseModel):
    """Closed-loop controller as data; gains live in configs."""

    type: ControllerType
    # bolus_schedule
    doses: List[Dose] = Field(default_factory=list)
    meals: List[Meal] = Field(default_factory=list)
    # pid
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    setpoints: List[SetpointChange] = Field(default_factory=list)
    # lqr, weights in controller order (s, v, a)
    Q: List[float] = Field(default_factory=lambda: [10000.0, 1.0, 1.0])
    R: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "ControllerSpec":
        if self.type == ControllerType.LQR:
            if len(self.Q) != 3 or any(q < 0 for q in self.Q):
                raise ValueError("Q must hold three non-negative weights")
        return self


class ScenarioConfig(BaseModel):
    """One closed-loop simulation: plant, controller, optional fault."""

    name: str = "scenario"
    plant: PlantKind
    params: Dict[str, Any] = Field(default_factory=dict)
    controller: ControllerSpec
    fault: Optional[FaultSpec] = None
    horizon: float = Field(gt=0, description="Simulated time, in the plant's time unit")
    tau: float = Field(gt=0, description="Sample period")
    seed: int = 0
    noise_std: Optional[float] = Field(None, ge=0, description="Sensor noise on observable channels; plant default when None")
    integrator: Optional[Integrator] = Field(None, description="Plant default when None")
    segment_length: Optional[int] = Field(None, ge=1, description="Split the trace into natural segments of this many steps")
    theta: Optional[List[float]] = Field(None, description="Input parameter recorded with the signal")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.tau))

    def typed_params(self) -> Union[BmmParams, PitchParams, BrakeParams]:
        return typed_plant_params(self.plant, self.params)


class ScenarioRun(BaseModel):
    """Everything a closed-loop run produced; only `trace` is what a monitor would see."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    config: ScenarioConfig
    trace: Trace
    true_states: FloatArray = Field(description="Noise-free plant states, n x (K+1)")
    delivered: FloatArray = Field(description="Inputs that reached the plant, n x K")
    commands: FloatArray = Field(description="Logged controller commands, n x K")
    gains: Dict[str, Any] = Field(default_factory=dict)
