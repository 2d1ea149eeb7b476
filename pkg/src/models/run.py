from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from src import __version__
from src.models.coefficients import MiningConfig
from src.models.conformal import CenterPolicy
from src.models.formula import StlFormula
from src.models.scenario import Integrator, PlantKind
from src.models.system import SystemTemplate


class PipelineConfig(BaseModel):
    """Mining plus calibration settings for one case study."""

    mining: MiningConfig = Field(default_factory=MiningConfig)
    miscoverage: float = Field(0.1, gt=0, lt=1)
    residue_offset: float = Field(0.0, description="Constant subtracted from every deviation residue")
    center_policy: CenterPolicy = CenterPolicy.MEDIAN
    train_fraction: float = Field(0.5, gt=0, lt=1, description="Share of error-free units used for the reference fit")
    split_seed: Optional[int] = Field(None, description="Seed of the train/test split; the run seed when None")


class RunStatus(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class RunManifest(BaseModel):
    """Record of one CLI invocation, written next to its primary output."""

    command: str
    config_paths: List[str] = Field(default_factory=list)
    input_paths: List[str] = Field(default_factory=list)
    seed: int = 0
    tool_version: str = __version__
    outputs: Dict[str, str] = Field(default_factory=dict, description="Output path -> sha256")
    current_stage: str = "initialization"
    status: RunStatus = RunStatus.RUNNING
    metadata: Dict[str, Any] = Field(default_factory=dict)

    errors: List[Dict[str, Any]] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    def add_error(self, stage: str, error: str, **kwargs):
        """Add an error to the error log."""
        self.errors.append({"stage": stage, "error": error, **kwargs})

    def add_warning(self, warning: str):
        self.warnings.append(warning)

    def add_output(self, path: str, digest: str):
        self.outputs[path] = digest


class SurrogateStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class SurrogateEstimate(BaseModel):
    """Monte-Carlo estimate of P(|rho(phi, omega_true) - rho(phi, omega_mined)| <= delta)."""

    samples: int
    successes: int
    rate: float
    lower_bound: float = Field(description="One-sided Clopper-Pearson lower bound on the rate")
    confidence: float
    delta: float
    epsilon: float
    status: SurrogateStatus
    mining_failures: int = 0

    @property
    def passed(self) -> bool:
        return self.status == SurrogateStatus.PASS


class BaselineSettings(BaseModel):
    """Output-conformance baseline of one case study."""

    safety: StlFormula = Field(description="Safety formula over per-sample state frames ('state:<name>' atoms)")
    window_length: int = Field(60, ge=1, description="Steps per scored window")
    miscoverage: float = Field(0.1, gt=0, lt=1)
    center_policy: CenterPolicy = CenterPolicy.MEDIAN
    output_offsets: Dict[str, float] = Field(default_factory=dict, description="Added to states before scoring")
    calibration_family: Optional[str] = Field(None, description="Scenario family whose traces calibrate the range")


class CaseConfig(BaseModel):
    """Everything the pipeline needs to know about one case study."""

    name: str
    plant: PlantKind
    params: Dict[str, Any] = Field(default_factory=dict)
    template: Optional[SystemTemplate] = Field(None, description="Mining template; the plant's own when None")
    pinned: List[str] = Field(
        default_factory=list, description="Coefficient labels held at their template values during mining"
    )
    integrator: Integrator = Field(Integrator.RK4, description="Integrator of the baseline predictor")
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    baseline: Optional[BaselineSettings] = None


class FamilyRequest(BaseModel):
    """A named scenario family to simulate instead of a single scenario."""

    family: str
    seed: int = 0
