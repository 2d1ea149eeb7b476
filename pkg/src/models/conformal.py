from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.models.coefficients import CoefficientVector, RnnStructure
from src.models.formula import StlFormula


class VerdictLabel(str, Enum):
    DETECTED = "D"
    NOT_DETECTED = "ND"


class CenterPolicy(str, Enum):
    ZERO = "zero"
    MEDIAN = "median"


class CalibrationProfile(BaseModel):
    """Reference coefficients plus the conformal range calibrated on error-free windows."""

    omega_e: CoefficientVector
    residues: List[float] = Field(description="Calibration residues, ascending")
    d: float = Field(ge=0, description="Confidence range")
    interval: Tuple[float, float]
    miscoverage: float = Field(gt=0, lt=1)
    residue_offset: float = 0.0
    center_policy: CenterPolicy = CenterPolicy.MEDIAN
    n_total: int = Field(0, ge=0, description="Error-free segments behind the rank rule")
    rank: int = Field(0, ge=0, description="1-based rank that picked d")

    @model_validator(mode="after")
    def _check(self) -> "CalibrationProfile":
        if list(self.residues) != sorted(self.residues):
            raise ValueError("residues must be sorted ascending")
        lo, hi = self.interval
        if lo > hi:
            raise ValueError(f"interval [{lo}, {hi}] is reversed")
        return self

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "omega_e": self.omega_e.named(),
            "structure_hash": self.omega_e.structure_hash,
            "residues": list(self.residues),
            "d": self.d,
            "interval": list(self.interval),
            "miscoverage": self.miscoverage,
            "residue_offset": self.residue_offset,
            "center_policy": self.center_policy.value,
            "n_total": self.n_total,
            "rank": self.rank,
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any], structure: RnnStructure) -> "CalibrationProfile":
        payload = dict(data)
        payload["omega_e"] = CoefficientVector.from_named(structure, data["omega_e"])
        payload.pop("structure_hash", None)
        return cls.model_validate(payload)


class Verdict(BaseModel):
    label: VerdictLabel
    residue: float
    interval: Tuple[float, float]
    window: int
    t0: Optional[float] = Field(None, description="Start time of the window")

    @property
    def detected(self) -> bool:
        return self.label == VerdictLabel.DETECTED


class OutputConformalProfile(BaseModel):
    """Output-robustness range of a safety formula, calibrated on error-free traces."""

    safety: StlFormula
    scores: List[float] = Field(description="Calibration robustness values, ascending")
    d: float = Field(ge=0)
    interval: Tuple[float, float]
    miscoverage: float = Field(gt=0, lt=1)
    center_policy: CenterPolicy = CenterPolicy.MEDIAN
    window_length: int = Field(60, ge=1)
    predictor: Dict[str, Any] = Field(
        default_factory=dict, description="Nominal system used as the reference predictor (system JSON)"
    )
    output_offsets: Dict[str, float] = Field(
        default_factory=dict, description="Added to a state before the safety formula sees it (e.g. basal glucose)"
    )
    n_total: int = Field(0, ge=0)
    rank: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "OutputConformalProfile":
        if self.interval[0] > self.interval[1]:
            raise ValueError("interval is reversed")
        return self

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]


class BaselineVerdict(BaseModel):
    label: VerdictLabel
    robustness: float = Field(description="Robustness of the first out-of-range window, else the smallest window robustness")
    interval: Tuple[float, float]
    window: Optional[int] = Field(None, description="First window whose robustness left the range")
    detect_time: Optional[float] = None

    @property
    def detected(self) -> bool:
        return self.label == VerdictLabel.DETECTED
