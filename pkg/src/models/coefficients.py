import hashlib
import json
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import BoolArray, FloatArray
from src.models.system import LinearOdeSystem
from src.utils.errors import StructureMismatchError


class CoefficientKind(str, Enum):
    A = "a"
    B = "b"
    OFFSET = "c"


class InitPolicy(str, Enum):
    UNIFORM = "uniform"
    TEMPLATE = "template"
    REGRESSION = "regression"


class OptimizerKind(str, Enum):
    GD = "gd"
    LBFGS = "lbfgs"


class RnnStructure(BaseModel):
    """Recurrent topology induced from a system template.

    One node per state. Edge (j, i) in recurrent_edges means x_j feeds node i
    through a learnable a_ij; (i, i) in input_edges means u_i feeds node i.
    Non-learnable entries keep the template's fixed value (normally zero).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int = Field(ge=1)
    state_names: List[str]
    input_names: List[str]
    a_mask: BoolArray
    b_mask: BoolArray
    offset_mask: BoolArray
    beta_diag: FloatArray = Field(description="Observability diagonal used by the loss")
    fixed_A: FloatArray = Field(description="Values for non-learnable A entries")
    fixed_b: FloatArray = Field(description="Values for non-learnable diag(B) entries")
    fixed_offset: FloatArray = Field(description="Values for non-learnable offsets")
    template_A: FloatArray = Field(description="Template A, used by the template init policy")
    template_b: FloatArray
    template_offset: FloatArray
    labels: List[str] = Field(description="One label per learnable coefficient, canonical order")
    recurrent_edges: List[Tuple[int, int]] = Field(default_factory=list)
    input_edges: List[Tuple[int, int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "RnnStructure":
        if self.a_mask.shape != (self.n, self.n):
            raise ValueError("a_mask must be n x n")
        for j, i in self.recurrent_edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"recurrent edge ({j}, {i}) references an invalid node")
        for i in range(self.n):
            if self.a_mask[i, i] and (i, i) not in self.recurrent_edges:
                raise ValueError(f"node {i} has a learnable a_ii but no self-edge")
        if len(self.labels) != self.size:
            raise ValueError(f"expected {self.size} labels, got {len(self.labels)}")
        return self

    @property
    def n_a(self) -> int:
        return int(self.a_mask.sum())

    @property
    def n_b(self) -> int:
        return int(self.b_mask.sum())

    @property
    def n_offset(self) -> int:
        return int(self.offset_mask.sum())

    @property
    def size(self) -> int:
        return self.n_a + self.n_b + self.n_offset

    @property
    def observable(self) -> np.ndarray:
        return self.beta_diag == 1.0

    @property
    def positions(self) -> List[Tuple[CoefficientKind, int, int]]:
        """(kind, row, col) of every learnable coefficient in canonical order."""
        out = [(CoefficientKind.A, int(i), int(j)) for i, j in zip(*np.nonzero(self.a_mask))]
        out += [(CoefficientKind.B, int(i), int(i)) for i in np.flatnonzero(self.b_mask)]
        out += [(CoefficientKind.OFFSET, int(i), int(i)) for i in np.flatnonzero(self.offset_mask)]
        return out

    @cached_property
    def structure_hash(self) -> str:
        payload = {
            "n": self.n,
            "a": self.a_mask.astype(int).tolist(),
            "b": self.b_mask.astype(int).tolist(),
            "c": self.offset_mask.astype(int).tolist(),
            "labels": self.labels,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def split(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full (A, b, offset) with the learnable entries set from values."""
        A = np.array(self.fixed_A, dtype=float)
        b = np.array(self.fixed_b, dtype=float)
        c = np.array(self.fixed_offset, dtype=float)
        A[self.a_mask] = values[:self.n_a]
        b[self.b_mask] = values[self.n_a:self.n_a + self.n_b]
        c[self.offset_mask] = values[self.n_a + self.n_b:]
        return A, b, c

    def pack(self, A: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Learnable entries of (A, b, offset) as one vector."""
        return np.concatenate([A[self.a_mask], b[self.b_mask], c[self.offset_mask]])

    def template_values(self) -> np.ndarray:
        return self.pack(self.template_A, self.template_b, self.template_offset)

    def system(self, omega: "CoefficientVector") -> LinearOdeSystem:
        self.check(omega)
        A, b, c = self.split(omega.values)
        return LinearOdeSystem(
            n=self.n,
            A=A,
            B_diag=b,
            beta_diag=self.beta_diag,
            affine_offset=c,
            state_names=self.state_names,
            input_names=self.input_names,
        )

    def vector(self, values: Any) -> "CoefficientVector":
        return CoefficientVector(structure_hash=self.structure_hash, labels=self.labels, values=values)

    def check(self, omega: "CoefficientVector") -> None:
        if omega.structure_hash != self.structure_hash or len(omega.values) != self.size:
            raise StructureMismatchError(
                f"coefficient vector {omega.structure_hash} does not match structure {self.structure_hash}"
            )


class CoefficientVector(BaseModel):
    """Learnable coefficients in canonical order: A row-major over its mask, diag(B), offsets."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    structure_hash: str
    labels: List[str]
    values: FloatArray

    @model_validator(mode="after")
    def _check(self) -> "CoefficientVector":
        if self.values.ndim != 1 or len(self.values) != len(self.labels):
            raise ValueError("values must be a vector with one entry per label")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("coefficient vector has non-finite entries")
        return self

    def named(self) -> Dict[str, float]:
        return {label: float(v) for label, v in zip(self.labels, self.values)}

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])

    def same_structure(self, other: "CoefficientVector") -> bool:
        return self.structure_hash == other.structure_hash and len(self.values) == len(other.values)

    @classmethod
    def from_named(cls, structure: RnnStructure, named: Dict[str, float]) -> "CoefficientVector":
        missing = [label for label in structure.labels if label not in named]
        if missing:
            raise StructureMismatchError(f"coefficient values missing for {missing}")
        return structure.vector([named[label] for label in structure.labels])


class MiningConfig(BaseModel):
    """Settings for one mining call (and for every window of a continuous run)."""

    model_config = ConfigDict(frozen=True)

    tau: Optional[float] = Field(None, gt=0, description="Expected sample period; the trace's own period when None")
    psi: float = Field(0.005, gt=0, description="Relative trace-replication error factor")
    xi: float = Field(0.05, gt=0, description="Relative coefficient error bound")
    upsilon: float = Field(0.01, gt=0, description="Distance bound for a successful fit")
    learning_rate: float = Field(0.05, gt=0, description="Step size in scaled coordinates (gd)")
    max_epochs: int = Field(2000, ge=1)
    convergence_tol: float = Field(1e-10, gt=0, description="Stop when the loss changes less than this")
    init_scale: float = Field(0.1, gt=0)
    seed: int = 0
    init_policy: InitPolicy = InitPolicy.UNIFORM
    optimizer: OptimizerKind = OptimizerKind.GD
    plateau_patience: int = Field(50, ge=1, description="Epochs without improvement before halving the rate")
    loss_weight: float = Field(1.0, gt=0, description="Scalar weight w of the loss")
    window_length: int = Field(60, ge=1, description="Steps per window when a trace has no natural segments")
    window_stride: int = Field(60, ge=1)
    warm_start: bool = True
    carry_hidden_state: bool = True
    override_step_bound: bool = Field(False, description="Proceed (with a warning) when tau exceeds the step bound")


class FitReport(BaseModel):
    """Outcome of one mining call."""

    loss: float = Field(description="Final relative MSE over observable channels")
    epochs: int
    distance: float = Field(description="Observable-channel RMSE between fit and data")
    converged: bool
    optimizer: OptimizerKind
    step_bound: float
    final_state: List[float] = Field(default_factory=list, description="Fitted state at the last sample")
    warnings: List[str] = Field(default_factory=list)


class CoefficientWindow(BaseModel):
    """One entry of a coefficient sequence."""

    model_config = ConfigDict(frozen=True)

    index: int
    start: int = Field(description="First sample index in the trace")
    length: int = Field(description="Steps covered by the window")
    t0: float
    omega: CoefficientVector
    loss: float
    distance: float


class CoefficientSequence(BaseModel):
    """Ordered coefficient vectors mined from one trace."""

    model_config = ConfigDict(frozen=True)

    structure_hash: str
    windows: List[CoefficientWindow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "CoefficientSequence":
        for window in self.windows:
            if window.omega.structure_hash != self.structure_hash:
                raise ValueError(f"window {window.index} uses a different structure")
        return self

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def omegas(self) -> List[CoefficientVector]:
        return [w.omega for w in self.windows]

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "structure_hash": self.structure_hash,
            "windows": [
                {
                    "start": w.start,
                    "len": w.length,
                    "t0": w.t0,
                    "omega": w.omega.named(),
                    "loss": w.loss,
                    "distance": w.distance,
                }
                for w in self.windows
            ],
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any], structure: RnnStructure) -> "CoefficientSequence":
        if data.get("structure_hash") != structure.structure_hash:
            raise StructureMismatchError(
                f"sequence was mined with structure {data.get('structure_hash')}, not {structure.structure_hash}"
            )
        windows = [
            CoefficientWindow(
                index=i,
                start=w["start"],
                length=w["len"],
                t0=w.get("t0", 0.0),
                omega=CoefficientVector.from_named(structure, w["omega"]),
                loss=w["loss"],
                distance=w["distance"],
            )
            for i, w in enumerate(data.get("windows", []))
        ]
        return cls(structure_hash=structure.structure_hash, windows=windows)
