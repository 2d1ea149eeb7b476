from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import BoolArray, FloatArray

_TIME_RTOL = 1e-9


class LinearOdeSystem(BaseModel):
    """dx/dt = A x + B u + affine_offset, y = beta x, with B and beta diagonal."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int = Field(ge=1, description="State dimension")
    A: FloatArray = Field(description="n x n coefficient matrix (1/time)")
    B: FloatArray = Field(description="n x n diagonal input-gain matrix")
    beta: FloatArray = Field(description="n x n diagonal 0/1 observability matrix")
    affine_offset: FloatArray = Field(description="Constant drift per state (units of dx/dt)")
    state_names: List[str] = Field(description="One label per state")
    input_names: List[str] = Field(description="One label per input channel; '' when unused")

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n = data.get("n")
        if n is None and "A" in data:
            n = int(round(np.sqrt(np.asarray(data["A"], dtype=float).size)))
            data["n"] = n
        if n is None:
            return data
        if "A" in data:
            data["A"] = np.asarray(data["A"], dtype=float).reshape(n, n)
        if "B" not in data:
            data["B"] = np.diag(np.asarray(data.pop("B_diag", np.zeros(n)), dtype=float))
        if "beta" not in data:
            data["beta"] = np.diag(np.asarray(data.pop("beta_diag", np.ones(n)), dtype=float))
        data.pop("B_diag", None)
        data.pop("beta_diag", None)
        data.setdefault("affine_offset", np.zeros(n))
        data.setdefault("state_names", [f"x{i}" for i in range(n)])
        data.setdefault("input_names", [f"u{i}" for i in range(n)])
        return data

    @model_validator(mode="after")
    def _check(self) -> "LinearOdeSystem":
        n = self.n
        for name, arr in (("A", self.A), ("B", self.B), ("beta", self.beta)):
            if arr.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {arr.shape}")
        if self.affine_offset.shape != (n,):
            raise ValueError(f"affine_offset must have length {n}")
        for name, arr in (("A", self.A), ("B", self.B), ("affine_offset", self.affine_offset)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        off_diag = ~np.eye(n, dtype=bool)
        if np.any(self.B[off_diag] != 0.0):
            raise ValueError("B must be diagonal")
        if np.any(self.beta[off_diag] != 0.0):
            raise ValueError("beta must be diagonal")
        if not np.all(np.isin(np.diag(self.beta), (0.0, 1.0))):
            raise ValueError("beta diagonal entries must be 0 or 1")
        if len(self.state_names) != n or len(self.input_names) != n:
            raise ValueError("state_names and input_names need one entry per state")
        return self

    @property
    def b_diag(self) -> np.ndarray:
        return np.diag(self.B)

    @property
    def observable(self) -> np.ndarray:
        """Boolean mask of sensed states."""
        return np.diag(self.beta) == 1.0

    def derivative(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b_diag * u + self.affine_offset

    def to_json_dict(self) -> Dict[str, Any]:
        """System JSON layout: row-major A, diagonal vectors for B and beta."""
        return {
            "n": self.n,
            "A": self.A.reshape(-1).tolist(),
            "B_diag": self.b_diag.tolist(),
            "beta_diag": np.diag(self.beta).tolist(),
            "affine_offset": self.affine_offset.tolist(),
            "state_names": list(self.state_names),
            "input_names": list(self.input_names),
        }


class SystemTemplate(BaseModel):
    """A system plus which entries are learnable; everything else is structurally zero."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    system: LinearOdeSystem
    a_learnable: BoolArray = Field(description="n x n mask over A")
    b_learnable: BoolArray = Field(description="Mask over diag(B)")
    offset_learnable: BoolArray = Field(description="Mask over affine_offset")
    labels: Dict[str, str] = Field(default_factory=dict, description="Default label -> display label")

    @model_validator(mode="before")
    @classmethod
    def _split_flat_json(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "system" in data:
            return data
        data = dict(data)
        masks = {key: data.pop(key) for key in ("a_learnable", "b_learnable", "offset_learnable", "labels") if key in data}
        system = LinearOdeSystem.model_validate(data)
        return {"system": system, **_default_masks(system), **masks}

    @model_validator(mode="after")
    def _check(self) -> "SystemTemplate":
        n = self.system.n
        if self.a_learnable.shape != (n, n):
            object.__setattr__(self, "a_learnable", _reshape_mask(self.a_learnable, (n, n)))
        if self.b_learnable.shape != (n,) or self.offset_learnable.shape != (n,):
            raise ValueError(f"b_learnable and offset_learnable must have length {n}")
        return self

    @classmethod
    def from_system(cls, system: LinearOdeSystem, **overrides: Any) -> "SystemTemplate":
        """Learnable wherever the system has a nonzero entry."""
        return cls(system=system, **{**_default_masks(system), **overrides})

    @property
    def n(self) -> int:
        return self.system.n

    def entry_labels(self) -> Dict[str, Tuple[str, int, int]]:
        """Display label -> (kind, row, column) for every nonzero or learnable template entry."""
        names = self.system.state_names
        out: Dict[str, Tuple[str, int, int]] = {}
        A, b, c = self.system.A, self.system.b_diag, self.system.affine_offset
        for i in range(self.n):
            for j in range(self.n):
                if self.a_learnable[i, j] or A[i, j] != 0.0:
                    out[self.labels.get(f"a[{names[i]},{names[j]}]", f"a[{names[i]},{names[j]}]")] = ("a", i, j)
            if self.b_learnable[i] or b[i] != 0.0:
                out[self.labels.get(f"b[{names[i]}]", f"b[{names[i]}]")] = ("b", i, i)
            if self.offset_learnable[i] or c[i] != 0.0:
                out[self.labels.get(f"c[{names[i]}]", f"c[{names[i]}]")] = ("c", i, i)
        return out

    def template_values(self) -> Dict[str, float]:
        """Display label -> template value, pinned entries included."""
        A, b, c = self.system.A, self.system.b_diag, self.system.affine_offset
        arrays = {"a": lambda i, j: A[i, j], "b": lambda i, j: b[i], "c": lambda i, j: c[i]}
        return {label: float(arrays[kind](i, j)) for label, (kind, i, j) in self.entry_labels().items()}

    def pin(self, labels: Sequence[str]) -> "SystemTemplate":
        """Copy with the named coefficients held at their template values."""
        if not labels:
            return self
        entries = self.entry_labels()
        unknown = [label for label in labels if label not in entries]
        if unknown:
            raise ValueError(f"cannot pin unknown coefficients {unknown}; template has {sorted(entries)}")
        masks = {
            "a": np.array(self.a_learnable, dtype=bool),
            "b": np.array(self.b_learnable, dtype=bool),
            "c": np.array(self.offset_learnable, dtype=bool),
        }
        for label in labels:
            kind, i, j = entries[label]
            if kind == "a":
                masks["a"][i, j] = False
            else:
                masks[kind][i] = False
        return SystemTemplate(
            system=self.system,
            a_learnable=masks["a"],
            b_learnable=masks["b"],
            offset_learnable=masks["c"],
            labels=dict(self.labels),
        )

    def to_json_dict(self) -> Dict[str, Any]:
        out = self.system.to_json_dict()
        out["a_learnable"] = self.a_learnable.astype(int).reshape(-1).tolist()
        out["b_learnable"] = self.b_learnable.astype(int).tolist()
        out["offset_learnable"] = self.offset_learnable.astype(int).tolist()
        if self.labels:
            out["labels"] = dict(self.labels)
        return out


def _default_masks(system: LinearOdeSystem) -> Dict[str, np.ndarray]:
    return {
        "a_learnable": system.A != 0.0,
        "b_learnable": system.b_diag != 0.0,
        "offset_learnable": system.affine_offset != 0.0,
    }


def _reshape_mask(mask: np.ndarray, shape: tuple) -> np.ndarray:
    if mask.size != shape[0] * shape[1]:
        raise ValueError(f"a_learnable must have {shape[0] * shape[1]} entries")
    out = mask.reshape(shape).copy()
    out.setflags(write=False)
    return out


class InputSignal(BaseModel):
    """Sampled inputs, one channel per state, held constant between samples."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tau: float = Field(gt=0, description="Sample period")
    channels: FloatArray = Field(description="n x K samples")
    theta: Optional[List[float]] = Field(None, description="Input parameter that generated the signal")

    @model_validator(mode="after")
    def _check(self) -> "InputSignal":
        if self.channels.ndim != 2:
            raise ValueError("channels must be a 2-D array (n x K)")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("channels contain non-finite samples")
        return self

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def window(self, start: int, length: int) -> "InputSignal":
        return InputSignal(tau=self.tau, channels=self.channels[:, start:start + length], theta=self.theta)

    def shifted(self, samples: int) -> "InputSignal":
        """Delay the signal by prepending zero samples."""
        pad = np.zeros((self.n_channels, samples))
        return InputSignal(tau=self.tau, channels=np.hstack([pad, self.channels]), theta=self.theta)

    def resample(self, factor: int) -> "InputSignal":
        """Zero-order-hold upsampling by an integer factor."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        return InputSignal(
            tau=self.tau / factor,
            channels=np.repeat(self.channels, factor, axis=1),
            theta=self.theta,
        )

    @classmethod
    def zeros(cls, n: int, steps: int, tau: float) -> "InputSignal":
        return cls(tau=tau, channels=np.zeros((n, steps)))


class Trajectory(BaseModel):
    """State samples x[0..K] at t0, t0 + tau, ..."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tau: float = Field(gt=0, description="Sample period")
    t0: float = Field(0.0, description="Time of the first sample")
    states: FloatArray = Field(description="n x (K+1) samples")

    @model_validator(mode="after")
    def _check(self) -> "Trajectory":
        if self.states.ndim != 2:
            raise ValueError("states must be a 2-D array (n x samples)")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite samples")
        return self

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        """Number of samples."""
        return self.states.shape[1]

    @property
    def steps(self) -> int:
        return self.length - 1

    @property
    def end_time(self) -> float:
        return self.t0 + self.steps * self.tau

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.length)

    def window(self, start: int, steps: int) -> "Trajectory":
        return Trajectory(
            tau=self.tau,
            t0=self.t0 + start * self.tau,
            states=self.states[:, start:start + steps + 1],
        )


class TraceSegment(BaseModel):
    """One (input, trajectory) pair; inputs[k] drives the step from x[k] to x[k+1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    inputs: InputSignal
    trajectory: Trajectory

    @model_validator(mode="after")
    def _check(self) -> "TraceSegment":
        if not np.isclose(self.inputs.tau, self.trajectory.tau, rtol=_TIME_RTOL, atol=0.0):
            raise ValueError("input and trajectory sample periods differ")
        if self.inputs.n_channels != self.trajectory.n:
            raise ValueError("input channel count must equal the state dimension")
        if self.inputs.length < self.trajectory.steps:
            raise ValueError("input signal is shorter than the trajectory")
        return self

    @property
    def steps(self) -> int:
        return self.trajectory.steps

    @property
    def tau(self) -> float:
        return self.trajectory.tau

    def window(self, start: int, steps: int) -> "TraceSegment":
        return TraceSegment(inputs=self.inputs.window(start, steps), trajectory=self.trajectory.window(start, steps))


class Trace(BaseModel):
    """Time-contiguous concatenation of segments."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    segments: List[TraceSegment] = Field(min_length=1)
    natural_segments: bool = Field(
        True, description="False when the segmentation is unknown (e.g. loaded from a flat CSV)"
    )

    @model_validator(mode="after")
    def _check(self) -> "Trace":
        for prev, seg in zip(self.segments, self.segments[1:]):
            expected = prev.trajectory.end_time
            if not np.isclose(seg.trajectory.t0, expected, rtol=_TIME_RTOL, atol=1e-9 * prev.tau):
                raise ValueError(
                    f"segments are not contiguous: t0={seg.trajectory.t0} but previous ends at {expected}"
                )
        return self

    @property
    def tau(self) -> float:
        return self.segments[0].tau

    def flatten(self) -> TraceSegment:
        """Join segments into one, dropping the duplicated boundary samples."""
        if len(self.segments) == 1:
            return self.segments[0]
        states = [self.segments[0].trajectory.states]
        inputs = []
        for seg in self.segments:
            inputs.append(seg.inputs.channels[:, :seg.steps])
        for seg in self.segments[1:]:
            states.append(seg.trajectory.states[:, 1:])
        first = self.segments[0]
        return TraceSegment(
            inputs=InputSignal(tau=first.tau, channels=np.hstack(inputs)),
            trajectory=Trajectory(tau=first.tau, t0=first.trajectory.t0, states=np.hstack(states)),
        )
