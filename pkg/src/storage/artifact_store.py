import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from src.models.run import RunManifest
from src.models.system import InputSignal, LinearOdeSystem, Trace, TraceSegment, Trajectory
from src.utils.errors import ConfigValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
M = TypeVar("M", bound=BaseModel)

HIDDEN_PREFIX = "hidden_"
FLOAT_FORMAT = "%.12g"


def _location(loc: Sequence[Any]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


class ArtifactStore:
    """File-backed persistence for configs, traces, coefficient sequences, profiles and verdicts.

    Every write returns the sha256 of the bytes written so callers can list
    it in the run manifest.
    """

    # JSON

    def load_json(self, path: PathLike) -> Any:
        path = Path(path)
        try:
            return json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigValidationError(f"{path}: file not found")
        except json.JSONDecodeError as e:
            raise ConfigValidationError(f"{path}: line {e.lineno}: {e.msg}")

    def load_model(self, path: PathLike, model: Type[M], section: Optional[str] = None) -> M:
        """Validate a JSON file (or one top-level section of it) against a model."""
        data = self.load_json(path)
        prefix = ""
        if section is not None:
            if not isinstance(data, dict) or section not in data:
                raise ConfigValidationError(f"{path}: {section}: Field required")
            data = data[section]
            prefix = f"{section}."
        try:
            return model.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            raise ConfigValidationError(f"{path}: {prefix}{_location(first['loc'])}: {first['msg']}")

    def save_json(self, path: PathLike, data: Any) -> str:
        text = json.dumps(data, indent=2, sort_keys=True) + "\n"
        return self._write(path, text.encode())

    # Traces

    def save_trace(self, path: PathLike, trace: Trace, system: LinearOdeSystem) -> str:
        """CSV with `t`, the named inputs, then the states; unsensed states get a `hidden_` prefix.

        The last row holds the final state and has no inputs.
        """
        segment = trace.flatten()
        trajectory = segment.trajectory
        steps = segment.steps
        frame = {"t": trajectory.times}
        for i, name in enumerate(system.input_names):
            if name:
                column = np.full(steps + 1, np.nan)
                column[:steps] = segment.inputs.channels[i, :steps]
                frame[name] = column
        observable = system.observable
        for i, name in enumerate(system.state_names):
            frame[name if observable[i] else HIDDEN_PREFIX + name] = trajectory.states[i]
        df = pd.DataFrame(frame)
        return self._write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT).encode())

    def load_trace(self, path: PathLike, system: LinearOdeSystem) -> Trace:
        """Read a trace CSV, mapping columns onto the system's state and input names."""
        path = Path(path)
        try:
            df = pd.read_csv(path)
        except FileNotFoundError:
            raise ConfigValidationError(f"{path}: file not found")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ConfigValidationError(f"{path}: {e}")
        if "t" not in df.columns:
            raise ConfigValidationError(f"{path}: t: column required")
        if len(df) < 2:
            raise ConfigValidationError(f"{path}: need at least two samples")

        times = df["t"].to_numpy(dtype=float)
        steps_dt = np.diff(times)
        tau = float(steps_dt[0])
        if tau <= 0 or not np.allclose(steps_dt, tau, rtol=1e-6, atol=1e-9):
            raise ConfigValidationError(f"{path}: t: samples must be uniformly spaced")

        n, steps = system.n, len(df) - 1
        states = np.zeros((n, steps + 1))
        for i, name in enumerate(system.state_names):
            for column in (name, HIDDEN_PREFIX + name):
                if column in df.columns:
                    states[i] = df[column].to_numpy(dtype=float)
                    break
            else:
                if system.observable[i]:
                    raise ConfigValidationError(f"{path}: {name}: column required for an observed state")
                logger.debug(f"{path}: no column for hidden state {name}; using zeros")
        if not np.all(np.isfinite(states)):
            raise ConfigValidationError(f"{path}: state columns contain missing or non-finite values")

        channels = np.zeros((n, steps))
        for i, name in enumerate(system.input_names):
            if name and name in df.columns:
                channels[i] = np.nan_to_num(df[name].to_numpy(dtype=float)[:steps])

        segment = TraceSegment(
            inputs=InputSignal(tau=tau, channels=channels),
            trajectory=Trajectory(tau=tau, t0=float(times[0]), states=states),
        )
        return Trace(segments=[segment], natural_segments=False)

    # Verdict tables

    def save_table(self, path: PathLike, rows: List[Dict[str, Any]], columns: Sequence[str]) -> str:
        df = pd.DataFrame(rows, columns=list(columns))
        return self._write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT).encode())

    def load_table(self, path: PathLike) -> pd.DataFrame:
        path = Path(path)
        try:
            return pd.read_csv(path)
        except FileNotFoundError:
            raise ConfigValidationError(f"{path}: file not found")
        except pd.errors.EmptyDataError:
            return pd.DataFrame()

    # Manifests

    def manifest_path(self, output: PathLike) -> Path:
        output = Path(output)
        return output.with_name(output.name + ".manifest.json")

    def write_manifest(self, output: PathLike, manifest: RunManifest) -> Path:
        target = self.manifest_path(output)
        self.save_json(target, manifest.model_dump(mode="json"))
        logger.info(f"Wrote run manifest {target}")
        return target

    @staticmethod
    def sha256(path: PathLike) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()

    def _write(self, path: PathLike, payload: bytes) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        logger.debug(f"Wrote {path} ({len(payload)} bytes)")
        return hashlib.sha256(payload).hexdigest()


# Global instance
store = ArtifactStore()
