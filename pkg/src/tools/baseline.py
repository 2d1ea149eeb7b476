"""Output-trajectory conformance baseline.

A nominal predictor driven by the logged inputs gives the safety formula's
robustness per window on error-free traces; at run time the observed output
must keep its window robustness inside the calibrated range.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.models.conformal import BaselineVerdict, CenterPolicy, OutputConformalProfile, VerdictLabel
from src.models.formula import StlFormula
from src.models.scenario import Integrator
from src.models.system import LinearOdeSystem, Trace
from src.tools.conformal import conformal_rank
from src.tools.ode_core import simulate
from src.tools.stl import robustness
from src.utils.errors import PreconditionError

logger = logging.getLogger(__name__)


def window_starts(steps: int, window_length: int) -> List[int]:
    """Non-overlapping window starts; the trailing remainder is dropped."""
    if steps < window_length:
        return [0]
    return list(range(0, steps - window_length + 1, window_length))


def output_frames(states: np.ndarray, names: Sequence[str], offsets: Optional[Mapping[str, float]] = None) -> List[Dict[str, float]]:
    offsets = offsets or {}
    shift = np.array([offsets.get(name, 0.0) for name in names])
    values = states + shift[:, None]
    return [dict(zip(names, column)) for column in values.T.tolist()]


def window_robustness(safety: StlFormula, frames: Sequence[Dict[str, float]]) -> float:
    """Robustness of `safety` holding at every frame of the window where its horizon fits."""
    last = len(frames) - 1 - safety.horizon
    if last < 0:
        raise PreconditionError(f"window of {len(frames)} frames is shorter than the formula horizon {safety.horizon}")
    return robustness(StlFormula.globally(0, last, safety), frames).value


def output_scores(
    states: np.ndarray,
    names: Sequence[str],
    safety: StlFormula,
    window_length: int,
    offsets: Optional[Mapping[str, float]] = None,
) -> List[Tuple[int, float]]:
    frames = output_frames(states, names, offsets)
    steps = len(frames) - 1
    scores = []
    for start in window_starts(steps, window_length):
        stop = min(start + window_length, steps)
        scores.append((start, window_robustness(safety, frames[start:stop + 1])))
    return scores


def predicted_states(predictor: LinearOdeSystem, trace: Trace, integrator: Integrator = Integrator.RK4) -> np.ndarray:
    """Predictor output under the trace's logged inputs, from the trace's first sample."""
    segment = trace.flatten()
    x0 = segment.trajectory.states[:, 0]
    return simulate(predictor, segment.inputs, x0, segment.steps, integrator=integrator).states


def baseline_calibrate(
    traces: Sequence[Trace],
    safety: StlFormula,
    predictor: LinearOdeSystem,
    miscoverage: float = 0.1,
    window_length: int = 60,
    center_policy: CenterPolicy = CenterPolicy.MEDIAN,
    integrator: Integrator = Integrator.RK4,
    output_offsets: Optional[Mapping[str, float]] = None,
    warnings: Optional[List[str]] = None,
) -> OutputConformalProfile:
    """Conformal range of the predictor's window robustness on error-free traces.

    Every window score is a calibration score, so the rank is taken as for a
    split of twice that many units: ceil((m + 1)(1 - miscoverage)).
    """
    if not traces:
        raise PreconditionError("baseline calibration needs at least one error-free trace")
    if not 0.0 < miscoverage < 1.0:
        raise PreconditionError(f"miscoverage must be in (0, 1), got {miscoverage}")

    scores: List[float] = []
    for trace in traces:
        states = predicted_states(predictor, trace, integrator)
        scores.extend(s for _, s in output_scores(states, predictor.state_names, safety, window_length, output_offsets))
    scores.sort()

    center = float(np.median(scores)) if center_policy == CenterPolicy.MEDIAN else 0.0
    spread = sorted(abs(s - center) for s in scores)
    n_total = 2 * len(spread)
    rank = conformal_rank(n_total, miscoverage)
    if rank > len(spread):
        message = f"Baseline rank {rank} exceeds the {len(spread)} window scores; clamped"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        rank = len(spread)
    d = spread[rank - 1]
    logger.info(
        f"Baseline calibrated on {len(scores)} windows: center={center:.4g}, d={d:.4g}"
    )
    return OutputConformalProfile(
        safety=safety,
        scores=scores,
        d=d,
        interval=(center - d, center + d),
        miscoverage=miscoverage,
        center_policy=center_policy,
        window_length=window_length,
        predictor=predictor.to_json_dict(),
        output_offsets=dict(output_offsets or {}),
        n_total=n_total,
        rank=rank,
    )


def baseline_detect(trace: Trace, profile: OutputConformalProfile, state_names: Sequence[str]) -> BaselineVerdict:
    """Detected at the first window whose observed-output robustness leaves the range."""
    segment = trace.flatten()
    lo, hi = profile.lo, profile.hi
    scores = output_scores(
        segment.trajectory.states, state_names, profile.safety, profile.window_length, profile.output_offsets
    )
    for index, (start, score) in enumerate(scores):
        if score < lo or score > hi:
            detect_time = segment.trajectory.t0 + start * segment.tau
            logger.info(f"Baseline detection in window {index} (t={detect_time:g}): robustness {score:.4g}")
            return BaselineVerdict(
                label=VerdictLabel.DETECTED,
                robustness=score,
                interval=profile.interval,
                window=index,
                detect_time=detect_time,
            )
    return BaselineVerdict(
        label=VerdictLabel.NOT_DETECTED,
        robustness=min(s for _, s in scores),
        interval=profile.interval,
    )
