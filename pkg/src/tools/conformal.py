import logging
import math
from typing import List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from src.models.coefficients import CoefficientSequence, CoefficientVector, MiningConfig, RnnStructure
from src.models.conformal import CalibrationProfile, CenterPolicy, Verdict, VerdictLabel
from src.models.system import Trace
from src.tools.dih_rnn import continuous_mine, mine_joint, trace_windows
from src.tools.stl import deviation_residue, interval_formula, residue_atom, robustness
from src.utils.errors import PreconditionError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def split_error_free(items: Sequence[T], seed: int = 0, train_fraction: float = 0.5) -> Tuple[List[T], List[T]]:
    """Seeded split into (train, test); train gets floor(n * train_fraction), at least one each."""
    n = len(items)
    if n < 2:
        raise PreconditionError(f"need at least 2 error-free units to split, got {n}")
    n_train = min(max(int(math.floor(n * train_fraction)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train_idx = sorted(int(i) for i in order[:n_train])
    test_idx = sorted(int(i) for i in order[n_train:])
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def conformal_rank(n_total: int, miscoverage: float) -> int:
    """ceil((n/2 + 1)(1 - miscoverage)), 1-based."""
    # the tolerance keeps exact products such as 4.0 from rounding up
    return int(math.ceil((n_total / 2.0 + 1.0) * (1.0 - miscoverage) - 1e-9))


def profile_from_residues(
    omega_e: CoefficientVector,
    residues: Sequence[float],
    n_total: int,
    miscoverage: float = 0.1,
    residue_offset: float = 0.0,
    center_policy: CenterPolicy = CenterPolicy.MEDIAN,
    warnings: Optional[List[str]] = None,
) -> CalibrationProfile:
    """Sort residues, pick d at the conformal rank, and center the interval."""
    if not residues:
        raise PreconditionError("no calibration residues")
    if not 0.0 < miscoverage < 1.0:
        raise PreconditionError(f"miscoverage must be in (0, 1), got {miscoverage}")
    ordered = sorted(float(r) for r in residues)
    rank = conformal_rank(n_total, miscoverage)
    if rank > len(ordered):
        message = f"Conformal rank {rank} exceeds the {len(ordered)} calibration residues; clamped"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        rank = len(ordered)
    rank = max(rank, 1)
    d = ordered[rank - 1]
    if d < 0:
        message = f"Residue at rank {rank} is negative ({d:.4g}); using d = 0"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        d = 0.0
    center = float(np.median(ordered)) if center_policy == CenterPolicy.MEDIAN else 0.0
    return CalibrationProfile(
        omega_e=omega_e,
        residues=ordered,
        d=d,
        interval=(center - d, center + d),
        miscoverage=miscoverage,
        residue_offset=residue_offset,
        center_policy=center_policy,
        n_total=n_total,
        rank=rank,
    )


def reference_coefficients(
    train: Sequence[Trace],
    structure: RnnStructure,
    cfg: MiningConfig,
    initial: Optional[CoefficientVector] = None,
) -> CoefficientVector:
    """One coefficient vector fitted jointly to every training trace."""
    segments = [trace.flatten() for trace in train]
    omega_e, report = mine_joint(segments, structure, cfg, initial=initial)
    logger.info(
        f"Reference coefficients from {len(segments)} trace(s): distance={report.distance:.4g}, epochs={report.epochs}"
    )
    return omega_e


def calibrate(
    train: Sequence[Trace],
    test: Sequence[Trace],
    structure: RnnStructure,
    cfg: MiningConfig,
    miscoverage: float = 0.1,
    residue_offset: float = 0.0,
    center_policy: CenterPolicy = CenterPolicy.MEDIAN,
    initial: Optional[CoefficientVector] = None,
    warnings: Optional[List[str]] = None,
) -> CalibrationProfile:
    """Reference fit on train, residues of every test window against it, conformal range."""
    if not train or not test:
        raise PreconditionError("calibration needs non-empty train and test sets")
    omega_e = reference_coefficients(train, structure, cfg, initial=initial)

    residues: List[float] = []
    for k, trace in enumerate(test):
        sequence = continuous_mine(trace, structure, cfg, initial=omega_e)
        trace_residues = [deviation_residue(omega, omega_e, residue_offset) for omega in sequence.omegas]
        logger.debug(f"Test trace {k}: residues {np.round(trace_residues, 4).tolist()}")
        residues.extend(trace_residues)

    n_total = sum(len(trace_windows(trace, cfg)) for trace in train) + len(residues)
    profile = profile_from_residues(
        omega_e, residues, n_total, miscoverage, residue_offset, center_policy, warnings
    )
    logger.info(
        f"Calibrated on {len(residues)} residues (n={n_total}): d={profile.d:.4g}, "
        f"interval=[{profile.lo:.4g}, {profile.hi:.4g}]"
    )
    return profile


def detect(
    omega: CoefficientVector,
    profile: CalibrationProfile,
    window: int = 0,
    t0: Optional[float] = None,
) -> Verdict:
    """Detected iff the window's residue leaves the calibrated interval."""
    residue = deviation_residue(omega, profile.omega_e, profile.residue_offset)
    inside = interval_formula(profile.lo, profile.hi)
    rho = robustness(inside, [omega], atoms={"residue": residue_atom(profile.omega_e, profile.residue_offset)})
    label = VerdictLabel.DETECTED if rho.value < 0 else VerdictLabel.NOT_DETECTED
    return Verdict(label=label, residue=residue, interval=profile.interval, window=window, t0=t0)


def detect_sequence(sequence: CoefficientSequence, profile: CalibrationProfile) -> List[Verdict]:
    return [detect(w.omega, profile, window=w.index, t0=w.t0) for w in sequence.windows]
