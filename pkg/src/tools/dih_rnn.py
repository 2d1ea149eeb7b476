import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from src.models.coefficients import (
    CoefficientSequence,
    CoefficientVector,
    CoefficientWindow,
    FitReport,
    InitPolicy,
    MiningConfig,
    OptimizerKind,
    RnnStructure,
)
from src.models.system import InputSignal, LinearOdeSystem, SystemTemplate, Trace, TraceSegment, Trajectory
from src.tools.ode_core import equilibrium, simulate_euler, trajectory_distance
from src.utils.errors import (
    DivergenceError,
    MiningConvergenceError,
    PreconditionError,
    StepBoundError,
)

logger = logging.getLogger(__name__)

# Loss reported for a trial point whose unrolled forward pass blows up
_DIVERGED_LOSS = 1e30
_MIN_SCALE = 1e-12
DEFAULT_PSI: float = MiningConfig.model_fields["psi"].default


# ---------------------------------------------------------------------------
# Structure induction
# ---------------------------------------------------------------------------

def _default_label(kind: str, i: int, j: int, names: Sequence[str]) -> str:
    if kind == "a":
        return f"a[{names[i]},{names[j]}]"
    return f"{kind}[{names[i]}]"


def induce_structure(template: SystemTemplate) -> RnnStructure:
    """Build the recurrent topology mirroring the template's sparsity.

    One node per state; a recurrent edge j -> i for every learnable a_ij and an
    input edge u_i -> i for every learnable b_ii. Input channels without an edge
    are dropped from the structure.
    """
    sys = template.system
    a_mask = np.asarray(template.a_learnable, dtype=bool)
    b_mask = np.asarray(template.b_learnable, dtype=bool)
    c_mask = np.asarray(template.offset_learnable, dtype=bool)
    if not (a_mask.any() or b_mask.any() or c_mask.any()):
        raise PreconditionError("template has no learnable coefficients")

    names = sys.state_names
    labels = [_default_label("a", int(i), int(j), names) for i, j in zip(*np.nonzero(a_mask))]
    labels += [_default_label("b", int(i), int(i), names) for i in np.flatnonzero(b_mask)]
    labels += [_default_label("c", int(i), int(i), names) for i in np.flatnonzero(c_mask)]
    labels = [template.labels.get(label, label) for label in labels]
    if len(set(labels)) != len(labels):
        raise PreconditionError(f"coefficient labels are not unique: {labels}")

    recurrent_edges = sorted((int(j), int(i)) for i, j in zip(*np.nonzero(a_mask)))
    input_edges = [(int(i), int(i)) for i in np.flatnonzero(b_mask)]
    input_names = [name if b_mask[i] else "" for i, name in enumerate(sys.input_names)]

    structure = RnnStructure(
        n=sys.n,
        state_names=list(names),
        input_names=input_names,
        a_mask=a_mask,
        b_mask=b_mask,
        offset_mask=c_mask,
        beta_diag=np.diag(sys.beta),
        fixed_A=np.where(a_mask, 0.0, sys.A),
        fixed_b=np.where(b_mask, 0.0, sys.b_diag),
        fixed_offset=np.where(c_mask, 0.0, sys.affine_offset),
        template_A=sys.A,
        template_b=sys.b_diag,
        template_offset=sys.affine_offset,
        labels=labels,
        recurrent_edges=recurrent_edges,
        input_edges=input_edges,
    )
    logger.debug(
        f"Induced structure {structure.structure_hash}: {sys.n} nodes, "
        f"{len(recurrent_edges)} recurrent edges, {len(input_edges)} input edges"
    )
    return structure


def template_vector(structure: RnnStructure) -> CoefficientVector:
    return structure.vector(structure.template_values())


# ---------------------------------------------------------------------------
# Step bound and forward pass
# ---------------------------------------------------------------------------

def _coefficient_matrix(
    omega: Union[CoefficientVector, LinearOdeSystem, np.ndarray],
    structure: Optional[RnnStructure],
) -> np.ndarray:
    if isinstance(omega, LinearOdeSystem):
        return omega.A
    if isinstance(omega, CoefficientVector):
        if structure is None:
            raise PreconditionError("a structure is needed to read a_ii from a coefficient vector")
        return structure.split(omega.values)[0]
    return np.asarray(omega, dtype=float)


def step_bound(
    omega: Union[CoefficientVector, LinearOdeSystem, np.ndarray],
    psi: float,
    structure: Optional[RnnStructure] = None,
) -> float:
    """Largest tau with tau <= sqrt(2 psi) / |a_ii| for every nonzero a_ii."""
    if psi <= 0:
        raise PreconditionError(f"psi must be positive, got {psi}")
    diag = np.abs(np.diag(_coefficient_matrix(omega, structure)))
    diag = diag[diag > 0]
    if diag.size == 0:
        return float("inf")
    return float(np.min(np.sqrt(2.0 * psi) / diag))


def _check_step_bound(tau: float, bound: float, override: bool, warnings: Optional[List[str]]) -> None:
    if tau <= bound:
        return
    if not override:
        raise StepBoundError(tau, bound)
    message = f"Step period {tau:g} exceeds the step bound {bound:g}; continuing on override"
    logger.warning(message)
    if warnings is not None:
        warnings.append(message)


def forward_pass(
    structure: RnnStructure,
    omega: CoefficientVector,
    u: InputSignal,
    x0,
    steps: int,
    psi: float = DEFAULT_PSI,
    override_step_bound: bool = False,
    warnings: Optional[List[str]] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Unroll one Euler cell per node; same semantics as simulate_euler."""
    structure.check(omega)
    sys = structure.system(omega)
    _check_step_bound(u.tau, step_bound(sys, psi), override_step_bound, warnings)
    return simulate_euler(sys, u, x0, steps, t0=t0)


def _rollout(A: np.ndarray, b: np.ndarray, c: np.ndarray, U: np.ndarray, x0: np.ndarray, tau: float) -> np.ndarray:
    """Euler recurrence on raw arrays; raises DivergenceError on a non-finite state."""
    steps = U.shape[1]
    X = np.empty((x0.shape[0], steps + 1))
    X[:, 0] = x0
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = x + tau * (A @ x + b * U[:, k] + c)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(k + 1)
            X[:, k + 1] = x
    return X


# ---------------------------------------------------------------------------
# Loss and analytic gradient (backpropagation through the unrolled recurrence)
# ---------------------------------------------------------------------------

class _SegmentData:
    """Arrays of one training segment plus its per-channel loss weights."""

    def __init__(self, segment: TraceSegment, structure: RnnStructure, x0: np.ndarray, weight: float):
        self.tau = segment.tau
        self.steps = segment.steps
        self.Y = np.asarray(segment.trajectory.states, dtype=float)
        self.U = np.asarray(segment.inputs.channels[:, :self.steps], dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        self.observable = structure.observable
        observed = self.Y[self.observable, 1:]
        mean_square = np.mean(observed ** 2, axis=1) if observed.size else np.ones(0)
        mean_square = np.where(mean_square > 0, mean_square, 1.0)
        # Each observable channel contributes its MSE relative to its own mean square
        self.channel_weight = np.zeros(structure.n)
        self.channel_weight[self.observable] = weight / (self.steps * self.observable.sum() * mean_square)


def _loss_and_grad(
    values: np.ndarray, structure: RnnStructure, data: Sequence[_SegmentData]
) -> Tuple[float, np.ndarray]:
    A, b, c = structure.split(values)
    gA = np.zeros_like(A)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    loss = 0.0
    for seg in data:
        X = _rollout(A, b, c, seg.U, seg.x0, seg.tau)
        R = (X - seg.Y) * seg.observable[:, None]
        W = seg.channel_weight[:, None]
        loss += float(np.sum(W * R[:, 1:] ** 2))
        direct = 2.0 * W * R
        M_T = (np.eye(structure.n) + seg.tau * A).T
        lam = np.zeros_like(X)
        lam[:, seg.steps] = direct[:, seg.steps]
        for k in range(seg.steps - 1, 0, -1):
            lam[:, k] = M_T @ lam[:, k + 1] + direct[:, k]
        lam_next = lam[:, 1:]
        gA += seg.tau * lam_next @ X[:, :-1].T
        gb += seg.tau * np.sum(lam_next * seg.U, axis=1)
        gc += seg.tau * np.sum(lam_next, axis=1)
    return loss, structure.pack(gA, gb, gc)


def mining_loss(
    structure: RnnStructure,
    omega: CoefficientVector,
    segments: Sequence[TraceSegment],
    x0s: Optional[Sequence] = None,
    loss_weight: float = 1.0,
) -> Tuple[float, np.ndarray]:
    """Relative MSE over observable channels and its exact gradient with respect to omega."""
    structure.check(omega)
    x0s = _initial_states(structure, segments, x0s)
    data = [_SegmentData(seg, structure, x0, loss_weight) for seg, x0 in zip(segments, x0s)]
    return _loss_and_grad(np.asarray(omega.values, dtype=float), structure, data)


# ---------------------------------------------------------------------------
# Initialization policies
# ---------------------------------------------------------------------------

def _regression_init(
    structure: RnnStructure, segments: Sequence[TraceSegment], fallback: np.ndarray, warnings: List[str]
) -> np.ndarray:
    """Equation-error least squares on Euler differences, row by row."""
    A0, b0, c0 = structure.split(fallback)
    A, b, c = A0.copy(), b0.copy(), c0.copy()
    observable = structure.observable
    for i in range(structure.n):
        cols = np.flatnonzero(structure.a_mask[i])
        uses_b = bool(structure.b_mask[i])
        uses_c = bool(structure.offset_mask[i])
        if cols.size == 0 and not uses_b and not uses_c:
            continue
        if not observable[i] or not np.all(observable[cols]):
            message = f"Regression init: row {structure.state_names[i]} touches hidden states; using template values"
            logger.warning(message)
            warnings.append(message)
            continue
        rows, targets = [], []
        for seg in segments:
            Y = seg.trajectory.states
            U = seg.inputs.channels[:, :seg.steps]
            fixed = structure.fixed_A[i] @ Y[:, :-1] + structure.fixed_b[i] * U[i] + structure.fixed_offset[i]
            target = (Y[i, 1:] - Y[i, :-1]) / seg.tau - fixed
            regressors = [Y[j, :-1] for j in cols]
            if uses_b:
                regressors.append(U[i])
            if uses_c:
                regressors.append(np.ones(seg.steps))
            rows.append(np.column_stack(regressors))
            targets.append(target)
        theta, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(targets), rcond=None)
        pos = 0
        for j in cols:
            A[i, j] = theta[pos]
            pos += 1
        if uses_b:
            b[i] = theta[pos]
            pos += 1
        if uses_c:
            c[i] = theta[pos]
    return structure.pack(A, b, c)


def initial_coefficients(
    structure: RnnStructure,
    cfg: MiningConfig,
    segments: Sequence[TraceSegment] = (),
    warnings: Optional[List[str]] = None,
) -> CoefficientVector:
    """Starting weights for mining, per cfg.init_policy."""
    warnings = warnings if warnings is not None else []
    rng = np.random.default_rng(cfg.seed)
    noise = rng.uniform(-cfg.init_scale, cfg.init_scale, size=structure.size)
    template = structure.template_values()
    perturbed = np.where(template != 0.0, template * (1.0 + noise), noise)
    if cfg.init_policy == InitPolicy.UNIFORM:
        values = noise
    elif cfg.init_policy == InitPolicy.TEMPLATE:
        values = perturbed
    else:
        if not segments:
            raise PreconditionError("regression init needs at least one segment")
        values = _regression_init(structure, segments, perturbed, warnings)
    return structure.vector(values)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class _ScaledObjective:
    """Loss in scaled coordinates theta = omega / scale, with evaluation counting."""

    def __init__(self, structure: RnnStructure, data: Sequence[_SegmentData], scale: np.ndarray):
        self.structure = structure
        self.data = data
        self.scale = scale
        self.evaluations = 0

    def __call__(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        self.evaluations += 1
        try:
            loss, grad = _loss_and_grad(theta * self.scale, self.structure, self.data)
        except DivergenceError:
            return _DIVERGED_LOSS, np.zeros_like(theta)
        return loss, grad * self.scale


def _gradient_descent(objective: _ScaledObjective, theta: np.ndarray, cfg: MiningConfig) -> Tuple[np.ndarray, float, int, bool]:
    loss, grad = objective(theta)
    lr = cfg.learning_rate
    best_loss = loss
    stale = 0
    converged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        candidate = theta - lr * grad
        cand_loss, cand_grad = objective(candidate)
        if not np.isfinite(cand_loss) or cand_loss > loss:
            lr *= 0.5
            if lr < 1e-14:
                logger.debug("Learning rate underflow; stopping")
                break
            continue
        delta = loss - cand_loss
        theta, loss, grad = candidate, cand_loss, cand_grad
        if delta < cfg.convergence_tol:
            converged = True
            break
        if loss < best_loss * (1.0 - 1e-3):
            best_loss = loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                lr *= 0.5
                stale = 0
    return theta, loss, epoch, converged


def _lbfgs(objective: _ScaledObjective, theta: np.ndarray, cfg: MiningConfig) -> Tuple[np.ndarray, float, int, bool]:
    result = optimize.minimize(
        objective,
        theta,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_epochs, "ftol": cfg.convergence_tol, "gtol": 1e-12},
    )
    return result.x, float(result.fun), int(result.nit), bool(result.success)


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------

def _initial_states(
    structure: RnnStructure, segments: Sequence[TraceSegment], x0s: Optional[Sequence]
) -> List[np.ndarray]:
    """Observable entries from the data; hidden entries from x0s or the template equilibrium."""
    basal = equilibrium(
        LinearOdeSystem(
            n=structure.n,
            A=structure.template_A,
            B_diag=structure.template_b,
            beta_diag=structure.beta_diag,
            affine_offset=structure.template_offset,
        )
    ) if not np.all(structure.observable) else np.zeros(structure.n)
    observable = structure.observable
    out = []
    for k, seg in enumerate(segments):
        x0 = np.array(basal if x0s is None or x0s[k] is None else x0s[k], dtype=float)
        x0[observable] = seg.trajectory.states[observable, 0]
        out.append(x0)
    return out


def _check_segments(structure: RnnStructure, segments: Sequence[TraceSegment], cfg: MiningConfig) -> None:
    if not segments:
        raise PreconditionError("no segments to mine")
    if not structure.observable.any():
        raise PreconditionError("structure has no observable channels")
    for seg in segments:
        if seg.steps < 1:
            raise PreconditionError("segment has no steps")
        if seg.trajectory.n != structure.n:
            raise PreconditionError(f"segment has {seg.trajectory.n} states, structure has {structure.n}")
        if cfg.tau is not None and not np.isclose(seg.tau, cfg.tau, rtol=1e-9, atol=0.0):
            raise PreconditionError(f"segment period {seg.tau} differs from configured tau {cfg.tau}")


def _pooled_distance(structure: RnnStructure, segments: Sequence[TraceSegment], fits: Sequence[np.ndarray]) -> float:
    if len(segments) == 1:
        fitted = Trajectory(tau=segments[0].tau, t0=segments[0].trajectory.t0, states=fits[0])
        return trajectory_distance(fitted, segments[0].trajectory, structure.beta_diag)
    observable = structure.observable
    sq = np.concatenate([((X - seg.trajectory.states)[observable]).ravel() ** 2 for X, seg in zip(fits, segments)])
    return float(np.sqrt(np.mean(sq)))


def mine_joint(
    segments: Sequence[TraceSegment],
    structure: RnnStructure,
    cfg: MiningConfig,
    initial: Optional[CoefficientVector] = None,
    x0s: Optional[Sequence] = None,
    window: Optional[int] = None,
) -> Tuple[CoefficientVector, FitReport]:
    """Fit one coefficient vector to the summed loss of several segments."""
    _check_segments(structure, segments, cfg)
    warnings: List[str] = []
    tau = max(seg.tau for seg in segments)
    if initial is not None and tau > step_bound(initial, cfg.psi, structure) and not cfg.override_step_bound:
        message = (
            f"Seed vector breaks the step bound ({step_bound(initial, cfg.psi, structure):g} < {tau:g}); "
            f"re-seeding from the {cfg.init_policy.value} policy"
        )
        logger.warning(message)
        warnings.append(message)
        initial = None
    unit_scale = initial is None and cfg.init_policy == InitPolicy.UNIFORM
    if initial is None:
        initial = initial_coefficients(structure, cfg, segments, warnings)
    structure.check(initial)

    _check_step_bound(tau, step_bound(initial, cfg.psi, structure), cfg.override_step_bound, warnings)

    starts = _initial_states(structure, segments, x0s)
    data = [_SegmentData(seg, structure, x0, cfg.loss_weight) for seg, x0 in zip(segments, starts)]
    # fail fast if the starting point already diverges
    _loss_and_grad(np.asarray(initial.values, dtype=float), structure, data)

    # Random starting weights carry no magnitude information
    scale = np.ones(structure.size) if unit_scale else np.abs(np.asarray(initial.values, dtype=float))
    scale = np.where(scale > _MIN_SCALE, scale, 1.0)
    objective = _ScaledObjective(structure, data, scale)
    theta0 = np.asarray(initial.values, dtype=float) / scale
    if cfg.optimizer == OptimizerKind.LBFGS:
        theta, loss, epochs, converged = _lbfgs(objective, theta0, cfg)
    else:
        theta, loss, epochs, converged = _gradient_descent(objective, theta0, cfg)

    values = theta * scale
    A, b, c = structure.split(values)
    fits = [_rollout(A, b, c, d.U, d.x0, d.tau) for d in data]
    distance = _pooled_distance(structure, segments, fits)
    omega = structure.vector(values)
    fitted_bound = step_bound(omega, cfg.psi, structure)
    logger.debug(
        f"Mined {structure.size} coefficients over {len(segments)} segment(s): "
        f"loss={loss:.3e} distance={distance:.4g} epochs={epochs} ({objective.evaluations} evaluations)"
    )
    if not distance < cfg.upsilon:
        raise MiningConvergenceError(omega, distance, cfg.upsilon, window=window)
    _check_step_bound(tau, fitted_bound, cfg.override_step_bound, warnings)
    report = FitReport(
        loss=loss,
        epochs=epochs,
        distance=distance,
        converged=converged,
        optimizer=cfg.optimizer,
        step_bound=fitted_bound,
        final_state=fits[-1][:, -1].tolist(),
        warnings=warnings,
    )
    return omega, report


def mine_coefficients(
    segment: TraceSegment,
    structure: RnnStructure,
    cfg: MiningConfig,
    initial: Optional[CoefficientVector] = None,
    x0=None,
) -> Tuple[CoefficientVector, FitReport]:
    """Learn the coefficients of one (input, trajectory) segment."""
    return mine_joint([segment], structure, cfg, initial=initial, x0s=None if x0 is None else [x0])


def fitted_trajectory(
    structure: RnnStructure,
    omega: CoefficientVector,
    segment: TraceSegment,
    x0=None,
    cfg: Optional[MiningConfig] = None,
) -> Trajectory:
    """Forward pass of omega driven by the segment's inputs, from the segment's start state."""
    start = _initial_states(structure, [segment], None if x0 is None else [x0])[0]
    cfg = cfg or MiningConfig()
    return forward_pass(
        structure, omega, segment.inputs, start, segment.steps,
        psi=cfg.psi, override_step_bound=cfg.override_step_bound, t0=segment.trajectory.t0,
    )


# ---------------------------------------------------------------------------
# Continuous mining
# ---------------------------------------------------------------------------

def trace_windows(trace: Trace, cfg: MiningConfig) -> List[Tuple[int, TraceSegment]]:
    """(start sample, segment) pairs: natural segments, or fixed windows of a flat trace."""
    if trace.natural_segments:
        out, start = [], 0
        for seg in trace.segments:
            out.append((start, seg))
            start += seg.steps
        return out
    flat = trace.flatten()
    total = flat.steps
    length = min(cfg.window_length, total)
    starts = list(range(0, total - length + 1, cfg.window_stride))
    dropped = total - (starts[-1] + length)
    if dropped > 0:
        logger.debug(f"Dropping {dropped} trailing steps that do not fill a window")
    return [(start, flat.window(start, length)) for start in starts]


def continuous_mine(
    trace: Trace,
    structure: RnnStructure,
    cfg: MiningConfig,
    initial: Optional[CoefficientVector] = None,
    x0=None,
) -> CoefficientSequence:
    """Mine one coefficient vector per segment (or fixed window), warm-starting each from the last."""
    windows = trace_windows(trace, cfg)
    if not windows:
        raise PreconditionError("trace has no windows to mine")

    mined: List[CoefficientWindow] = []
    previous: Optional[CoefficientVector] = None
    carried: Optional[np.ndarray] = None if x0 is None else np.asarray(x0, dtype=float)
    prev_end: Optional[int] = None
    prev_fit: Optional[np.ndarray] = None
    prev_start = 0

    for index, (start, segment) in enumerate(windows):
        if index > 0 and cfg.carry_hidden_state and prev_fit is not None:
            offset = start - prev_start
            carried = prev_fit[:, offset] if 0 <= offset < prev_fit.shape[1] else None
        elif index > 0:
            carried = None
        seed_vector = previous if (cfg.warm_start and previous is not None) else initial
        try:
            omega, report = mine_joint(
                [segment], structure, cfg, initial=seed_vector,
                x0s=None if carried is None else [carried], window=index,
            )
        except MiningConvergenceError as e:
            logger.error(f"Mining failed in window {index} (start {start}): {e}")
            raise
        except DivergenceError as e:
            logger.error(f"Forward pass diverged in window {index} (start {start}): {e}")
            raise
        for message in report.warnings:
            logger.debug(f"Window {index}: {message}")

        mined.append(
            CoefficientWindow(
                index=index,
                start=start,
                length=segment.steps,
                t0=segment.trajectory.t0,
                omega=omega,
                loss=report.loss,
                distance=report.distance,
            )
        )
        previous = omega
        prev_fit = fitted_trajectory(
            structure, omega, segment, None if carried is None else carried, cfg
        ).states
        prev_start = start
        prev_end = start + segment.steps

    logger.info(f"Continuous mining produced {len(mined)} window(s) up to sample {prev_end}")
    return CoefficientSequence(structure_hash=structure.structure_hash, windows=mined)
