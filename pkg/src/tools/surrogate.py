"""Monte-Carlo check that mined coefficients preserve STL robustness of the true model."""
import logging
import math
from typing import Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import stats

from src.models.coefficients import CoefficientVector, MiningConfig, RnnStructure
from src.models.formula import StlFormula
from src.models.run import SurrogateEstimate, SurrogateStatus
from src.models.scenario import BmmParams
from src.models.system import Trace
from src.tools.dih_rnn import continuous_mine, induce_structure, template_vector
from src.tools.plants import bmm_template
from src.tools.scenarios import aid_scenario, run_scenario
from src.tools.stl import AtomFn, robustness
from src.utils.errors import DivergenceError, MiningConvergenceError, PreconditionError, StepBoundError

logger = logging.getLogger(__name__)


class TraceSampler(Protocol):
    """Draws one input from the input distribution and returns the plant's trace and true coefficients."""

    def sample(self, rng: np.random.Generator) -> Tuple[Trace, CoefficientVector]:
        ...


class BmmMealSampler:
    """AID runs with a fixed bolus and a uniformly drawn meal size."""

    def __init__(
        self,
        meal_range: Tuple[float, float] = (10.0, 40.0),
        bolus_units: float = 7.5,
        params: Optional[BmmParams] = None,
        horizon: float = 240.0,
        pinned: Sequence[str] = (),
    ):
        self.meal_range = meal_range
        self.bolus_units = bolus_units
        self.params = params or BmmParams()
        self.horizon = horizon
        self.structure = induce_structure(bmm_template(self.params).pin(list(pinned)))

    def sample(self, rng: np.random.Generator) -> Tuple[Trace, CoefficientVector]:
        grams = float(rng.uniform(*self.meal_range))
        config = aid_scenario(
            "surrogate-sample",
            bolus_units=self.bolus_units,
            meal_grams=grams,
            seed=int(rng.integers(0, 2**31 - 1)),
            horizon=self.horizon,
            params=self.params,
        )
        return run_scenario(config), template_vector(self.structure)


def clopper_pearson_lower(successes: int, samples: int, confidence: float) -> float:
    """One-sided lower confidence bound on a binomial rate."""
    if successes <= 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, successes, samples - successes + 1))


def validate_surrogate(
    sampler: TraceSampler,
    formula: StlFormula,
    delta: float,
    epsilon: float,
    n_samples: int,
    structure: RnnStructure,
    cfg: MiningConfig,
    confidence: float = 0.95,
    seed: int = 0,
    atoms: Optional[Mapping[str, AtomFn]] = None,
) -> SurrogateEstimate:
    """Estimate P(|rho(phi, omega_true) - rho(phi, omega_mined)| <= delta) and compare with 1 - epsilon."""
    if n_samples < 1:
        raise PreconditionError("n_samples must be >= 1")
    if not 0.0 <= epsilon <= 1.0:
        raise PreconditionError(f"epsilon must be in [0, 1], got {epsilon}")
    if math.isinf(delta) and delta > 0:
        return SurrogateEstimate(
            samples=0, successes=0, rate=1.0, lower_bound=1.0, confidence=confidence,
            delta=delta, epsilon=epsilon, status=SurrogateStatus.PASS,
        )

    rng = np.random.default_rng(seed)
    successes = 0
    failures = 0
    for i in range(n_samples):
        trace, omega_true = sampler.sample(rng)
        try:
            mined = continuous_mine(trace, structure, cfg, initial=omega_true)
        except (MiningConvergenceError, DivergenceError, StepBoundError) as e:
            logger.warning(f"Sample {i}: mining failed ({e}); counted as a violation")
            failures += 1
            continue
        reference = [omega_true] * len(mined)
        gap = abs(robustness(formula, reference, atoms=atoms).value - robustness(formula, mined, atoms=atoms).value)
        if gap <= delta:
            successes += 1
        else:
            logger.debug(f"Sample {i}: robustness gap {gap:.4g} > {delta:g}")

    rate = successes / n_samples
    lower = clopper_pearson_lower(successes, n_samples, confidence)
    if epsilon == 0.0:
        status = SurrogateStatus.INCONCLUSIVE
    elif lower >= 1.0 - epsilon:
        status = SurrogateStatus.PASS
    elif rate < 1.0 - epsilon:
        status = SurrogateStatus.FAIL
    else:
        status = SurrogateStatus.INCONCLUSIVE
    logger.info(
        f"Surrogate check: {successes}/{n_samples} within delta={delta:g} "
        f"(lower bound {lower:.4f}, target {1.0 - epsilon:.4f}) -> {status.value}"
    )
    return SurrogateEstimate(
        samples=n_samples,
        successes=successes,
        rate=rate,
        lower_bound=lower,
        confidence=confidence,
        delta=delta,
        epsilon=epsilon,
        status=status,
        mining_failures=failures,
    )
