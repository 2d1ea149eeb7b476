import logging
import sys
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.models.coefficients import CoefficientSequence, CoefficientVector
from src.models.formula import Comparator, RobustnessValue, StlFormula, StlOp
from src.utils.errors import PreconditionError, StructureMismatchError, ZeroReferenceError

logger = logging.getLogger(__name__)

# Robustness of `true`; finite so that its negation stays finite too
TRUE_ROBUSTNESS = sys.float_info.max

Frame = Any
AtomFn = Callable[[Frame], float]
Frames = Union[CoefficientSequence, Sequence[Frame]]


class AtomRegistry:
    """Named real-valued functions over one frame.

    Besides explicitly registered names, three prefixes resolve on the fly:
    ``coef:<label>`` reads a coefficient, ``state:<name>`` reads a sample
    dictionary, ``const:<value>`` is a constant.
    """

    def __init__(self):
        self._functions: Dict[str, AtomFn] = {}

    def register(self, name: str, fn: AtomFn) -> None:
        if ":" in name:
            raise ValueError(f"registered atom names cannot contain ':' ({name})")
        self._functions[name] = fn

    def unregister(self, name: str) -> None:
        self._functions.pop(name, None)

    def names(self) -> List[str]:
        return sorted(self._functions)

    def resolve(self, name: str, overrides: Optional[Mapping[str, AtomFn]] = None) -> AtomFn:
        if overrides and name in overrides:
            return overrides[name]
        if name in self._functions:
            return self._functions[name]
        prefix, _, arg = name.partition(":")
        if prefix == "coef" and arg:
            return lambda frame: float(frame[arg])
        if prefix == "state" and arg:
            return lambda frame: float(frame[arg])
        if prefix == "const" and arg:
            value = float(arg)
            return lambda frame: value
        raise PreconditionError(f"atom '{name}' is not registered")


def deviation_residue(omega: CoefficientVector, omega_e: CoefficientVector, alpha: float = 0.0) -> float:
    """max_j |(omega[j] - omega_e[j]) / omega_e[j]| - alpha."""
    if not omega.same_structure(omega_e):
        raise StructureMismatchError(
            f"cannot compare coefficient vectors of structures {omega.structure_hash} and {omega_e.structure_hash}"
        )
    reference = np.asarray(omega_e.values, dtype=float)
    zero = np.flatnonzero(reference == 0.0)
    if zero.size:
        index = int(zero[0])
        raise ZeroReferenceError(index, omega_e.labels[index])
    deviation = np.abs((np.asarray(omega.values, dtype=float) - reference) / reference)
    return float(np.max(deviation) - alpha)


def residue_atom(omega_e: CoefficientVector, alpha: float = 0.0) -> AtomFn:
    """Atom function computing the deviation residue of a frame against omega_e."""
    return lambda frame: deviation_residue(frame, omega_e, alpha)


class _Evaluator:
    def __init__(self, frames: Sequence[Frame], registry: AtomRegistry, overrides: Optional[Mapping[str, AtomFn]]):
        self.frames = frames
        self.registry = registry
        self.overrides = overrides
        self.cache: Dict[tuple, float] = {}

    def _window(self, node: StlFormula, t: int) -> range:
        lo, hi = node.interval
        if t + hi >= len(self.frames):
            raise PreconditionError(
                f"interval [{lo}, {hi}] at t={t} runs past the last frame ({len(self.frames) - 1})"
            )
        return range(t + lo, t + hi + 1)

    def rho(self, node: StlFormula, t: int) -> float:
        key = (id(node), t)
        if key in self.cache:
            return self.cache[key]
        op = node.op
        if op == StlOp.TRUE:
            value = TRUE_ROBUSTNESS
        elif op == StlOp.ATOM:
            fn = self.registry.resolve(node.atom.fn, self.overrides)
            f = fn(self.frames[t])
            value = f - node.atom.c if node.atom.cmp == Comparator.GE else node.atom.c - f
        elif op == StlOp.NOT:
            value = -self.rho(node.args[0], t)
        elif op == StlOp.AND:
            value = min(self.rho(arg, t) for arg in node.args)
        elif op == StlOp.OR:
            value = max(self.rho(arg, t) for arg in node.args)
        elif op == StlOp.EVENTUALLY:
            value = max(self.rho(node.args[0], s) for s in self._window(node, t))
        elif op == StlOp.GLOBALLY:
            value = min(self.rho(node.args[0], s) for s in self._window(node, t))
        else:
            left, right = node.args
            value = -TRUE_ROBUSTNESS
            prefix = TRUE_ROBUSTNESS
            window = self._window(node, t)
            # prefix = min of left over [t, s), updated as s advances
            for s in range(t, window.stop):
                if s >= window.start:
                    value = max(value, min(self.rho(right, s), prefix))
                prefix = min(prefix, self.rho(left, s))
        self.cache[key] = float(value)
        return float(value)


def _frames(sequence: Frames) -> Sequence[Frame]:
    if isinstance(sequence, CoefficientSequence):
        return sequence.omegas
    return sequence


def robustness(
    formula: StlFormula,
    sequence: Frames,
    t: int = 0,
    atoms: Optional[Mapping[str, AtomFn]] = None,
    registry: Optional["AtomRegistry"] = None,
) -> RobustnessValue:
    """Quantitative semantics of formula at frame t.

    ``sequence`` is a coefficient sequence or any list of frames the atoms understand.
    """
    frames = _frames(sequence)
    if not 0 <= t < len(frames):
        raise PreconditionError(f"t={t} is outside the sequence (length {len(frames)})")
    evaluator = _Evaluator(frames, registry or atom_registry, atoms)
    value = evaluator.rho(formula, t)
    return RobustnessValue(value=value, formula_id=formula.name or formula.op.value, t=t)


def robustness_series(
    formula: StlFormula,
    sequence: Frames,
    atoms: Optional[Mapping[str, AtomFn]] = None,
) -> List[float]:
    """Robustness at every frame where the formula's horizon fits."""
    frames = _frames(sequence)
    evaluator = _Evaluator(frames, atom_registry, atoms)
    last = len(frames) - formula.horizon
    return [evaluator.rho(formula, t) for t in range(max(last, 0))]


def interval_formula(lo: float, hi: float, fn: str = "residue") -> StlFormula:
    """fn stays within [lo, hi]; robustness is min(f - lo, hi - f)."""
    return StlFormula.conj(StlFormula.atomic(fn, ">=", lo), StlFormula.atomic(fn, "<=", hi))


# Global instance
atom_registry = AtomRegistry()
