import numpy as np
import pytest
from pydantic import ValidationError

from src.models.coefficients import CoefficientSequence, CoefficientVector, CoefficientWindow
from src.models.formula import StlFormula
from src.tools.stl import (
    AtomRegistry,
    TRUE_ROBUSTNESS,
    atom_registry,
    deviation_residue,
    interval_formula,
    residue_atom,
    robustness,
    robustness_series,
)
from src.utils.errors import PreconditionError, StructureMismatchError, ZeroReferenceError


def _frames(**columns):
    names = list(columns)
    return [dict(zip(names, values)) for values in zip(*columns.values())]


def _vector(values, labels=("a", "b"), structure_hash="h"):
    return CoefficientVector(structure_hash=structure_hash, labels=list(labels), values=values)


def test_constant_atom():
    assert robustness(StlFormula.atomic("const:5", ">=", 3), [{}]).value == pytest.approx(2.0)
    assert robustness(StlFormula.atomic("const:5", "<=", 3), [{}]).value == pytest.approx(-2.0)


def test_true_is_finite_and_negates():
    assert robustness(StlFormula.true(), [{}]).value == TRUE_ROBUSTNESS
    assert robustness(StlFormula.negate(StlFormula.true()), [{}]).value == -TRUE_ROBUSTNESS


def test_globally_and_eventually_take_min_and_max():
    frames = _frames(x=[2.0, -1.0, 4.0])
    atom = StlFormula.atomic("state:x", ">=", 0.0)
    assert robustness(StlFormula.globally(0, 2, atom), frames).value == -1.0
    assert robustness(StlFormula.eventually(0, 2, atom), frames).value == 4.0
    assert robustness(StlFormula.globally(1, 1, atom), frames).value == -1.0


def test_boolean_connectives():
    frames = _frames(x=[1.0], y=[3.0])
    x = StlFormula.atomic("state:x", ">=", 0.0)
    y = StlFormula.atomic("state:y", ">=", 0.0)
    assert robustness(StlFormula.conj(x, y), frames).value == 1.0
    assert robustness(StlFormula.disj(x, y), frames).value == 3.0


def _until_by_enumeration(left, right, t, lo, hi):
    best = -np.inf
    for s in range(t + lo, t + hi + 1):
        prefix = min(left[t:s], default=np.inf)
        best = max(best, min(right[s], prefix))
    return best


@pytest.mark.parametrize("interval", [(0, 3), (1, 3), (2, 2), (0, 0)])
def test_until_matches_enumeration(interval):
    rng = np.random.default_rng(sum(interval))
    left = rng.normal(size=4).round(3).tolist()
    right = rng.normal(size=4).round(3).tolist()
    frames = _frames(l=left, r=right)
    formula = StlFormula.until(
        interval[0], interval[1], StlFormula.atomic("state:l"), StlFormula.atomic("state:r")
    )
    expected = _until_by_enumeration(left, right, 0, *interval)
    assert robustness(formula, frames).value == pytest.approx(expected)


def test_negation_flips_sign_on_nested_formulas():
    rng = np.random.default_rng(0)
    frames = _frames(x=rng.normal(size=6).tolist(), y=rng.normal(size=6).tolist())
    x = StlFormula.atomic("state:x", ">=", 0.1)
    y = StlFormula.atomic("state:y", "<=", 0.2)
    formulas = [
        x,
        StlFormula.conj(x, y),
        StlFormula.eventually(0, 3, StlFormula.disj(x, StlFormula.negate(y))),
        StlFormula.until(0, 4, x, y),
    ]
    for formula in formulas:
        for t in range(2):
            value = robustness(formula, frames, t).value
            assert robustness(StlFormula.negate(formula), frames, t).value == -value


def test_atom_robustness_is_monotone_in_the_signal():
    atom = StlFormula.atomic("state:x", ">=", 1.0)
    values = [robustness(atom, [{"x": x}]).value for x in np.linspace(-2, 2, 9)]
    assert values == sorted(values)


def test_out_of_range_evaluation_is_rejected():
    frames = _frames(x=[1.0, 2.0])
    atom = StlFormula.atomic("state:x")
    with pytest.raises(PreconditionError):
        robustness(atom, frames, t=2)
    with pytest.raises(PreconditionError):
        robustness(StlFormula.globally(0, 2, atom), frames)


def test_formula_validation():
    with pytest.raises(ValidationError):
        StlFormula(op="globally", args=[StlFormula.true()])
    with pytest.raises(ValidationError):
        StlFormula.globally(3, 1, StlFormula.true())
    with pytest.raises(ValidationError):
        StlFormula(op="not", args=[])
    with pytest.raises(ValidationError):
        StlFormula(op="atom")


def test_formula_json_layout():
    formula = StlFormula.model_validate(
        {
            "op": "globally",
            "interval": [0, 2],
            "args": [{"op": "atom", "atom": {"fn": "state:G", "cmp": ">=", "c": 70}}],
        }
    )
    assert formula.horizon == 2
    assert formula.depth == 2
    assert [atom.fn for atom in formula.atoms()] == ["state:G"]


def test_registry_resolution_and_overrides():
    registry = AtomRegistry()
    registry.register("double", lambda frame: 2.0 * frame["x"])
    assert registry.names() == ["double"]
    formula = StlFormula.atomic("double", ">=", 1.0)
    assert robustness(formula, [{"x": 3.0}], registry=registry).value == 5.0
    assert robustness(formula, [{"x": 3.0}], atoms={"double": lambda frame: 0.0}, registry=registry).value == -1.0
    registry.unregister("double")
    with pytest.raises(PreconditionError):
        robustness(formula, [{"x": 3.0}], registry=registry)
    with pytest.raises(ValueError):
        registry.register("state:x", lambda frame: 0.0)


def test_unregistered_atom_is_rejected():
    assert "nothing-here" not in atom_registry.names()
    with pytest.raises(PreconditionError):
        robustness(StlFormula.atomic("nothing-here"), [{}])


def test_coefficient_atoms_over_a_sequence():
    windows = [
        CoefficientWindow(index=i, start=10 * i, length=10, t0=float(i), omega=_vector([v, 1.0]), loss=0.0, distance=0.0)
        for i, v in enumerate([0.5, 0.7, 0.2])
    ]
    sequence = CoefficientSequence(structure_hash="h", windows=windows)
    formula = StlFormula.globally(0, 2, StlFormula.atomic("coef:a", ">=", 0.3))
    assert robustness(formula, sequence).value == pytest.approx(-0.1)
    series = robustness_series(StlFormula.atomic("coef:a", ">=", 0.3), sequence)
    assert series == pytest.approx([0.2, 0.4, -0.1])


def test_interval_formula():
    formula = interval_formula(-1.0, 2.0, fn="state:x")
    assert robustness(formula, [{"x": 0.5}]).value == pytest.approx(1.5)
    assert robustness(formula, [{"x": 3.0}]).value == pytest.approx(-1.0)


# Deviation residue

def test_residue_of_identical_vectors_is_zero():
    omega = _vector([2.0, 4.0])
    assert deviation_residue(omega, omega) == 0.0


def test_residue_example():
    assert deviation_residue(_vector([2.2, 4.2]), _vector([2.0, 4.0])) == pytest.approx(0.1)
    assert deviation_residue(_vector([2.2, 4.2]), _vector([2.0, 4.0]), alpha=0.05) == pytest.approx(0.05)


def test_residue_is_not_symmetric():
    omega, reference = _vector([2.2, 4.2]), _vector([2.0, 4.0])
    assert deviation_residue(omega, reference) != pytest.approx(deviation_residue(reference, omega))
    assert deviation_residue(reference, omega) == pytest.approx(0.2 / 2.2)


def test_residue_is_positive_away_from_the_reference():
    rng = np.random.default_rng(1)
    reference = _vector([1.5, -0.3])
    for _ in range(20):
        values = rng.normal(size=2)
        assert deviation_residue(_vector(values), reference) > 0.0


def test_residue_rejects_zero_reference_entries():
    with pytest.raises(ZeroReferenceError) as info:
        deviation_residue(_vector([1.0, 1.0]), _vector([1.0, 0.0]))
    assert info.value.index == 1
    assert "b" in str(info.value)


def test_residue_rejects_foreign_structures():
    with pytest.raises(StructureMismatchError):
        deviation_residue(_vector([1.0, 1.0]), _vector([1.0, 1.0], structure_hash="other"))


def test_residue_atom_feeds_robustness():
    reference = _vector([2.0, 4.0])
    formula = interval_formula(0.0, 0.05)
    atoms = {"residue": residue_atom(reference)}
    assert robustness(formula, [_vector([2.2, 4.2])], atoms=atoms).value == pytest.approx(-0.05)
    assert robustness(formula, [_vector([2.02, 4.0])], atoms=atoms).value == pytest.approx(0.01)


# Randomized comparison against a direct recursive evaluator

def _random_formula(rng, depth, horizon):
    """Random formula of at most `depth` levels looking at most `horizon` frames ahead."""
    leaves = ["true", "atom"]
    inner = ["not", "and", "or"] + (["eventually", "globally", "until"] if horizon > 0 else [])
    op = rng.choice(leaves if depth == 1 else leaves + inner)
    if op == "true":
        return StlFormula.true()
    if op == "atom":
        return StlFormula.atomic(str(rng.choice(["state:x", "state:y"])), str(rng.choice([">=", "<="])), float(rng.normal()))
    if op == "not":
        return StlFormula.negate(_random_formula(rng, depth - 1, horizon))
    if op in ("and", "or"):
        args = [_random_formula(rng, depth - 1, horizon) for _ in range(int(rng.integers(1, 4)))]
        return StlFormula.conj(*args) if op == "and" else StlFormula.disj(*args)
    hi = int(rng.integers(0, horizon + 1))
    lo = int(rng.integers(0, hi + 1))
    if op == "until":
        left = _random_formula(rng, depth - 1, horizon - hi)
        right = _random_formula(rng, depth - 1, horizon - hi)
        return StlFormula.until(lo, hi, left, right)
    child = _random_formula(rng, depth - 1, horizon - hi)
    return (StlFormula.eventually if op == "eventually" else StlFormula.globally)(lo, hi, child)


def _oracle(formula, frames, t):
    op = formula.op.value
    if op == "true":
        return TRUE_ROBUSTNESS
    if op == "atom":
        f = frames[t][formula.atom.fn.split(":")[1]]
        return f - formula.atom.c if formula.atom.cmp.value == ">=" else formula.atom.c - f
    if op == "not":
        return -_oracle(formula.args[0], frames, t)
    if op == "and":
        return min(_oracle(arg, frames, t) for arg in formula.args)
    if op == "or":
        return max(_oracle(arg, frames, t) for arg in formula.args)
    lo, hi = formula.interval
    if op == "eventually":
        return max(_oracle(formula.args[0], frames, s) for s in range(t + lo, t + hi + 1))
    if op == "globally":
        return min(_oracle(formula.args[0], frames, s) for s in range(t + lo, t + hi + 1))
    left, right = formula.args
    return max(
        min([_oracle(right, frames, s)] + [_oracle(left, frames, r) for r in range(t, s)])
        for s in range(t + lo, t + hi + 1)
    )


@pytest.mark.parametrize("seed", range(20))
def test_random_formulas_match_the_recursive_definition(seed):
    rng = np.random.default_rng(seed)
    for _ in range(25):
        length = int(rng.integers(1, 7))
        frames = _frames(x=rng.normal(size=length).tolist(), y=rng.normal(size=length).tolist())
        formula = _random_formula(rng, int(rng.integers(1, 4)), length - 1)
        assert formula.depth <= 3
        assert formula.horizon <= length - 1
        for t in range(length - formula.horizon):
            assert robustness(formula, frames, t).value == pytest.approx(_oracle(formula, frames, t))
