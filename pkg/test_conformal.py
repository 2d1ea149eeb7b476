import numpy as np
import pytest

from conftest import LBFGS, scalar_trace
from src.models.coefficients import CoefficientSequence, CoefficientVector, CoefficientWindow
from src.models.conformal import CalibrationProfile, CenterPolicy, VerdictLabel
from src.tools.conformal import (
    calibrate,
    conformal_rank,
    detect,
    detect_sequence,
    profile_from_residues,
    split_error_free,
)
from src.tools.dih_rnn import continuous_mine
from src.utils.errors import PreconditionError


def _vector(values, labels=("a", "b")):
    return CoefficientVector(structure_hash="h", labels=list(labels), values=values)


# Splitting

def test_split_sizes():
    train, test = split_error_free(list(range(6)), seed=0)
    assert (len(train), len(test)) == (3, 3)
    train, test = split_error_free(list(range(7)), seed=0)
    assert (len(train), len(test)) == (3, 4)
    assert sorted(train + test) == list(range(7))


def test_split_is_seeded():
    items = list("abcdefghij")
    assert split_error_free(items, seed=3) == split_error_free(items, seed=3)
    assert split_error_free(items, seed=3) != split_error_free(items, seed=4)


def test_split_needs_two_units():
    with pytest.raises(PreconditionError):
        split_error_free(["only"])


# Conformal range

def test_conformal_rank():
    assert conformal_rank(8, 0.1) == 5
    assert conformal_rank(20, 0.1) == 10
    assert conformal_rank(6, 0.5) == 2


def test_rank_beyond_the_residues_is_clamped_with_a_warning():
    warnings = []
    profile = profile_from_residues(_vector([1.0, 1.0]), [0.3, 0.1, 0.4, 0.2], 8, 0.1, warnings=warnings)
    assert profile.rank == 4
    assert profile.d == pytest.approx(0.4)
    assert profile.residues == [0.1, 0.2, 0.3, 0.4]
    assert profile.interval == pytest.approx((-0.15, 0.65))
    assert len(warnings) == 1
    assert "clamped" in warnings[0]


def test_zero_center_policy():
    profile = profile_from_residues(
        _vector([1.0, 1.0]), [0.1, 0.2, 0.3, 0.4], 4, 0.1, center_policy=CenterPolicy.ZERO
    )
    assert profile.rank == 3
    assert profile.interval == pytest.approx((-0.3, 0.3))


def test_identical_residues_give_a_zero_range():
    profile = profile_from_residues(_vector([1.0, 1.0]), [0.0] * 5, 10, 0.1)
    assert profile.d == 0.0
    assert profile.interval == (0.0, 0.0)
    verdict = detect(_vector([1.0, 1.0]), profile)
    assert verdict.label == VerdictLabel.NOT_DETECTED


def test_profile_preconditions():
    with pytest.raises(PreconditionError):
        profile_from_residues(_vector([1.0, 1.0]), [], 4)
    with pytest.raises(PreconditionError):
        profile_from_residues(_vector([1.0, 1.0]), [0.1], 4, miscoverage=1.0)


def test_profile_rejects_reversed_intervals():
    with pytest.raises(ValueError):
        CalibrationProfile(omega_e=_vector([1.0, 1.0]), residues=[0.1], d=0.1, interval=(1.0, 0.0), miscoverage=0.1)


# Detection

@pytest.fixture
def profile():
    # rank ceil(3 * 0.9) = 3, so d = 0.03 around the median 0.025
    return profile_from_residues(_vector([2.0, 4.0]), [0.01, 0.02, 0.03, 0.04], 4, 0.1)


def test_detect_outside_and_inside(profile):
    assert profile.interval == pytest.approx((-0.005, 0.055))
    outside = detect(_vector([2.2, 4.2]), profile, window=3, t0=12.0)
    assert outside.label == VerdictLabel.DETECTED
    assert outside.detected
    assert outside.residue == pytest.approx(0.1)
    assert (outside.window, outside.t0) == (3, 12.0)
    inside = detect(_vector([2.02, 4.0]), profile)
    assert inside.label == VerdictLabel.NOT_DETECTED


def test_detect_sequence_labels_every_window(profile):
    windows = [
        CoefficientWindow(index=i, start=10 * i, length=10, t0=float(i), omega=_vector(values), loss=0.0, distance=0.0)
        for i, values in enumerate([[2.02, 4.0], [2.2, 4.2], [2.0, 4.1]])
    ]
    verdicts = detect_sequence(CoefficientSequence(structure_hash="h", windows=windows), profile)
    assert [v.label for v in verdicts] == [VerdictLabel.NOT_DETECTED, VerdictLabel.DETECTED, VerdictLabel.NOT_DETECTED]
    assert [v.window for v in verdicts] == [0, 1, 2]


def test_wider_ranges_detect_less():
    reference = _vector([1.0, 1.0])
    candidates = [_vector([1.0 + r, 1.0]) for r in np.linspace(0.0, 0.5, 11)]
    previous = None
    for d in (0.05, 0.1, 0.2, 0.4):
        profile = profile_from_residues(reference, [d], 1, 0.1, center_policy=CenterPolicy.ZERO)
        detected = {i for i, omega in enumerate(candidates) if detect(omega, profile).detected}
        if previous is not None:
            assert detected <= previous
        previous = detected


def test_error_free_coverage():
    rng = np.random.default_rng(0)
    reference = _vector([1.0], labels=("a",))
    calibration = rng.exponential(1.0, size=200).tolist()
    profile = profile_from_residues(reference, calibration, 2 * len(calibration), 0.1)
    fresh = rng.exponential(1.0, size=2000)
    covered = np.mean([not detect(_vector([1.0 + r], labels=("a",)), profile).detected for r in fresh])
    assert covered >= 0.85


def test_profile_json_round_trip(scalar_structure):
    omega_e = CoefficientVector(structure_hash=scalar_structure.structure_hash, labels=scalar_structure.labels, values=[-0.5, 1.0])
    profile = profile_from_residues(omega_e, [0.02, 0.01], 4, 0.2)
    data = profile.to_json_dict()
    assert data["omega_e"] == {"a": -0.5, "b": 1.0}
    restored = CalibrationProfile.from_json_dict(data, scalar_structure)
    np.testing.assert_array_equal(restored.omega_e.values, profile.omega_e.values)
    assert restored.residues == profile.residues
    assert restored.interval == profile.interval
    assert (restored.rank, restored.n_total) == (profile.rank, profile.n_total)


# End to end on a scalar plant

def test_calibrate_then_detect_changed_dynamics(scalar_structure):
    train = [scalar_trace(seed=k) for k in range(2)]
    test = [scalar_trace(seed=k) for k in range(2, 6)]
    profile = calibrate(train, test, scalar_structure, LBFGS, miscoverage=0.1)
    np.testing.assert_allclose(profile.omega_e.values, [-0.5, 1.0], rtol=1e-3)
    assert len(profile.residues) == 4
    assert profile.n_total == 6
    assert profile.rank == 4
    assert profile.d < 0.01

    faulty = continuous_mine(scalar_trace(a=-0.65, seed=7), scalar_structure, LBFGS, initial=profile.omega_e)
    verdicts = detect_sequence(faulty, profile)
    assert [v.label for v in verdicts] == [VerdictLabel.DETECTED]
    assert verdicts[0].residue == pytest.approx(0.3, abs=0.01)


def test_calibrate_needs_both_sets(scalar_structure):
    with pytest.raises(PreconditionError):
        calibrate([scalar_trace()], [], scalar_structure, LBFGS)
