import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import LBFGS, SCALAR_LABELS, scalar_system, scalar_trace
from src.models.coefficients import CoefficientVector
from src.models.system import SystemTemplate, Trace, TraceSegment, Trajectory
from src.orchestrator.cli import EXIT_DETECTION_MINING, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from src.storage.artifact_store import store
from src.tools.conformal import profile_from_residues
from src.tools.dih_rnn import induce_structure

CONFIGS = Path(__file__).parent / "configs"


def _write_case(path: Path, **mining) -> Path:
    template = SystemTemplate.from_system(scalar_system(), labels=SCALAR_LABELS).to_json_dict()
    cfg = LBFGS.model_copy(update={"window_length": 50, "window_stride": 50, **mining})
    case = {
        "name": "scalar",
        "plant": "bmm",
        "template": template,
        "pipeline": {"mining": cfg.model_dump(mode="json")},
    }
    path.write_text(json.dumps(case))
    return path


def _write_trace(path: Path, seed: int = 0, noise: float = 0.0) -> Path:
    trace = scalar_trace(seed=seed)
    if noise:
        segment = trace.segments[0]
        rng = np.random.default_rng(seed)
        states = segment.trajectory.states + rng.normal(0.0, noise, size=segment.trajectory.states.shape)
        trace = Trace(segments=[TraceSegment(inputs=segment.inputs, trajectory=Trajectory(tau=segment.tau, states=states))])
    store.save_trace(path, trace, scalar_system())
    return path


def _write_profile(path: Path) -> Path:
    template = SystemTemplate.from_system(scalar_system(), labels=SCALAR_LABELS)
    structure = induce_structure(template)
    omega_e = CoefficientVector(structure_hash=structure.structure_hash, labels=structure.labels, values=[-0.5, 1.0])
    profile = profile_from_residues(omega_e, [0.01, 0.02, 0.03, 0.04], 4, 0.1)
    path.write_text(json.dumps(profile.to_json_dict()))
    return path


def _manifest(out: Path) -> dict:
    return json.loads(store.manifest_path(out).read_text())


# Exit codes

def test_report_without_verdicts_succeeds(tmp_path):
    out = tmp_path / "report.json"
    assert main(["report", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["scenarios"] == []
    manifest = _manifest(out)
    assert manifest["status"] == "completed"
    assert manifest["warnings"]


def test_argument_errors_exit_with_usage(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["mine", "--out", str(tmp_path / "x.json")])
    assert info.value.code == EXIT_USAGE


def test_missing_or_invalid_config(tmp_path):
    trace = _write_trace(tmp_path / "t.csv")
    out = str(tmp_path / "seq.json")
    assert main(["mine", "--out", out, str(trace)]) == EXIT_USAGE
    assert main(["mine", "--config", str(tmp_path / "nope.json"), "--out", out, str(trace)]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "plant": "submarine"}))
    assert main(["mine", "--config", str(bad), "--out", out, str(trace)]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["mine", "--config", str(broken), "--out", out, str(trace)]) == EXIT_USAGE


def test_mine_writes_a_sequence(tmp_path):
    case = _write_case(tmp_path / "case.json")
    trace = _write_trace(tmp_path / "t.csv")
    out = tmp_path / "seq.json"
    assert main(["mine", "--config", str(case), "--out", str(out), str(trace)]) == EXIT_OK
    payload = json.loads(out.read_text())
    assert len(payload["windows"]) == 1
    assert payload["windows"][0]["omega"]["a"] == pytest.approx(-0.5, rel=1e-3)
    assert payload["physical"][0] == payload["windows"][0]["omega"]
    assert _manifest(out)["outputs"][str(out)] == store.sha256(out)


def test_unreachable_distance_is_a_numerical_failure(tmp_path):
    case = _write_case(tmp_path / "case.json", upsilon=1e-6)
    trace = _write_trace(tmp_path / "t.csv", noise=0.2)
    out = tmp_path / "seq.json"
    assert main(["mine", "--config", str(case), "--out", str(out), str(trace)]) == EXIT_NUMERICAL
    assert not out.exists()
    assert _manifest(out)["status"] == "failed"


def test_detect_labels_every_trace(tmp_path):
    case = _write_case(tmp_path / "case.json")
    profile = _write_profile(tmp_path / "profile.json")
    clean = _write_trace(tmp_path / "clean.csv", seed=1)
    out = tmp_path / "verdicts.csv"
    assert main(["detect", "--config", str(case), "--out", str(out), str(profile), str(clean)]) == EXIT_OK
    table = pd.read_csv(out)
    assert list(table.columns) == ["scenario", "window", "t0", "residue", "lo", "hi", "label"]
    assert table["scenario"].tolist() == ["clean"]
    assert table["label"].tolist() == ["ND"]


def test_detect_mining_failures_exit_with_three(tmp_path):
    case = _write_case(tmp_path / "case.json", upsilon=1e-6)
    profile = _write_profile(tmp_path / "profile.json")
    noisy = _write_trace(tmp_path / "noisy.csv", noise=0.2)
    out = tmp_path / "verdicts.csv"
    assert main(["detect", "--config", str(case), "--out", str(out), str(profile), str(noisy)]) == EXIT_DETECTION_MINING
    manifest = _manifest(out)
    assert manifest["errors"][0]["scenario"] == "noisy"
    assert manifest["status"] == "failed"


# Simulation

def test_simulate_one_scenario(tmp_path):
    out = tmp_path / "aid.csv"
    assert main(["simulate", "--config", str(CONFIGS / "scenarios" / "aid_nominal.json"), "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out)
    assert list(table.columns) == ["t", "insulin", "meal", "hidden_i", "hidden_i_s", "G"]
    assert len(table) == 241
    assert _manifest(out)["command"] == "simulate"


def test_simulate_a_family(tmp_path):
    config = tmp_path / "family.json"
    config.write_text(json.dumps({"family": "brake-fault", "seed": 0}))
    out = tmp_path / "traces"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    index = json.loads((out / "scenarios.json").read_text())
    assert len(index) == 11
    assert all(entry["fault"] == "q_overflow" for entry in index.values())
    assert len(list(out.glob("*.csv"))) == 11
    assert (out / "run.manifest.json").exists()


def test_configs_resolve_against_the_bundled_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "brake.csv"
    assert main(["simulate", "--config", "scenarios/brake_nominal.json", "--out", str(out)]) == EXIT_OK
    assert list(pd.read_csv(out).columns) == ["t", "jerk", "a", "v", "s"]


def test_unknown_family_is_a_config_error(tmp_path):
    config = tmp_path / "family.json"
    config.write_text(json.dumps({"family": "nope"}))
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "traces")]) == EXIT_USAGE


def test_simulation_is_reproducible(tmp_path):
    config = str(CONFIGS / "scenarios" / "pitch_nominal.json")
    paths = [tmp_path / f"run{i}.csv" for i in range(3)]
    for path, seed in zip(paths, ("3", "3", "4")):
        assert main(["simulate", "--config", config, "--out", str(path), "--seed", seed]) == EXIT_OK
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


# Report

def test_report_metrics_from_verdict_tables(tmp_path):
    coefficient = tmp_path / "verdicts.csv"
    store.save_table(
        coefficient,
        [
            {"scenario": "s1", "window": 0, "t0": 0.0, "residue": 0.01, "lo": 0.0, "hi": 0.05, "label": "ND"},
            {"scenario": "s1", "window": 1, "t0": 60.0, "residue": 0.2, "lo": 0.0, "hi": 0.05, "label": "D"},
            {"scenario": "s2", "window": 0, "t0": 0.0, "residue": 0.02, "lo": 0.0, "hi": 0.05, "label": "ND"},
            {"scenario": "s2", "window": 1, "t0": 60.0, "residue": 0.03, "lo": 0.0, "hi": 0.05, "label": "ND"},
        ],
        ["scenario", "window", "t0", "residue", "lo", "hi", "label"],
    )
    baseline = tmp_path / "baseline.csv"
    store.save_table(
        baseline,
        [
            {"scenario": "s1", "window": 2, "robustness": -3.0, "lo": 1.0, "hi": 9.0, "label": "D", "detect_time": 120.0},
            {"scenario": "s2", "window": None, "robustness": 4.0, "lo": 1.0, "hi": 9.0, "label": "ND", "detect_time": None},
        ],
        ["scenario", "window", "robustness", "lo", "hi", "label", "detect_time"],
    )
    index = tmp_path / "scenarios.json"
    index.write_text(json.dumps({"s1": {"fault": "insulin_blockade"}, "s2": {"fault": None}}))
    out = tmp_path / "report.json"
    assert main(["report", "--config", str(index), "--out", str(out), str(coefficient), str(baseline)]) == EXIT_OK

    report = json.loads(out.read_text())
    assert report["coefficient"] == {"tp": 1, "fp": 0, "fn": 0, "tn": 1, "tpr": 1.0, "ppv": 1.0}
    assert report["baseline"] == {"tp": 1, "fp": 0, "fn": 0, "tn": 1, "tpr": 1.0, "ppv": 1.0}
    assert report["latency"] == {"both_detected": 1, "coefficient_not_later": 1}
    first = report["scenarios"][0]
    assert (first["scenario"], first["window"], first["detect_time"]) == ("s1", 1, 60.0)
    assert out.with_suffix(".residues.svg").exists()
    assert out.with_suffix(".latency.svg").exists()


# Calibration and baseline

def test_calibrate_writes_a_profile(tmp_path):
    case = _write_case(tmp_path / "case.json")
    traces = tmp_path / "clean"
    for seed in range(4):
        _write_trace(traces / f"clean-{seed}.csv", seed=seed)
    out = tmp_path / "profile.json"
    assert main(["calibrate", "--config", str(case), "--out", str(out), str(traces)]) == EXIT_OK
    profile = json.loads(out.read_text())
    assert profile["omega_e"]["a"] == pytest.approx(-0.5, rel=1e-3)
    assert profile["n_total"] == 4
    assert len(profile["residues"]) == 2
    manifest = _manifest(out)
    assert len(manifest["metadata"]["train"]) == 2
    assert any("clamped" in w for w in manifest["warnings"])


def test_baseline_on_simulated_aid_traces(tmp_path):
    family = tmp_path / "family.json"
    family.write_text(json.dumps({"family": "aid-clean", "seed": 0}))
    traces = tmp_path / "traces"
    assert main(["simulate", "--config", str(family), "--out", str(traces)]) == EXIT_OK
    out = tmp_path / "baseline.csv"
    code = main(
        ["baseline", "--config", str(CONFIGS / "aid.json"), "--out", str(out), str(traces), str(traces / "aid-clean-00.csv")]
    )
    assert code == EXIT_OK
    table = pd.read_csv(out)
    assert list(table.columns) == ["scenario", "window", "robustness", "lo", "hi", "label", "detect_time"]
    assert table["scenario"].tolist() == ["aid-clean-00"]
    profile = json.loads(out.with_suffix(".profile.json").read_text())
    assert len(profile["scores"]) == 12 * 8
