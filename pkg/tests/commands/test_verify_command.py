import json
from pathlib import Path

DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "default.json"


def test_verify_toy(invoke, write_config, toy_config, tmp_path):
    """Test that every check passes on the point-mass toy."""
    out = tmp_path / "out"
    result = invoke("verify", write_config(toy_config), "--out-dir", out)
    assert result.exit_code == 0, result.output
    assert "passed" in result.output

    report = json.loads((out / "verify.json").read_text())
    assert report["passed"] is True
    assert report["violations"] == []
    assert report["certification"]["passed"] is True
    assert abs(report["taylor"]["slope"] - 2.0) < 1e-6

    names = {check["name"] for check in report["checks"]}
    assert {"lemma1", "lemma2", "lemma3", "descent", "estimator", "taylor_slope", "target", "round_trip"} <= names
    assert sum(check["name"] == "lemma1" for check in report["checks"]) == 5


def test_verify_reports_violation(invoke, write_config, toy_config, tmp_path):
    """Test that a slope range excluding 2 fails with exit 1 and is recorded."""
    config = {**toy_config, "verification": {**toy_config["verification"], "taylor_slope_range": [2.5, 2.6]}}
    out = tmp_path / "out"
    result = invoke("verify", write_config(config), "--out-dir", out)
    assert result.exit_code == 1

    report = json.loads((out / "verify.json").read_text())
    assert report["passed"] is False
    assert len(report["violations"]) == 1
    assert report["violations"][0].startswith("taylor_slope")


def test_verify_is_deterministic(invoke, write_config, toy_config, tmp_path):
    path = write_config(toy_config)
    for name in ("a", "b"):
        assert invoke("verify", path, "--out-dir", tmp_path / name, "--seed", 5).exit_code == 0
    assert (tmp_path / "a" / "verify.json").read_bytes() == (tmp_path / "b" / "verify.json").read_bytes()


def test_verify_default_config(invoke, tmp_path):
    """Test the shipped bounded-sine config: every bound, the decay and the slope hold."""
    out = tmp_path / "out"
    result = invoke("verify", DEFAULT_CONFIG, "--out-dir", out)
    assert result.exit_code == 0, result.output

    report = json.loads((out / "verify.json").read_text())
    assert report["passed"] is True
    assert 1.9 <= report["taylor"]["slope"] <= 2.1
    assert sum(check["name"] == "lemma1" for check in report["checks"]) == 100
    names = {check["name"] for check in report["checks"]}
    assert {"lemma3", "descent", "decay", "psi_monotone", "feature_mean", "round_trip"} <= names


def test_verify_drops_uncertified_taylor_steps(invoke, write_config, tmp_path):
    """Test that a far target keeps eps = 0.1 out of the Taylor fit and still writes a report."""
    config = json.loads(DEFAULT_CONFIG.read_text())
    config["target"] = {"kind": "gaussian", "mean": [6.0, 6.0]}
    config["n_particles"] = 200
    config["verification"] = {"trials": 2, "n_particles": 200, "pair_samples": 1000}
    out = tmp_path / "out"

    # Call the command
    result = invoke("verify", write_config(config), "--out-dir", out)

    # Verify results
    assert result.exit_code in (0, 1), result.output
    report = json.loads((out / "verify.json").read_text())
    [slope] = [check for check in report["checks"] if check["name"] == "taylor_slope"]
    assert slope["params"]["uncertified"] == 1.0
    if report["taylor"] is not None:
        assert max(report["taylor"]["epsilons"]) <= 0.05


def test_verify_records_failed_build(invoke, write_config, toy_config, tmp_path):
    """Test that an infeasible schedule becomes a failed target check, not a schedule exit."""
    config = {**toy_config, "schedule": "first_order", "safety_c": 1e-6, "max_safety_doublings": 0}
    out = tmp_path / "out"
    result = invoke("verify", write_config(config), "--out-dir", out)
    assert result.exit_code == 1

    report = json.loads((out / "verify.json").read_text())
    assert len(report["violations"]) == 1
    assert report["violations"][0].startswith("target")


def test_verify_estimator_tolerance_is_absolute(invoke, write_config, toy_config, tmp_path):
    out = tmp_path / "out"
    assert invoke("verify", write_config(toy_config), "--out-dir", out).exit_code == 0
    report = json.loads((out / "verify.json").read_text())
    estimators = [check for check in report["checks"] if check["name"] == "estimator"]
    assert len(estimators) == 3
    assert all(check["rhs"] == 1e-10 for check in estimators)
