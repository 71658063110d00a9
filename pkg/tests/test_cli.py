import json
from pathlib import Path

from sigmaflow.app import main
from sigmaflow.infra.artifacts import read_csv_rows
from sigmaflow.infra.journal import read_journal


SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def _write(path: Path, payload) -> Path:
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
    return path


def _summary(out: Path):
    return json.loads((out / "summary.json").read_text(encoding="utf-8"))


def test_toric_stability_reports_unstable_blowup(tmp_path):
    out = tmp_path / "out"
    config = SCRIPTS / "toric_blowup_unstable.json"
    assert main(["toric-stability", "--config", str(config), "--out", str(out)]) == 0
    summary = _summary(out)
    assert summary["verdict"] == "unstable"
    assert summary["witness"] == "E"
    faces = read_csv_rows(out / "faces.csv")
    assert {row["face"] for row in faces} >= {"D1", "D2", "E", "H"}
    assert main(["toric-stability", "--config", str(config), "--out", str(out), "--expect-stable"]) == 1


def test_malformed_json_is_input_error(tmp_path):
    config = _write(tmp_path / "bad.json", "{\"chi\": [1, 2,")
    assert main(["toric-stability", "--config", str(config), "--out", str(tmp_path / "out")]) == 2
    record = read_journal()[-1]
    assert record["status"] == 2
    assert record["summary"]["key_path"] == str(config)


def test_unknown_key_reports_key_path(tmp_path):
    data = json.loads((SCRIPTS / "toric_blowup_unstable.json").read_text(encoding="utf-8"))
    data["gamma"] = 1
    config = _write(tmp_path / "extra.json", data)
    assert main(["toric-stability", "--config", str(config), "--out", str(tmp_path / "out")]) == 2
    assert read_journal()[-1]["summary"]["key_path"] == "gamma"


def test_nested_domain_error_maps_to_section(tmp_path):
    config = _write(tmp_path / "op.json", {"operator": {"c": [1.0, 0.5], "zeta": 1}})
    assert main(["check-operator", "--config", str(config), "--out", str(tmp_path / "out")]) == 2
    assert read_journal()[-1]["summary"]["key_path"] == "operator"


def test_missing_config_and_usage_errors(tmp_path):
    assert main(["legendre", "--out", str(tmp_path / "out")]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["--version"]) == 0


def test_check_operator_writes_report(tmp_path):
    out = tmp_path / "out"
    config = _write(
        tmp_path / "op.json",
        {
            "operator": {"c": [1.0, 0.5, 0.25]},
            "samples": 100,
            "margins": {"c": 10.0, "spectra": [[1.0, 1.0, 1.0]]},
            "budget": {"delta": 1.0, "n": 2},
        },
    )
    assert main(["check-operator", "--config", str(config), "--out", str(out), "--seed", "4"]) == 0
    report = json.loads((out / "structural_report.json").read_text(encoding="utf-8"))
    assert report["seed"] == 4
    summary = _summary(out)
    assert summary["all_passed"] is True
    assert summary["epsilon_budget"] == 0.5
    assert summary["min_margin"] > 0


def test_flow_exit_status_follows_convergence(tmp_path):
    problem = {"n": 1, "N": 16, "G0": [[4.0]], "alpha": {"const": [[1.0]]}, "operator": {"c": [1.0]}}
    phi0 = {"modes": [{"amplitude": 0.05, "wave": [1]}]}
    short = _write(tmp_path / "short.json", {"problem": problem, "phi0": phi0, "t_max": 0.01})
    out = tmp_path / "short"
    assert main(["flow", "--config", str(short), "--out", str(out)]) == 1
    assert (out / "trace.csv").exists()
    assert _summary(out)["converged"] is False

    full = _write(tmp_path / "full.json", {"problem": problem, "phi0": phi0, "t_max": 50.0})
    out = tmp_path / "full"
    assert main(["flow", "--config", str(full), "--out", str(out)]) == 0
    rows = read_csv_rows(out / "phi.csv")
    assert len(rows) == 16
    assert _summary(out)["sup_violations"] == 0


def test_solve_model_on_interval(tmp_path):
    out = tmp_path / "out"
    config = _write(
        tmp_path / "model.json",
        {"problem": {"domain": {"kind": "ball", "center": [0.0], "radius": 1.0, "nodes": 33}, "b_or_d": 1.0}},
    )
    assert main(["solve-model", "--config", str(config), "--out", str(out)]) == 0
    rows = read_csv_rows(out / "solution.csv")
    assert all(abs(float(r["u"]) - (float(r["x0"]) ** 2 - 1) / 4) < 1e-8 for r in rows)
    assert read_csv_rows(out / "newton_log.csv")[-1]["residual"]


def test_verify_all_report_is_byte_identical(tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    assert main(["verify-all", "--only", "AC03", "--seed", "5", "--out", str(first)]) == 0
    assert main(["verify-all", "--only", "AC03", "--seed", "5", "--out", str(second)]) == 0
    assert (first / "verify_report.json").read_bytes() == (second / "verify_report.json").read_bytes()
    assert main(["verify-all", "--only", "AC99", "--out", str(first)]) == 2


def test_journal_records_every_run(tmp_path):
    config = SCRIPTS / "toric_blowup_unstable.json"
    main(["toric-stability", "--config", str(config), "--out", str(tmp_path / "out")])
    records = read_journal()
    assert len(records) == 1
    assert records[0]["command"] == "toric-stability"
    assert records[0]["status"] == 0
    assert "timestamp_utc" in records[0]


def test_start_script_runs_battery_with_plain_messages():
    text = (SCRIPTS.parent / "start.sh").read_text(encoding="utf-8")
    assert "-m sigmaflow verify-all" in text
    assert text.isascii()
    assert "Python 3 not found" in text
