import json
from pathlib import Path

from sigmaflow.infra import journal, settings


def test_defaults_are_written_on_first_load():
    s = settings.load_settings()
    assert s == settings.AppSettings()
    assert Path(settings.settings_path()).exists()


def test_unknown_keys_are_ignored_and_types_coerced():
    path = Path(settings.settings_path())
    path.write_text(json.dumps({"default_seed": "7", "threads": 3, "future_option": True}), encoding="utf-8")
    s = settings.load_settings()
    assert s.default_seed == 7
    assert s.threads == 3
    assert not hasattr(s, "future_option")


def test_worker_count_prefers_environment(monkeypatch):
    s = settings.AppSettings(threads=3)
    assert s.worker_count() == 3
    monkeypatch.setenv(settings.THREADS_ENV, "5")
    assert s.worker_count() == 5
    monkeypatch.setenv(settings.THREADS_ENV, "many")
    assert s.worker_count() == 3
    monkeypatch.setenv(settings.THREADS_ENV, "0")
    assert s.worker_count() == 1


def test_output_dir_defaults_to_data_dir(isolated_dirs):
    assert settings.AppSettings().resolved_output_dir() == isolated_dirs / "data" / "runs"
    assert settings.AppSettings(output_dir="/tmp/x").resolved_output_dir() == Path("/tmp/x")


def test_journal_append_and_read():
    assert journal.read_journal() == []
    journal.append_journal({"command": "flow", "status": 0})
    journal.append_journal({"command": "legendre", "status": 2, "timestamp_utc": "fixed"})
    records = journal.read_journal()
    assert [r["command"] for r in records] == ["flow", "legendre"]
    assert records[1]["timestamp_utc"] == "fixed"
    assert journal.journal_path().endswith("journal.jsonl")


def test_bad_values_fall_back_to_defaults():
    path = Path(settings.settings_path())
    path.write_text(json.dumps({"default_seed": "seven", "flow_tol": [1], "threads": 2}), encoding="utf-8")
    s = settings.load_settings()
    assert s.default_seed == 0
    assert s.flow_tol == settings.AppSettings().flow_tol
    assert s.threads == 2

    path.write_text("{not json", encoding="utf-8")
    assert settings.load_settings() == settings.AppSettings()
    path.write_text("[1, 2]", encoding="utf-8")
    assert settings.load_settings() == settings.AppSettings()


def test_cli_runs_with_malformed_settings(tmp_path):
    from sigmaflow.app import main

    Path(settings.settings_path()).write_text("{not json", encoding="utf-8")
    assert main(["verify-all", "--only", "AC03", "--out", str(tmp_path / "out")]) == 0
