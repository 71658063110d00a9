import json
import math

import pytest

from sigmaflow.core import battery
from sigmaflow.core.validators import DomainError


def test_build_battery_lists_all_criteria():
    b = battery.build_battery(7)
    assert [c.criterion_id for c in b.criteria] == [f"AC{i:02d}" for i in range(1, 13)]
    assert b.count_selected() == 12


def test_restrict_is_case_insensitive_and_strict():
    b = battery.build_battery(7, only=["ac03", " AC12 ", ""])
    assert [c.criterion_id for c in b.selected_criteria()] == ["AC03", "AC12"]
    with pytest.raises(DomainError):
        battery.build_battery(7, only=["AC99"])
    with pytest.raises(DomainError):
        battery.build_battery(7, tolerance_scale=-1.0)


def test_criterion_record_scales_threshold():
    c = battery.Criterion("AC00", "demo", 1.0)
    c.record(0.5, 1.0)
    assert c.passed
    c.record(0.5, 0.0)
    assert not c.passed
    c.record(math.nan, 1.0)
    assert not c.passed
    assert c.to_dict()["value"] == "nan"


def test_cheap_subset_passes_and_is_reproducible():
    first = battery.run_battery(battery.build_battery(11, only=["AC03", "AC05", "AC12"]))
    assert first.all_passed, first.failed_ids()
    second = battery.run_battery(battery.build_battery(11, only=["AC03", "AC05", "AC12"]))
    assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(second.to_dict(), sort_keys=True)
    assert [c["id"] for c in first.to_dict()["criteria"]] == ["AC03", "AC05", "AC12"]


def test_raising_check_is_recorded_as_failure(monkeypatch):
    def broken(rng):
        raise DomainError("bad input")

    checks = [(cid, title, threshold, broken if cid == "AC03" else fn) for cid, title, threshold, fn in battery.CHECKS]
    monkeypatch.setattr(battery, "CHECKS", checks)
    logs = []
    b = battery.run_battery(battery.build_battery(1, only=["AC03"]), log=logs.append)
    assert b.failed_ids() == ["AC03"]
    assert b.warnings == ["AC03 raised DomainError"]
    assert b.criteria[2].warning == "check raised"
    assert logs and logs[0].startswith("AC03 FAIL")


def test_model_exactness_uses_fine_disc():
    sols = battery._model_solutions()
    disc = sols["disc"]
    assert disc.domain.nodes == 129
    h0 = float(disc.sample([[0.0, 0.0]])[0])
    assert abs(h0 + 1.0 / (2.0 * (1.0 + math.sqrt(2.0)))) < 1e-5
    assert battery._model_solutions() is sols
