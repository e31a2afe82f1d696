import json
import random

import pytest

from locklab import harness, threatmodel
from locklab.errors import ErrorCode, LockLabError
from locklab.harness import (
    COLUMNS,
    SUCCEEDS,
    OutcomeMatrix,
    Scenario,
    Testbed,
    Verdict,
    ablation_matrix,
    build_report,
    emit_report,
    impostor_encounters,
    load_scenarios,
    run_scenario,
)
from locklab.profile import MATRIX_ROWS, build_profile


@pytest.fixture(scope="module")
def matrix():
    return ablation_matrix(seed=1)


def test_every_step_op_in_bundled_scenarios_is_registered():
    for sc in load_scenarios().values():
        for s in sc.steps:
            assert s.op in harness.STEPS, (sc.name, s.op)


@pytest.mark.parametrize("name", sorted(load_scenarios()))
@pytest.mark.parametrize("preset", ["vulnerable", "hardened"])
def test_bundled_scenarios_meet_expectations(name, preset):
    rep = run_scenario(name, preset, seed=2)
    assert rep.passed, rep.to_dict()


def test_unknown_scenario():
    with pytest.raises(LockLabError) as ei:
        run_scenario("nope")
    assert ei.value.code is ErrorCode.UNKNOWN_SCENARIO


def test_first_hardened_guard_decides_expectation():
    sc = Scenario.from_dict({
        "name": "t",
        "steps": [
            {"op": "offline_enroll", "guards": [{"control": "F", "phase": "session_init", "error": "AUTH_FAILED"}]},
            {"op": "dfu_receive", "guards": [{"control": "H", "phase": "dfu_receive", "error": "INTEGRITY_FAILED"}]},
        ],
    })
    assert sc.expected(build_profile("vulnerable")) == SUCCEEDS
    assert sc.expected(build_profile("vulnerable", ["H"])) == "FAILS_AT:dfu_receive:INTEGRITY_FAILED"
    assert sc.expected(build_profile("hardened")) == "FAILS_AT:session_init:AUTH_FAILED"


def test_steps_after_failure_are_skipped():
    rep = run_scenario("droplock_e2e", "hardened")
    statuses = [s.status for s in rep.steps]
    assert statuses[0] == "failed" and set(statuses[1:]) == {"skipped"}


def test_extra_scenario_dir_overrides(tmp_path):
    (tmp_path / "mine.json").write_text(json.dumps({"name": "mine", "steps": [{"op": "offline_enroll"}]}))
    scs = load_scenarios(tmp_path)
    assert "mine" in scs and "droplock_e2e" in scs
    assert run_scenario("mine", scenarios=scs).outcome == SUCCEEDS


def test_matrix_shape_and_soundness(matrix):
    assert matrix.complete()
    assert matrix.rows == MATRIX_ROWS and matrix.columns == COLUMNS
    assert matrix.problems() == []


def test_matrix_round_trip(matrix):
    again = OutcomeMatrix.from_dict(json.loads(json.dumps(matrix.to_dict())))
    assert again == matrix


def test_tampered_matrix_is_reported(matrix):
    bad = OutcomeMatrix.from_dict(matrix.to_dict())
    bad.cells["H"]["hardened"] = SUCCEEDS
    assert any(p.startswith("H:") for p in bad.problems())


def test_control_verdicts(matrix):
    v = harness.control_verdicts(matrix)
    assert set(v) == {c.id for c in threatmodel.CONTROLS}
    assert v["C05"].startswith("narrative")
    assert all(v[c].startswith("blocks") for c in ("C01", "C02", "C03", "C04", "C06"))


def test_report_names_goal_and_threats(matrix):
    rep = build_report(seed=1, matrix=matrix, scenarios=[run_scenario("droplock_e2e")])
    assert rep["schema"] == harness.SCHEMA
    assert rep["threat_model"]["goal"] == "TA04"
    assert {t["id"] for t in rep["threat_model"]["threats"]} >= {"TA01", "TA04"}
    text, machine = emit_report(rep)
    assert "TA04" in text and json.loads(machine) == rep
    assert harness.report_passed(rep)


def test_loopback_report_matches_inproc():
    a = run_scenario("droplock_e2e", seed=5).to_dict()
    b = run_scenario("droplock_e2e", seed=5, transport="loopback").to_dict()
    a.pop("transport"), b.pop("transport")
    assert a == b


def test_scan_verdicts():
    with Testbed(build_profile("hardened"), 1) as tb:
        assert tb.scan(tb.client) is Verdict.GENUINE
    with Testbed(build_profile("vulnerable"), 1) as tb:
        assert tb.scan(tb.client) is Verdict.UNVERIFIED


def test_encounters_deterministic_and_split():
    a = impostor_encounters(20, "scan_first", seed=3)
    assert a == impostor_encounters(20, "scan_first", seed=3)
    assert a.touched == a.harvested == 0
    assert sum(a.verdicts.values()) == 20 and "GENUINE" not in a.verdicts
    b = impostor_encounters(20, "touch_immediately", seed=3)
    assert b.harvested == 20 and b.verdicts == {}


def test_victim_behavior_validated():
    with Testbed(build_profile("vulnerable"), 1) as tb:
        with pytest.raises(ValueError):
            harness.victim_touch(tb.lock, tb.client, "v", "panic", ca_key=b"", published_digests=[], rng=random.Random())
