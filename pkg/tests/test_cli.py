import json

import pytest
from click.testing import CliRunner

from locklab.cli import main


@pytest.fixture
def run():
    runner = CliRunner()
    return lambda *args: runner.invoke(main, list(args))


def test_list(run):
    r = run("list")
    assert r.exit_code == 0 and "droplock_e2e" in r.output


def test_scenario_text(run):
    r = run("scenario", "droplock_e2e", "--seed", "1")
    assert r.exit_code == 0
    assert "outcome  SUCCEEDS" in r.output


def test_scenario_machine(run):
    r = run("scenario", "droplock_e2e", "--profile", "hardened", "--format", "machine")
    assert r.exit_code == 0
    doc = json.loads(r.output)
    assert doc["scenarios"][0]["outcome"] == "FAILS_AT:session_init:AUTH_FAILED"


def test_scenario_ablation(run):
    r = run("scenario", "droplock_e2e", "--profile", "hardened", "--ablate", "session_auth", "--format", "machine")
    assert json.loads(r.output)["scenarios"][0]["outcome"] == "FAILS_AT:dfu_receive:INTEGRITY_FAILED"


def test_bad_inputs(run):
    assert run("scenario", "nope").exit_code != 0
    assert run("scenario", "droplock_e2e", "--ablate", "ZZ").exit_code != 0


def test_scenario_mismatch_exits_nonzero(run, tmp_path):
    # expects nothing to fail, but the hardened lock refuses the attacker
    (tmp_path / "naive.json").write_text(json.dumps({"name": "naive", "steps": [{"op": "offline_enroll"}]}))
    r = run("scenario", "naive", "--profile", "hardened", "--scenario-dir", str(tmp_path))
    assert r.exit_code == 1


def test_dfu_pack_and_verify(run, tmp_path):
    forged = tmp_path / "forged.pkg"
    assert run("dfu", "pack", "-o", str(forged)).exit_code == 0
    assert run("dfu", "verify", str(forged), "--integrity", "crc16").exit_code == 0
    r = run("dfu", "verify", str(forged), "--expect", "reject")
    assert r.exit_code == 0 and "INTEGRITY_FAILED" in r.output
    signed = tmp_path / "signed.pkg"
    assert run("dfu", "pack", "-o", str(signed), "--integrity", "signature", "--behavior", "legitimate").exit_code == 0
    assert run("dfu", "verify", str(signed)).exit_code == 0
    assert run("dfu", "verify", str(signed), "--seed", "2", "--expect", "reject").exit_code == 0


def test_dfu_legacy(run, tmp_path):
    pkg = tmp_path / "legacy.pkg"
    run("dfu", "pack", "-o", str(pkg), "--package-format", "legacy")
    assert run("dfu", "verify", str(pkg), "--allow-legacy").exit_code == 0
    assert run("dfu", "verify", str(pkg), "--expect", "reject").exit_code == 0


def test_scan(run):
    r = run("scan")
    lines = dict(line.split() for line in r.output.splitlines())
    assert lines["genuine"] == "GENUINE"
    assert lines["converted"] == "FIRMWARE_MISMATCH"
    assert {v for k, v in lines.items() if k.startswith("impostor")} == {"UNVERIFIED"}


def test_matrix_cli(run):
    r = run("matrix", "--format", "machine")
    assert r.exit_code == 0
    assert json.loads(r.output)["matrix_problems"] == []


def test_report_to_file(run, tmp_path):
    out = tmp_path / "r.json"
    r = run("report", "--format", "machine", "--encounters", "10", "--out", str(out))
    assert r.exit_code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "locklab.report/1"
    assert [e["harvested"] for e in doc["encounters"]] == [0, 10]
