"""Acceptance criteria, one test each.

Every test carries ``@pytest.mark.acceptance(n, title)``; conftest prints a
PASS/FAIL line per criterion at the end of the run.
"""

import json
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locklab import cryptobox, harness
from locklab.app import App, build_app_binary
from locklab.attacker import decrypt_captured, extract_static_key, intercept_api, patch_app_pinning, repetition_report
from locklab.cloud import STATIC_API_KEY, Cloud, Manufacturer
from locklab.cryptobox import SigningKeyPair
from locklab.firmware import Behavior, InstalledFirmware
from locklab.harness import SUCCEEDS, Testbed, Verdict, impostor_encounters, run_scenario
from locklab.lock import TRANSITIONS, BroadcastChannel, LockState
from locklab.attacker import build_impostor, droplock_image
from locklab.link import LockClient, open_transport
from locklab.profile import HARDENED, VULNERABLE, build_profile
from locklab.sensor import pseudo_image
from locklab.wire import REQUEST_OPCODES, Frame, Opcode, crc16
from locklab.errors import ErrorCode

import oracles
import test_lock as sm
from benchlib import Bench

acceptance = pytest.mark.acceptance


@acceptance(1, "end-to-end droplock conversion under the vulnerable profile")
def test_droplock_e2e_vulnerable():
    start = time.perf_counter()
    rep = run_scenario("droplock_e2e", "vulnerable", seed=1)
    elapsed = time.perf_counter() - start
    assert rep.outcome == SUCCEEDS and rep.passed
    assert [s.op for s in rep.steps][:5] == ["offline_enroll", "offline_session", "enter_dfu", "forge_dfu", "dfu_receive"]
    assert rep.registry_entries == 0
    assert rep.harvested == 1
    assert elapsed < 5.0

    # replay the same steps by hand and compare the captured bytes themselves
    scenario = harness.load_scenarios()["droplock_e2e"]
    with Testbed(build_profile("vulnerable"), 1) as tb:
        for s in scenario.steps:
            harness.STEPS[s.op](tb, s.args)
        assert [im.pixels for im in tb.vars["harvested"]] == [oracles.pseudo_image("victim-1")]
        assert tb.lock.firmware.behavior is Behavior.DROPLOCK
        assert len(tb.cloud.registry) == 0

    again = run_scenario("droplock_e2e", "vulnerable", seed=1)
    assert again.to_dict() == rep.to_dict()


@acceptance(2, "hardening blocks at three distinct points")
def test_hardening_failure_points():
    blocked = run_scenario("droplock_e2e", "hardened", seed=1)
    assert blocked.outcome == "FAILS_AT:session_init:AUTH_FAILED"
    assert blocked.registry_entries == 0 and blocked.firmware.endswith("legitimate")

    no_auth = run_scenario("droplock_e2e", "hardened", ["session_auth"], seed=1)
    assert no_auth.outcome == "FAILS_AT:dfu_receive:INTEGRITY_FAILED"
    assert no_auth.firmware.endswith("legitimate")

    class2 = run_scenario("droplock_e2e", "hardened", ["session_auth", "dfu_integrity"], seed=1)
    assert class2.profile["sensor_class"] == 2
    assert class2.firmware == "6.6.6 droplock"  # deployment went through
    assert class2.harvested == 0 and class2.broadcast_records == 0
    assert class2.outcome == "FAILS_AT:harvest_listen:NOTHING_HARVESTED"

    assert len({blocked.outcome, no_auth.outcome, class2.outcome}) == 3
    assert all(r.passed for r in (blocked, no_auth, class2))


@acceptance(3, "ablation matrix soundness")
def test_ablation_matrix():
    start = time.perf_counter()
    m = harness.ablation_matrix(seed=1)
    elapsed = time.perf_counter() - start
    assert m.complete()
    assert set(m.rows) == {"A", "B", "F", "G", "H", "C01", "C02", "C03", "C04", "C06"}
    assert all(m.cells[r]["vulnerable"] == SUCCEEDS for r in m.rows)
    assert all(m.cells[r]["hardened"] != SUCCEEDS for r in m.rows)
    for col in m.columns[2:]:
        flipped = [r for r in m.rows if m.cells[r][col] != SUCCEEDS]
        assert flipped == [col.split(":", 1)[1]], col
    assert m.problems() == []
    assert elapsed < 30.0


def _identical_requests(profile, n):
    maker = Manufacturer(random.Random(1))
    cloud = Cloud(maker, profile, random.Random(2))
    app = App(build_app_binary(profile.cert_pinning), cloud, random.Random(3), api_mode=profile.api_encryption)
    if profile.cert_pinning == "patchable":
        app.binary = patch_app_pinning(app.binary)

    def flow(a):
        ch = a.api_channel()
        for _ in range(n):
            a.api_call(ch, "/firmware/meta", {"version": "1.2.0"})

    # the hardened app cannot be proxied; its traffic is tapped on the wire instead
    return intercept_api(app, flow, intercepting=profile.cert_pinning == "patchable")


@acceptance(4, "ECB leak reproduced, GCM shows no repeated blocks")
def test_ecb_leak():
    traffic = _identical_requests(VULNERABLE, 2)
    first, second = traffic.requests()
    assert first.body == second.body
    assert repetition_report(traffic)
    assert decrypt_captured(traffic, extract_static_key(build_app_binary("patchable"))).repetitions

    traffic = _identical_requests(HARDENED, 1000)
    meta = [env for env in traffic.requests() if env.path == "/firmware/meta"]
    assert len(meta) == 1000
    blocks = [env.body[i : i + 16] for env in meta for i in range(0, len(env.body) - 15, 16)]
    assert len(blocks) == len(set(blocks))
    assert repetition_report(traffic) == {}


@acceptance(5, "crypto and CRC match independent oracles")
def test_oracle_equivalence(golden):
    assert crc16(b"123456789") == oracles.crc16_bitwise(b"123456789") == 0x29B1
    rng = random.Random(5)
    for _ in range(1000):
        data = rng.randbytes(rng.randrange(0, 600))
        assert crc16(data) == oracles.crc16_bitwise(data)

    for _ in range(100):
        key, serial, nonce = rng.randbytes(16), rng.randbytes(8), rng.randbytes(16)
        derived = cryptobox.derive_session_key(cryptobox.SymmetricKey(key), serial, nonce)
        assert derived.material == oracles.session_key(key, serial, nonce)

    for vec in golden["aes128_block"]:
        key, pt, ct = (bytes.fromhex(vec[k]) for k in ("key", "plaintext", "ciphertext"))
        assert cryptobox.aes_block_encrypt(key, pt) == ct
        assert oracles.aes128_encrypt_block(key, pt) == ct

    kp = SigningKeyPair.generate(rng)
    msg = b"LLFW manifest 1.2.0"
    sig = cryptobox.sign(kp.signing_key, msg)
    false_accepts = 0
    for i in range(1000):
        m, s = bytearray(msg), bytearray(sig)
        target = s if i % 2 else m
        target[rng.randrange(len(target))] ^= 1 << rng.randrange(8)
        false_accepts += cryptobox.verify(kp.verification_key, bytes(m), bytes(s))
    assert false_accepts == 0


@acceptance(6, "state machine matches its transition table; DFU only via a session")
def test_state_machine_exhaustive():
    mismatches = []
    for state in LockState:
        for op in sorted(REQUEST_OPCODES):
            op = Opcode(op)
            with Bench(VULNERABLE) as b:
                session = sm.drive_to(b, state, op)
                assert b.lock.state is state
                if op is Opcode.SESSION_INIT and state not in (LockState.FACTORY, LockState.ENROLLED):
                    payload = bytes(32)
                else:
                    payload = sm.payload_for(b, op, session)
                reply = b.lock.handle_frame(Frame(op, payload))
                wrong_state = reply.is_error and reply.payload[0] == ErrorCode.WRONG_STATE
                if wrong_state == (op in TRANSITIONS[state]):
                    mismatches.append((state.name, op.name))
    assert mismatches == []
    for src, edges in TRANSITIONS.items():
        for op, dst in edges.items():
            if dst is LockState.DFU_MODE and src is not LockState.DFU_MODE:
                assert (src, op) == (LockState.SESSION_ACTIVE, Opcode.ENTER_DFU)
    _walks()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(sm.ACTIONS), max_size=30))
def _walks(actions):
    with Bench(VULNERABLE) as b:
        sm.walk(b, actions)


@acceptance(7, "impostor detection and victim behaviors")
def test_impostor_detection():
    rng = random.Random(7)
    maker = Manufacturer(random.Random(8))
    ca, digests = maker.attestation_ca.verification_key, maker.published_digests()

    def scan(lock):
        t = open_transport(lock)
        try:
            return harness.scan_device(LockClient(t), ca, digests, rng)
        finally:
            t.close()

    bare = build_impostor("none", broadcast=BroadcastChannel(), rng=rng, recorded_attestation=b"")
    assert scan(bare) is Verdict.UNVERIFIED
    converted = maker.provision_lock(HARDENED, BroadcastChannel())
    assert scan(converted) is Verdict.GENUINE
    converted.install_firmware(InstalledFirmware("6.6.6", Behavior.DROPLOCK, droplock_image()))
    assert scan(converted) is Verdict.FIRMWARE_MISMATCH

    aware = impostor_encounters(100, "scan_first", seed=11)
    assert aware.encounters == 100 and aware.harvested == 0 and aware.touched == 0
    unaware = impostor_encounters(100, "touch_immediately", seed=11)
    assert unaware.harvested == 100


@acceptance(8, "equal seeds give byte-identical machine reports")
def test_determinism():
    for name in sorted(harness.load_scenarios()):
        for preset in ("vulnerable", "hardened"):
            reports = [
                harness.emit_report(harness.build_report(seed=4, scenarios=[run_scenario(name, preset, seed=4)]))[1]
                for _ in range(2)
            ]
            assert reports[0] == reports[1], (name, preset)
    full = [
        harness.emit_report(harness.build_report(
            seed=3, matrix=harness.ablation_matrix(3), encounters=[impostor_encounters(20, "scan_first", seed=3)]
        ))[1]
        for _ in range(2)
    ]
    assert full[0] == full[1]
    json.loads(full[0])
