import random
from dataclasses import replace

import pytest

from locklab.app import App, build_app_binary
from locklab.attacker import Attacker
from locklab.cloud import STATIC_API_KEY
from locklab.errors import ErrorCode, LockLabError
from locklab.firmware import Behavior
from locklab.lock import LockState
from locklab.profile import HARDENED, VULNERABLE


def app_for(b, seed=5):
    b.cloud.create_account("owner")
    b.cloud.create_account("other")
    return App(build_app_binary(b.profile.cert_pinning), b.cloud, random.Random(seed), api_mode=b.profile.api_encryption)


def code(fn, *a, **kw):
    with pytest.raises(LockLabError) as ei:
        fn(*a, **kw)
    return ei.value.code


def test_binary_embeds_cloud_static_key():
    assert build_app_binary("patchable").embedded_static_key == STATIC_API_KEY
    assert build_app_binary("tamper_resistant").pinning_enforced


@pytest.mark.parametrize("profile", [VULNERABLE, HARDENED])
def test_enroll_then_unlock(bench_factory, profile):
    b = bench_factory(profile)
    app = app_for(b)
    ident = app.enroll_flow(b.client, "owner")
    assert b.lock.state is LockState.ENROLLED and b.lock.identity == ident
    assert b.cloud.registry[ident.serial].registered_owner == "owner"
    assert app.unlock_flow(b.client, "owner")
    assert b.lock.bolt_open


def test_enroll_twice_fails(vuln):
    app = app_for(vuln)
    app.enroll_flow(vuln.client, "owner")
    assert code(app.enroll_flow, vuln.client, "owner") is ErrorCode.WRONG_STATE
    assert len(vuln.cloud.registry) == 1


def test_attacker_enrolled_lock_unusable_to_owner(vuln):
    app = app_for(vuln)
    Attacker(random.Random(1)).offline_enroll(vuln.client)
    assert code(app.enroll_flow, vuln.client, "owner") is ErrorCode.AUTH_FAILED
    assert len(vuln.cloud.registry) == 0


def test_unlock_needs_cloud(vuln):
    app = app_for(vuln)
    app.enroll_flow(vuln.client, "owner")
    vuln.cloud.online = False
    assert code(app.unlock_flow, vuln.client, "owner") is ErrorCode.CLOUD_UNREACHABLE
    assert not vuln.lock.bolt_open


def test_wrong_account(vuln):
    app = app_for(vuln)
    ident = app.enroll_flow(vuln.client, "owner")
    assert code(app.unlock_flow, vuln.client, "other", ident.serial) is ErrorCode.NOT_OWNER


def test_app_never_derives_keys_locally(vuln, monkeypatch):
    import locklab.app as appmod

    assert not hasattr(appmod, "derive_session_key")
    app = app_for(vuln)
    calls = []
    real = vuln.cloud.exchange
    monkeypatch.setattr(vuln.cloud, "exchange", lambda data: calls.append(data) or real(data))
    app.enroll_flow(vuln.client, "owner")
    app.unlock_flow(vuln.client, "owner")
    assert len(calls) == 3  # enroll key, register, unlock key


@pytest.mark.parametrize("profile", [VULNERABLE, HARDENED])
def test_fota_legitimate(bench_factory, profile):
    b = bench_factory(profile)
    app = app_for(b)
    app.enroll_flow(b.client, "owner")
    assert app.fota_flow(b.client, "owner", "1.2.0") == "1.2.0"
    assert ("dfu_applied", "1.2.0 legitimate") in b.lock.events
    assert b.lock.state is LockState.ENROLLED


def test_fota_missing_version(vuln):
    app = app_for(vuln)
    app.enroll_flow(vuln.client, "owner")
    assert code(app.fota_flow, vuln.client, "owner", "0.0.1") is ErrorCode.NO_SUCH_VERSION


def test_register_failure_rolls_back_lock(vuln):
    app = app_for(vuln)
    vuln.cloud.register_device("owner", b"\x00" * 8, STATIC_API_KEY)
    app._rng = random.Random(0)
    serial = random.Random(0).randbytes(8)
    vuln.cloud.registry.clear()
    vuln.cloud.register_device("owner", serial, STATIC_API_KEY)  # collide with the app's next serial
    assert code(app.enroll_flow, vuln.client, "owner", rollback=vuln.lock.factory_reset) is ErrorCode.ALREADY_REGISTERED
    assert vuln.lock.identity is None and vuln.lock.state is LockState.FACTORY
