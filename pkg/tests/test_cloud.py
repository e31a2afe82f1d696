import json
import random
import threading
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from locklab import cryptobox
from locklab.cloud import (
    STATIC_API_KEY,
    ApiChannel,
    ApiEnvelope,
    Cloud,
    Manufacturer,
    client_channel,
    decode_response,
    load_catalog,
)
from locklab.cryptobox import SymmetricKey
from locklab.errors import CloudError, ErrorCode
from locklab.lock import LockState
from locklab.profile import HARDENED, VULNERABLE
from oracles import crc16_bitwise

SERIAL = bytes.fromhex("a1a2a3a4a5a6a7a8")
KEY = SymmetricKey(bytes(range(16)))


def make_cloud(profile=VULNERABLE, seed=3):
    cloud = Cloud(Manufacturer(random.Random(seed)), profile, random.Random(seed + 1))
    cloud.create_account("alice")
    cloud.create_account("bob")
    return cloud


def code_of(fn, *a):
    with pytest.raises(CloudError) as ei:
        fn(*a)
    return ei.value.code


@given(st.text(max_size=30), st.binary(max_size=80), st.binary(max_size=20))
def test_envelope_round_trip(path, body, sid):
    env = ApiEnvelope(path, body, sid)
    assert ApiEnvelope.from_bytes(env.to_bytes()) == env


def test_envelope_is_little_endian():
    raw = ApiEnvelope("/r", b"xyz").to_bytes()
    assert raw == b"\x02\x00/r\x00\x03\x00\x00\x00xyz"


def test_envelope_malformed():
    assert code_of(ApiEnvelope.from_bytes, b"\x05\x00ab") is ErrorCode.BAD_REQUEST


def test_static_wrap_is_deterministic_and_block_aligned():
    ch = ApiChannel("static_ecb", STATIC_API_KEY)
    a, b = ch.wrap("/session_key", b'{"x": 1}'), ch.wrap("/session_key", b'{"x": 1}')
    assert a.body == b.body and len(a.body) % 16 == 0
    assert ch.unwrap(a) == b'{"x": 1}'


def test_gcm_wrap_differs_per_call():
    ch = ApiChannel("dh_gcm", KEY, session_id=b"s1")
    a, b = ch.wrap("/r", b"same"), ch.wrap("/r", b"same")
    assert a.body != b.body
    peer = ApiChannel("dh_gcm", KEY, session_id=b"s1")
    assert peer.unwrap(a) == peer.unwrap(b) == b"same"


def test_gcm_binds_route():
    ch = ApiChannel("dh_gcm", KEY, session_id=b"s1")
    env = ch.wrap("/register", b"x")
    assert code_of(ch.unwrap, ApiEnvelope("/session_key", env.body, env.session_id)) is ErrorCode.AUTH_FAILED


def test_static_unwrap_of_garbage():
    ch = ApiChannel("static_ecb", STATIC_API_KEY)
    assert code_of(ch.unwrap, ApiEnvelope("/r", b"abc")) is ErrorCode.DECRYPT_FAILED


def test_register_and_duplicates():
    c = make_cloud()
    c.register_device("alice", SERIAL, KEY)
    assert c.registry[SERIAL].registered_owner == "alice"
    assert code_of(c.register_device, "bob", SERIAL, KEY) is ErrorCode.ALREADY_REGISTERED


def test_concurrent_registration_is_unique():
    c = make_cloud()
    results = []

    def go(acct):
        try:
            c.register_device(acct, SERIAL, KEY)
            results.append(acct)
        except CloudError:
            pass

    threads = [threading.Thread(target=go, args=("alice",)) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 1 and len(c.registry) == 1


def test_session_key_matches_lock_derivation():
    c = make_cloud()
    c.register_device("alice", SERIAL, KEY)
    rng = random.Random(1)
    for _ in range(20):
        nonce = rng.randbytes(16)
        key, token = c.request_session_key("alice", SERIAL, nonce)
        assert key == cryptobox.derive_session_key(KEY, SERIAL, nonce)
        assert token is None


def test_session_key_errors():
    c = make_cloud()
    assert code_of(c.request_session_key, "alice", SERIAL, bytes(16)) is ErrorCode.NOT_REGISTERED
    c.register_device("alice", SERIAL, KEY)
    assert code_of(c.request_session_key, "bob", SERIAL, bytes(16)) is ErrorCode.NOT_OWNER


def test_hardened_token_verifies():
    c = make_cloud(HARDENED)
    c.register_device("alice", SERIAL, KEY)
    _key, token = c.request_session_key("alice", SERIAL, bytes(16))
    assert cryptobox.verify(c.manufacturer.cloud_signer.verification_key, SERIAL + bytes(16), token)


def test_firmware_meta_vulnerable():
    c = make_cloud()
    pkg, meta = c.get_firmware("1.2.0")
    assert meta.integrity == {"kind": "crc16", "crc16": f"{crc16_bitwise(pkg.image):04x}"}
    assert pkg.signature is None


def test_firmware_meta_hardened():
    c = make_cloud(HARDENED)
    pkg, meta = c.get_firmware("1.2.0")
    assert meta.integrity["kind"] == "signature"
    assert meta.integrity["key_id"] == c.manufacturer.firmware_signer.key_id.hex()
    assert cryptobox.verify(c.manufacturer.firmware_signer.verification_key, pkg.signed_message(), pkg.signature)


def test_unknown_version():
    assert code_of(make_cloud().get_firmware, "9.9.9") is ErrorCode.NO_SUCH_VERSION


@pytest.mark.parametrize("profile", [VULNERABLE, HARDENED])
def test_exchange_round_trip(profile):
    c = make_cloud(profile)
    ch = client_channel(profile.api_encryption, c.exchange, random.Random(4))
    req = {"account": "alice", "serial": SERIAL.hex(), "key": KEY.hex()}
    out = decode_response(ch, c.exchange(ch.wrap("/register", json.dumps(req).encode()).to_bytes()))
    assert out == {"ok": True}
    with pytest.raises(CloudError) as ei:
        decode_response(ch, c.exchange(ch.wrap("/register", json.dumps(req).encode()).to_bytes()))
    assert ei.value.code is ErrorCode.ALREADY_REGISTERED


def test_static_key_decrypts_every_vulnerable_envelope():
    c = make_cloud()
    ch = client_channel("static_ecb", c.exchange, random.Random(4))
    for i in range(10):
        env = ch.wrap("/firmware/meta", json.dumps({"version": "1.2.0", "i": i}).encode())
        reply = ApiEnvelope.from_bytes(c.exchange(env.to_bytes()))
        assert json.loads(cryptobox.ecb_decrypt(STATIC_API_KEY, reply.body))["version"] == "1.2.0"


def test_one_dh_session_key_opens_only_its_session():
    c = make_cloud(HARDENED)
    a = client_channel("dh_gcm", c.exchange, random.Random(4))
    b = client_channel("dh_gcm", c.exchange, random.Random(5))
    env_b = b.wrap("/firmware/meta", b'{"version": "1.2.0"}')
    stolen = ApiChannel("dh_gcm", a.key, session_id=env_b.session_id)
    assert code_of(stolen.unwrap, env_b) is ErrorCode.AUTH_FAILED


def test_handshake_refused_in_static_mode():
    c = make_cloud()
    assert code_of(client_channel, "dh_gcm", c.exchange, random.Random(1)) is ErrorCode.NOT_SUPPORTED


def test_offline_cloud():
    c = make_cloud()
    c.online = False
    assert code_of(c.exchange, b"") is ErrorCode.CLOUD_UNREACHABLE


def test_catalog_parsing():
    entries = load_catalog("# c\n1.0 legitimate crc16 a.img\n\n2.0 droplock signature b.img  # x\n")
    assert [(e.version, e.behavior.value, e.integrity) for e in entries] == [
        ("1.0", "legitimate", "crc16"), ("2.0", "droplock", "signature")
    ]


def test_provisioned_locks_are_factory_fresh_and_distinct():
    m = Manufacturer(random.Random(1))
    from locklab.lock import BroadcastChannel

    a, b = m.provision_lock(VULNERABLE, BroadcastChannel()), m.provision_lock(HARDENED, BroadcastChannel())
    assert a.state is b.state is LockState.FACTORY
    assert a.hardware_id != b.hardware_id
    assert a.attestation is None and b.attestation is not None
