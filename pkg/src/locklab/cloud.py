"""Vendor side: the manufacturer's keys and catalog, and the cloud API.

Envelope wire format (integers little-endian)::

    u16 route_len | route (utf-8) | u8 sid_len | session_id | u32 body_len | body

``static_ecb`` bodies are AES-ECB under the one API key baked into every app.
``dh_gcm`` bodies are nonce(12) || AES-GCM(session key, ad = route || session_id)
where the session key comes from an X25519 exchange on ``/handshake``.
"""

from __future__ import annotations

import json
import random
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

from locklab import cryptobox
from locklab.cryptobox import KeyAgreementKeyPair, SigningKeyPair, SymmetricKey
from locklab.errors import CloudError, CryptoError, ErrorCode, LockLabError
from locklab.firmware import Behavior, FirmwarePackage, InstalledFirmware, build_package
from locklab.lock import AttestationIdentity, BroadcastChannel, DeviceIdentity, Lock, TrustAnchors
from locklab.profile import SecurityProfile

APP_ENDPOINT = 0x41505043
CLOUD_ENDPOINT = 0x434C4F55
ROUTES = ("/register", "/session_key", "/firmware/meta", "/firmware/download")
HANDSHAKE_ROUTE = "/handshake"
ERROR_ROUTE = "/error"


def _data(name: str) -> bytes:
    return (resources.files("locklab") / "data" / name).read_bytes()


def load_config() -> dict:
    return json.loads(_data("config.json"))


def load_image(name: str) -> bytes:
    return _data(name)


@dataclass(frozen=True)
class CatalogEntry:
    version: str
    behavior: Behavior
    integrity: str
    image_file: str


def load_catalog(text: Optional[str] = None) -> list[CatalogEntry]:
    text = _data("catalog.txt").decode() if text is None else text
    entries = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        version, behavior, integrity, image = line.split()
        entries.append(CatalogEntry(version, Behavior(behavior), integrity, image))
    return entries


FACTORY_KEY = SymmetricKey(bytes.fromhex(load_config()["factory_key"]))
STATIC_API_KEY = SymmetricKey(bytes.fromhex(load_config()["static_api_key"]))


class Manufacturer:
    """Holds signing keys and provisions locks off the production line."""

    def __init__(self, rng: random.Random):
        self._rng = rng
        self.factory_key = FACTORY_KEY
        self.static_api_key = STATIC_API_KEY
        self.firmware_signer = SigningKeyPair.generate(rng)
        self.cloud_signer = SigningKeyPair.generate(rng)
        self.attestation_ca = SigningKeyPair.generate(rng)
        self.catalog = load_catalog()
        self.images = {e.version: load_image(e.image_file) for e in self.catalog}
        self.current_version = self.catalog[-1].version

    def entry(self, version: str) -> CatalogEntry:
        for e in self.catalog:
            if e.version == version:
                return e
        raise CloudError(ErrorCode.NO_SUCH_VERSION, version)

    def package(self, version: str, *, signed: bool) -> FirmwarePackage:
        e = self.entry(version)
        if e.integrity in ("crc16", "signature"):
            signed = e.integrity == "signature"
        return build_package(
            self.images[version],
            version=version,
            behavior=e.behavior,
            signer=self.firmware_signer if signed else None,
        )

    def published_digests(self) -> frozenset[bytes]:
        return frozenset(
            InstalledFirmware(e.version, e.behavior, self.images[e.version]).digest
            for e in self.catalog
            if e.behavior is Behavior.LEGITIMATE
        )

    def provision_lock(self, profile: SecurityProfile, broadcast: BroadcastChannel) -> Lock:
        hardware_id = self._rng.randbytes(8)
        lock_rng = random.Random(self._rng.getrandbits(64))
        attestation = None
        if profile.attestation:
            device = SigningKeyPair.generate(lock_rng)
            cert = cryptobox.sign(self.attestation_ca.signing_key, hardware_id + device.verification_key)
            attestation = AttestationIdentity(device, cert)
        e = self.entry(self.current_version)
        return Lock(
            hardware_id=hardware_id,
            profile=profile,
            factory_key=self.factory_key,
            firmware=InstalledFirmware(e.version, e.behavior, self.images[e.version]),
            trust=TrustAnchors(self.firmware_signer.verification_key, self.cloud_signer.verification_key),
            broadcast=broadcast,
            rng=lock_rng,
            attestation=attestation,
        )


@dataclass(frozen=True)
class ApiEnvelope:
    path: str
    body: bytes
    session_id: bytes = b""

    def to_bytes(self) -> bytes:
        route = self.path.encode()
        return (
            struct.pack("<H", len(route)) + route
            + struct.pack("<B", len(self.session_id)) + self.session_id
            + struct.pack("<I", len(self.body)) + self.body
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ApiEnvelope":
        try:
            (rlen,) = struct.unpack_from("<H", data, 0)
            route = data[2 : 2 + rlen].decode()
            pos = 2 + rlen
            slen = data[pos]
            sid = data[pos + 1 : pos + 1 + slen]
            pos += 1 + slen
            (blen,) = struct.unpack_from("<I", data, pos)
            body = data[pos + 4 : pos + 4 + blen]
            if len(body) != blen or pos + 4 + blen != len(data):
                raise ValueError("length mismatch")
        except (struct.error, IndexError, ValueError, UnicodeDecodeError) as exc:
            raise CloudError(ErrorCode.BAD_REQUEST, f"malformed envelope: {exc}") from None
        return cls(route, body, sid)


class ApiChannel:
    """One endpoint of the API payload-encryption layer."""

    def __init__(self, mode: str, key: SymmetricKey, *, session_id: bytes = b"", endpoint_id: int = APP_ENDPOINT):
        if mode not in ("static_ecb", "dh_gcm"):
            raise ValueError(mode)
        self.mode = mode
        self.key = key
        self.session_id = session_id
        self._nonces = cryptobox.NonceSequence(endpoint_id)

    def wrap(self, route: str, plaintext: bytes) -> ApiEnvelope:
        if self.mode == "static_ecb":
            return ApiEnvelope(route, cryptobox.ecb_encrypt(self.key, plaintext))
        nonce = self._nonces.next()
        sealed = cryptobox.gcm_seal(self.key, nonce, route.encode() + self.session_id, plaintext)
        return ApiEnvelope(route, nonce + sealed, self.session_id)

    def unwrap(self, envelope: ApiEnvelope) -> bytes:
        try:
            if self.mode == "static_ecb":
                return cryptobox.ecb_decrypt(self.key, envelope.body)
            return cryptobox.gcm_open(
                self.key, envelope.body[:12], envelope.path.encode() + envelope.session_id, envelope.body[12:]
            )
        except CryptoError as exc:
            code = ErrorCode.AUTH_FAILED if self.mode == "dh_gcm" else ErrorCode.DECRYPT_FAILED
            raise CloudError(code, exc.code.name) from None


def api_wrap(channel: ApiChannel, route: str, plaintext: bytes) -> ApiEnvelope:
    return channel.wrap(route, plaintext)


def api_unwrap(channel: ApiChannel, envelope: ApiEnvelope) -> bytes:
    return channel.unwrap(envelope)


def client_channel(mode: str, exchange: Callable[[bytes], bytes], rng: random.Random) -> ApiChannel:
    """Open a client channel, running the key agreement when the mode needs one."""
    if mode == "static_ecb":
        return ApiChannel(mode, STATIC_API_KEY)
    keypair = KeyAgreementKeyPair.generate(rng)
    reply = ApiEnvelope.from_bytes(exchange(ApiEnvelope(HANDSHAKE_ROUTE, keypair.public).to_bytes()))
    if reply.path == ERROR_ROUTE:
        raise CloudError(ErrorCode[json.loads(reply.body)["error"]])
    key = cryptobox.dh_handshake(keypair, reply.body)
    return ApiChannel(mode, key, session_id=reply.session_id, endpoint_id=APP_ENDPOINT)


@dataclass
class DeviceRecord:
    identity: DeviceIdentity
    registered_owner: Optional[str]


@dataclass(frozen=True)
class FirmwareMeta:
    version: str
    integrity: dict
    digest: str

    def to_dict(self) -> dict:
        return {"version": self.version, "integrity": self.integrity, "digest": self.digest}


class Cloud:
    mitm = False

    def __init__(self, manufacturer: Manufacturer, profile: SecurityProfile, rng: random.Random):
        self.manufacturer = manufacturer
        self.mode = profile.api_encryption
        self.profile = profile
        self.online = True
        self.registry: dict[bytes, DeviceRecord] = {}
        self.accounts: set[str] = set()
        self._rng = rng
        self._sessions: dict[bytes, ApiChannel] = {}
        self._static = ApiChannel("static_ecb", manufacturer.static_api_key, endpoint_id=CLOUD_ENDPOINT)
        self._guard = threading.Lock()
        self._serial_locks: dict[bytes, threading.Lock] = defaultdict(threading.Lock)
        self._routes: dict[str, Callable[[dict], dict]] = {
            "/register": self._route_register,
            "/session_key": self._route_session_key,
            "/firmware/meta": self._route_meta,
            "/firmware/download": self._route_download,
        }

    def create_account(self, name: str) -> str:
        self.accounts.add(name)
        return name

    def _check_account(self, account: str) -> None:
        if account not in self.accounts:
            raise CloudError(ErrorCode.AUTH_FAILED, "unknown account")

    # -- service operations -------------------------------------------------

    def register_device(self, account: str, serial: bytes, key: SymmetricKey) -> None:
        self._check_account(account)
        with self._guard:
            serial_lock = self._serial_locks[serial]
        with serial_lock:
            if serial in self.registry:
                raise CloudError(ErrorCode.ALREADY_REGISTERED, serial.hex())
            self.registry[serial] = DeviceRecord(DeviceIdentity(serial, key), account)

    def request_session_key(
        self, account: str, serial: bytes, nonce: bytes
    ) -> tuple[SymmetricKey, Optional[bytes]]:
        self._check_account(account)
        record = self.registry.get(serial)
        if record is None:
            raise CloudError(ErrorCode.NOT_REGISTERED, serial.hex())
        if record.registered_owner != account:
            raise CloudError(ErrorCode.NOT_OWNER)
        key = cryptobox.derive_session_key(record.identity.key, serial, nonce)
        return key, self._token(self.profile.session_auth, serial, nonce)

    def request_enroll_key(
        self, account: str, hardware_id: bytes, nonce: bytes
    ) -> tuple[SymmetricKey, Optional[bytes]]:
        self._check_account(account)
        key = cryptobox.derive_session_key(self.manufacturer.factory_key, hardware_id, nonce)
        return key, self._token(self.profile.enrollment_auth, hardware_id, nonce)

    def _token(self, mode: str, serial: bytes, nonce: bytes) -> Optional[bytes]:
        if mode != "mutual_auth":
            return None
        return cryptobox.sign(self.manufacturer.cloud_signer.signing_key, serial + nonce)

    def get_firmware(self, version: str) -> tuple[FirmwarePackage, FirmwareMeta]:
        signed = self.profile.dfu_integrity == "signature"
        pkg = self.manufacturer.package(version, signed=signed)
        if pkg.signature is not None:
            integrity = {"kind": "signature", "signature": pkg.signature.hex(), "key_id": pkg.key_id.hex()}
        else:
            integrity = {"kind": "crc16", "crc16": f"{pkg.crc16:04x}"}
        return pkg, FirmwareMeta(version, integrity, pkg.digest.hex())

    # -- envelope endpoint --------------------------------------------------

    def exchange(self, data: bytes) -> bytes:
        if not self.online:
            raise CloudError(ErrorCode.CLOUD_UNREACHABLE)
        try:
            envelope = ApiEnvelope.from_bytes(data)
            if envelope.path == HANDSHAKE_ROUTE:
                return self._handshake(envelope).to_bytes()
            channel = self._channel_for(envelope)
            request = json.loads(channel.unwrap(envelope))
        except (LockLabError, ValueError) as exc:
            code = exc.code.name if isinstance(exc, LockLabError) else "BAD_REQUEST"
            return ApiEnvelope(ERROR_ROUTE, json.dumps({"error": code}).encode()).to_bytes()
        try:
            handler = self._routes[envelope.path]
            result = handler(request)
        except KeyError:
            result = {"error": ErrorCode.BAD_REQUEST.name}
        except LockLabError as exc:
            result = {"error": exc.code.name}
        body = json.dumps(result, sort_keys=True).encode()
        return channel.wrap(envelope.path, body).to_bytes()

    def _handshake(self, envelope: ApiEnvelope) -> ApiEnvelope:
        if self.mode != "dh_gcm":
            raise CloudError(ErrorCode.NOT_SUPPORTED, "static API key mode")
        keypair = KeyAgreementKeyPair.generate(self._rng)
        key = cryptobox.dh_handshake(keypair, envelope.body)
        sid = self._rng.randbytes(8)
        self._sessions[sid] = ApiChannel("dh_gcm", key, session_id=sid, endpoint_id=CLOUD_ENDPOINT)
        return ApiEnvelope(HANDSHAKE_ROUTE, keypair.public, sid)

    def _channel_for(self, envelope: ApiEnvelope) -> ApiChannel:
        if self.mode == "static_ecb":
            return self._static
        try:
            return self._sessions[envelope.session_id]
        except KeyError:
            raise CloudError(ErrorCode.AUTH_FAILED, "no such API session") from None

    def _route_register(self, req: dict) -> dict:
        self.register_device(req["account"], bytes.fromhex(req["serial"]), SymmetricKey(bytes.fromhex(req["key"])))
        return {"ok": True}

    def _route_session_key(self, req: dict) -> dict:
        nonce = bytes.fromhex(req["nonce"])
        if req.get("phase") == "enroll":
            key, token = self.request_enroll_key(req["account"], bytes.fromhex(req["hardware_id"]), nonce)
        else:
            key, token = self.request_session_key(req["account"], bytes.fromhex(req["serial"]), nonce)
        out = {"key": key.hex()}
        if token is not None:
            out["token"] = token.hex()
        return out

    def _route_meta(self, req: dict) -> dict:
        return self.get_firmware(req["version"])[1].to_dict()

    def _route_download(self, req: dict) -> dict:
        return {"package": self.get_firmware(req["version"])[0].to_bytes().hex()}


def decode_response(channel: ApiChannel, data: bytes) -> dict:
    envelope = ApiEnvelope.from_bytes(data)
    if envelope.path == ERROR_ROUTE:
        raise CloudError(ErrorCode[json.loads(envelope.body)["error"]])
    result = json.loads(channel.unwrap(envelope))
    if "error" in result:
        raise CloudError(ErrorCode[result["error"]])
    return result
