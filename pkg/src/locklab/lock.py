"""The emulated smart padlock.

Frames are processed strictly one at a time. Physical events (button press,
finger touch, debug probe) arrive through separate methods because they do
not travel over the radio.
"""

from __future__ import annotations

import hmac
import random
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from locklab import cryptobox
from locklab.cryptobox import SymmetricKey
from locklab.errors import ErrorCode, LockLabError
from locklab.firmware import (
    MAX_PACKAGE,
    Behavior,
    FirmwarePackage,
    InstalledFirmware,
    verify_package,
)
from locklab.link import CIPHER_FLAG_GCM, ENROLLED_FLAG, LOCK_ENDPOINT, PEER_ENDPOINT, SessionCipher
from locklab.profile import SecurityProfile
from locklab.sensor import FingerprintImage, FingerprintSensor
from locklab.errors import FrameError
from locklab.wire import (
    REQUEST_OPCODES,
    Frame,
    Opcode,
    decode_frame,
    encode_frame,
    error_frame,
    response_opcode,
)

PROOF_SIZE = 32  # ECB of a 16-byte nonce, PKCS#7 adds a full block
TOKEN_SIZE = 64
RECORD_IMAGE = 0x01


class LockState(Enum):
    FACTORY = "FACTORY"
    ENROLLED = "ENROLLED"
    SESSION_ACTIVE = "SESSION_ACTIVE"
    DFU_MODE = "DFU_MODE"


# Commands accepted per state and where a successful one leaves the lock.
# Anything absent is answered with WRONG_STATE.
TRANSITIONS: dict[LockState, dict[Opcode, LockState | str]] = {
    LockState.FACTORY: {
        Opcode.GET_RANDOM: LockState.FACTORY,
        Opcode.SESSION_INIT: LockState.SESSION_ACTIVE,
        Opcode.ATTEST_REQ: LockState.FACTORY,
    },
    LockState.ENROLLED: {
        Opcode.GET_RANDOM: LockState.ENROLLED,
        Opcode.SESSION_INIT: LockState.SESSION_ACTIVE,
        Opcode.ATTEST_REQ: LockState.ENROLLED,
    },
    LockState.SESSION_ACTIVE: {
        Opcode.ENROLL: LockState.ENROLLED,
        Opcode.UNLOCK: LockState.SESSION_ACTIVE,
        Opcode.ENROLL_FINGER: LockState.SESSION_ACTIVE,
        Opcode.ENTER_DFU: LockState.DFU_MODE,
        Opcode.SENSOR_CMD: LockState.SESSION_ACTIVE,
        Opcode.ATTEST_REQ: LockState.SESSION_ACTIVE,
    },
    LockState.DFU_MODE: {
        Opcode.DFU_DATA: LockState.DFU_MODE,
        Opcode.DFU_EXECUTE: "base",  # back to ENROLLED, or FACTORY if never enrolled
        Opcode.ATTEST_REQ: LockState.DFU_MODE,
    },
}

SESSION_COMMANDS = frozenset(
    {Opcode.ENROLL, Opcode.UNLOCK, Opcode.ENROLL_FINGER, Opcode.ENTER_DFU, Opcode.SENSOR_CMD}
)


@dataclass(frozen=True)
class DeviceIdentity:
    serial: bytes
    key: SymmetricKey

    def __post_init__(self) -> None:
        if len(self.serial) != 8:
            raise ValueError("serial must be 8 bytes")


@dataclass
class SessionContext:
    session_key: SymmetricKey
    nonce: bytes
    origin: LockState
    cipher: SessionCipher


@dataclass(frozen=True)
class TrustAnchors:
    """Public keys burned in at manufacture."""

    firmware_key: Optional[bytes]
    cloud_key: Optional[bytes]


@dataclass(frozen=True)
class AttestationIdentity:
    """Manufacturer-issued device signing key plus its certificate
    (manufacturer signature over hardware_id || device verification key).

    Beacon reply: hardware_id(8) | device_vk(32) | cert(64) | fw_digest(32)
    | sig(64), the signature covering hardware_id || challenge || fw_digest.
    """

    keypair: cryptobox.SigningKeyPair
    certificate: bytes


@dataclass(frozen=True)
class DebugDump:
    firmware_image: bytes
    identity: Optional[DeviceIdentity]
    templates: list[bytes]


class BroadcastChannel:
    """Append-only radio log of length-prefixed records (u32 LE length)."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._count = 0
        self._mutex = threading.Lock()

    def emit(self, record: bytes) -> None:
        with self._mutex:
            self._buf += struct.pack("<I", len(record)) + record
            self._count += 1

    def read(self, offset: int = 0) -> tuple[list[bytes], int]:
        """Records after byte ``offset`` and the new offset."""
        with self._mutex:
            data = bytes(self._buf)
        records = []
        while offset + 4 <= len(data):
            (n,) = struct.unpack_from("<I", data, offset)
            records.append(data[offset + 4 : offset + 4 + n])
            offset += 4 + n
        return records, offset

    def __len__(self) -> int:
        return self._count

    @property
    def size(self) -> int:
        return len(self._buf)


def image_record(image: FingerprintImage) -> bytes:
    return struct.pack("<BHH", RECORD_IMAGE, image.width, image.height) + image.pixels


class Lock:
    def __init__(
        self,
        *,
        hardware_id: bytes,
        profile: SecurityProfile,
        factory_key: SymmetricKey,
        firmware: InstalledFirmware,
        trust: TrustAnchors,
        broadcast: BroadcastChannel,
        rng: random.Random,
        attestation: Optional[AttestationIdentity] = None,
    ):
        self.hardware_id = bytes(hardware_id)
        self.profile = profile
        self.factory_key = factory_key
        self.firmware = firmware
        self.trust = trust
        self.broadcast = broadcast
        self.attestation = attestation if profile.attestation else None
        self._rng = rng
        self.sensor = FingerprintSensor(profile.sensor_class, rng)
        self.state = LockState.FACTORY
        self.identity: Optional[DeviceIdentity] = None
        self.session: Optional[SessionContext] = None
        self.pending_nonce: Optional[bytes] = None
        self.bolt_open = False
        self.tamper_flag = False
        self.events: list[tuple[str, str]] = []
        self._button_pressed = False
        self._dfu_buffer = bytearray()
        self._mutex = threading.RLock()
        self._deferred: Optional[Callable[[], None]] = None
        self._handlers: dict[Opcode, Callable[[bytes], bytes]] = {
            Opcode.GET_RANDOM: self._cmd_get_random,
            Opcode.SESSION_INIT: self._cmd_session_init,
            Opcode.ENROLL: self._cmd_enroll,
            Opcode.UNLOCK: self._cmd_unlock,
            Opcode.ENROLL_FINGER: self._cmd_enroll_finger,
            Opcode.ENTER_DFU: self._cmd_enter_dfu,
            Opcode.DFU_DATA: self._cmd_dfu_data,
            Opcode.DFU_EXECUTE: self._cmd_dfu_execute,
            Opcode.SENSOR_CMD: self._cmd_sensor,
            Opcode.ATTEST_REQ: self._cmd_attest,
        }

    # -- radio side ---------------------------------------------------------

    def handle_bytes(self, data: bytes) -> bytes:
        try:
            frame = decode_frame(data)
        except FrameError as exc:
            return encode_frame(error_frame(exc.code))
        return encode_frame(self.handle_frame(frame))

    def handle_frame(self, frame: Frame) -> Frame:
        with self._mutex:
            try:
                return self._dispatch(frame)
            except LockLabError as exc:
                self._log("error", f"0x{frame.opcode:02X} {exc.code.name}")
                return error_frame(exc.code)

    def _dispatch(self, frame: Frame) -> Frame:
        self._deferred = None
        if frame.opcode not in REQUEST_OPCODES:
            raise LockLabError(ErrorCode.UNKNOWN_OPCODE)
        opcode = Opcode(frame.opcode)
        if opcode not in TRANSITIONS[self.state]:
            raise LockLabError(ErrorCode.WRONG_STATE, f"{opcode.name} in {self.state.value}")
        if opcode in SESSION_COMMANDS:
            session = self.session
            assert session is not None
            body = session.cipher.open(opcode, frame.payload)
            reply = session.cipher.seal(response_opcode(opcode), self._handlers[opcode](body))
        else:
            reply = self._handlers[opcode](frame.payload)
        if self._deferred is not None:
            action, self._deferred = self._deferred, None
            action()
        return Frame(response_opcode(opcode), reply)

    @property
    def base_state(self) -> LockState:
        return LockState.ENROLLED if self.identity is not None else LockState.FACTORY

    def _set_state(self, state: LockState) -> None:
        if state is not LockState.SESSION_ACTIVE:
            self.session = None
        self.sensor.awake = state is LockState.SESSION_ACTIVE
        self.state = state

    def _log(self, event: str, detail: str = "") -> None:
        self.events.append((event, detail))

    def _cmd_get_random(self, _payload: bytes) -> bytes:
        self.pending_nonce = self._rng.randbytes(16)
        flags = CIPHER_FLAG_GCM if self.profile.session_cipher == "gcm" else 0
        if self.identity is not None:
            flags |= ENROLLED_FLAG
        return self.pending_nonce + self.hardware_id + bytes([flags])

    def _cmd_session_init(self, proof: bytes) -> bytes:
        if self.pending_nonce is None:
            raise LockLabError(ErrorCode.NO_PENDING_NONCE)
        nonce, self.pending_nonce = self.pending_nonce, None
        if self.state is LockState.FACTORY:
            key, serial, mode = self.factory_key, self.hardware_id, self.profile.enrollment_auth
        else:
            assert self.identity is not None
            key, serial, mode = self.identity.key, self.identity.serial, self.profile.session_auth
        session_key = cryptobox.derive_session_key(key, serial, nonce)
        expected = cryptobox.ecb_encrypt(session_key, nonce)
        if len(proof) not in (PROOF_SIZE, PROOF_SIZE + TOKEN_SIZE):
            raise LockLabError(ErrorCode.AUTH_FAILED, "malformed proof")
        if not hmac.compare_digest(proof[:PROOF_SIZE], expected):
            raise LockLabError(ErrorCode.AUTH_FAILED, "proof mismatch")
        if mode == "mutual_auth":
            token = proof[PROOF_SIZE:]
            if not (
                token
                and self.trust.cloud_key
                and cryptobox.verify(self.trust.cloud_key, serial + nonce, token)
            ):
                raise LockLabError(ErrorCode.AUTH_FAILED, "missing or invalid cloud authorization")
        origin = self.state
        self._set_state(LockState.SESSION_ACTIVE)
        self.session = SessionContext(
            session_key, nonce, origin,
            SessionCipher(session_key, self.profile.session_cipher, LOCK_ENDPOINT, PEER_ENDPOINT),
        )
        self._log("session", origin.value.lower())
        return b""

    def _cmd_enroll(self, body: bytes) -> bytes:
        assert self.session is not None
        if self.session.origin is not LockState.FACTORY:
            raise LockLabError(ErrorCode.WRONG_STATE, "already enrolled")
        if len(body) != 24:
            raise LockLabError(ErrorCode.BAD_REQUEST, "enroll body must be serial(8) || key(16)")
        self.identity = DeviceIdentity(body[:8], SymmetricKey(body[8:]))
        self._log("enrolled", self.identity.serial.hex())
        # reply is sealed by _dispatch before the session is dropped
        self._after_reply(lambda: self._set_state(LockState.ENROLLED))
        return b""

    def _cmd_unlock(self, _body: bytes) -> bytes:
        self.bolt_open = True
        self._log("unlock", "session")
        return b""

    def _cmd_enroll_finger(self, body: bytes) -> bytes:
        slot = self.sensor.capture(body.decode(errors="replace"))
        enrolled = self.sensor.enroll_template(slot)
        self._log("finger_enrolled", str(enrolled))
        return bytes([enrolled])

    def _cmd_enter_dfu(self, _body: bytes) -> bytes:
        self._dfu_buffer = bytearray()
        self._after_reply(lambda: self._set_state(LockState.DFU_MODE))
        return b""

    def _cmd_dfu_data(self, chunk: bytes) -> bytes:
        if len(self._dfu_buffer) + len(chunk) > MAX_PACKAGE:
            self._set_state(self.base_state)
            raise LockLabError(ErrorCode.BAD_REQUEST, "package too large")
        self._dfu_buffer += chunk
        return b""

    def _cmd_dfu_execute(self, _payload: bytes) -> bytes:
        blob, self._dfu_buffer = bytes(self._dfu_buffer), bytearray()
        try:
            package = FirmwarePackage.from_bytes(blob)
            verify_package(
                package,
                integrity=self.profile.dfu_integrity,
                legacy_allowed=self.profile.legacy_dfu,
                verification_key=self.trust.firmware_key,
            )
        except LockLabError as exc:
            self._log("dfu_rejected", exc.detail)
            raise
        finally:
            self._set_state(self.base_state)
        self.firmware = InstalledFirmware.from_package(package)
        self._log("dfu_applied", f"{package.version} {package.behavior.value}")
        return package.version.encode()

    def _cmd_sensor(self, body: bytes) -> bytes:
        return self.sensor.handle_command(body)

    def _cmd_attest(self, challenge: bytes) -> bytes:
        if self.attestation is None:
            raise LockLabError(ErrorCode.NOT_SUPPORTED, "no attestation")
        if len(challenge) != 16:
            raise LockLabError(ErrorCode.BAD_REQUEST, "challenge must be 16 bytes")
        return self.attestation_response(challenge)

    def attestation_response(self, challenge: bytes) -> bytes:
        ident = self.attestation
        assert ident is not None
        digest = self.firmware.digest
        sig = cryptobox.sign(ident.keypair.signing_key, self.hardware_id + challenge + digest)
        return self.hardware_id + ident.keypair.verification_key + ident.certificate + digest + sig

    def _after_reply(self, action: Callable[[], None]) -> None:
        # run once the current reply has been sealed
        self._deferred = action

    def link_lost(self) -> None:
        """The peer disconnected: sessions and DFU transfers do not survive."""
        with self._mutex:
            self.pending_nonce = None
            if self.state in (LockState.SESSION_ACTIVE, LockState.DFU_MODE):
                self._dfu_buffer = bytearray()
                self._set_state(self.base_state)
                self._log("disconnect")

    # -- physical side ------------------------------------------------------

    def press_button(self) -> None:
        with self._mutex:
            self._button_pressed = True

    def touch(self, victim: str) -> bool:
        """A finger lands on the sensor. Returns whether a capture happened."""
        with self._mutex:
            awake = self.profile.wake_mode == "touch" or self._button_pressed
            self._button_pressed = False
            if not awake:
                self._log("touch_ignored", "asleep")
                return False
            was_awake = self.sensor.awake
            self.sensor.awake = True
            try:
                slot = self.sensor.capture(victim)
                if self.firmware.behavior is Behavior.DROPLOCK:
                    self._droplock_emit(slot)
                matched = self.sensor.match(slot)
                if matched is not None:
                    self.bolt_open = True
                    self._log("unlock", f"finger {matched}")
            finally:
                self.sensor.awake = was_awake
            return True

    def _droplock_emit(self, slot: int) -> None:
        try:
            image = self.sensor.get_image(slot)
        except LockLabError as exc:
            if exc.code is ErrorCode.ISOLATION_VIOLATION:
                self._log("BLOCKED_BY_ISOLATION", f"slot {slot}")
                return
            raise
        self.broadcast.emit(image_record(image))
        self._log("exfiltrated", f"slot {slot}")

    def debug_dump(self) -> DebugDump:
        """Probe the debug pads. Opening the case marks a tamper-evident unit."""
        with self._mutex:
            if self.profile.tamper_evident:
                self.tamper_flag = True
            if not self.profile.debug_port:
                raise LockLabError(ErrorCode.DEBUG_DISABLED)
            self._log("debug_dump")
            return DebugDump(self.firmware.image_bytes, self.identity, self.sensor.stored_templates())

    # -- harness only -------------------------------------------------------

    def factory_reset(self) -> None:
        with self._mutex:
            self.identity = None
            self.pending_nonce = None
            self.bolt_open = False
            self.sensor.clear_enrollments()
            self._set_state(LockState.FACTORY)
            self._log("factory_reset")

    def install_firmware(self, firmware: InstalledFirmware) -> None:
        with self._mutex:
            self.firmware = firmware
            self._log("firmware_installed", f"{firmware.version} {firmware.behavior.value}")
