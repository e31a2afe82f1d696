from __future__ import annotations

from enum import IntEnum
from typing import Optional


class ErrorCode(IntEnum):
    """Every failure the testbed can report.

    The integer value is what travels in the payload of an ERROR frame, so
    values must stay stable once assigned.
    """

    # framing
    FRAME_TOO_LARGE = 0x01
    BAD_MAGIC = 0x02
    LENGTH_MISMATCH = 0x03
    BAD_CRC = 0x04
    UNKNOWN_OPCODE = 0x05
    # crypto
    BAD_LENGTH = 0x10
    BAD_PADDING = 0x11
    AUTH_FAILED = 0x12
    INVALID_PUBLIC = 0x13
    # sensor
    SENSOR_ASLEEP = 0x20
    ISOLATION_VIOLATION = 0x21
    NO_SUCH_SLOT = 0x22
    STORE_FULL = 0x23
    # lock
    WRONG_STATE = 0x30
    DECRYPT_FAILED = 0x31
    NO_PENDING_NONCE = 0x32
    INTEGRITY_FAILED = 0x33
    DEBUG_DISABLED = 0x34
    NOT_SUPPORTED = 0x35
    BAD_REQUEST = 0x36
    # cloud
    ALREADY_REGISTERED = 0x40
    NOT_REGISTERED = 0x41
    NOT_OWNER = 0x42
    NO_SUCH_VERSION = 0x43
    CLOUD_UNREACHABLE = 0x44
    # attacker / harness verdicts
    PINNING_BLOCKED = 0x50
    UNKNOWN_SCENARIO = 0x51
    TAMPER_DETECTED = 0x52
    NOTHING_HARVESTED = 0x53
    HARVEST_MISMATCH = 0x54
    IMPOSTOR_DETECTED = 0x55
    EXPECTATION_FAILED = 0x56


class LockLabError(Exception):
    """Base error. ``code`` is machine-readable, ``phase`` names the protocol
    step that produced it when known (``session_init``, ``dfu_receive``...)."""

    def __init__(self, code: ErrorCode, detail: str = "", *, phase: Optional[str] = None):
        self.code = ErrorCode(code)
        self.detail = detail
        self.phase = phase
        msg = self.code.name if not detail else f"{self.code.name}: {detail}"
        super().__init__(msg)


class FrameError(LockLabError):
    pass


class CryptoError(LockLabError):
    pass


class SensorError(LockLabError):
    pass


class ProtocolError(LockLabError):
    """Raised client-side when the lock answers with an ERROR frame."""


class CloudError(LockLabError):
    pass


class AttackError(LockLabError):
    pass
