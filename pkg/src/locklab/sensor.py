"""Emulated fingerprint reader chip.

Isolation classes follow the three-tier biometric model: class 1 exports raw
images over its UART, class 2 keeps raw data inside the chip, class 3 also
wraps stored templates under a chip-local key.
"""

from __future__ import annotations

import hashlib
import random
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from locklab.cryptobox import SymmetricKey, gcm_open, gcm_seal, nonce_for
from locklab.errors import ErrorCode, SensorError

IMAGE_WIDTH = 160
IMAGE_HEIGHT = 160
TEMPLATE_SIZE = 32
MAX_ENROLLED = 20
MAX_SLOTS = 16
IMAGE_CHUNK = 256

# sub-opcodes carried in SENSOR_CMD payloads
SUB_CAPTURE = 0x01
SUB_GET_IMAGE = 0x02
SUB_GET_TEMPLATE = 0x03
SUB_ENROLL = 0x04
SUB_MATCH = 0x05
NO_MATCH = 0x00

ALL_OPERATIONS = frozenset({"capture", "get_image", "get_template", "enroll", "match"})
RAW_EXPOSING_OPERATIONS = frozenset({"get_image"})
PERMITTED_OPERATIONS = {
    1: ALL_OPERATIONS,
    2: ALL_OPERATIONS - RAW_EXPOSING_OPERATIONS,
    3: ALL_OPERATIONS - RAW_EXPOSING_OPERATIONS,
}


@dataclass(frozen=True)
class FingerprintImage:
    pixels: bytes
    width: int = IMAGE_WIDTH
    height: int = IMAGE_HEIGHT

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixels", bytes(self.pixels))
        if len(self.pixels) != self.width * self.height:
            raise ValueError("pixel count does not match dimensions")


@dataclass(frozen=True)
class FingerprintTemplate:
    digest: bytes


def pseudo_image(victim: str) -> FingerprintImage:
    """Deterministic stand-in for a scan of ``victim``'s finger."""
    noise = hashlib.shake_256(b"locklab-fingerprint\x00" + victim.encode()).digest(
        IMAGE_WIDTH * IMAGE_HEIGHT
    )
    return FingerprintImage(noise)


def template_of(image: FingerprintImage) -> FingerprintTemplate:
    return FingerprintTemplate(hashlib.sha256(image.pixels).digest())


class FingerprintSensor:
    def __init__(self, isolation_class: int, rng: random.Random):
        if isolation_class not in PERMITTED_OPERATIONS:
            raise ValueError(f"isolation class must be 1, 2 or 3, got {isolation_class}")
        self.isolation_class = isolation_class
        self.awake = False
        self._slots: "OrderedDict[int, FingerprintImage]" = OrderedDict()
        self._next_slot = 1
        self._enrolled: dict[int, bytes] = {}
        # class 3 only: templates never leave the chip unwrapped
        self._wrap_key = SymmetricKey.random(rng) if isolation_class == 3 else None
        self._wrap_counter = 0

    def permits(self, operation: str) -> bool:
        return operation in PERMITTED_OPERATIONS[self.isolation_class]

    def _slot(self, slot: int) -> FingerprintImage:
        try:
            return self._slots[slot]
        except KeyError:
            raise SensorError(ErrorCode.NO_SUCH_SLOT, str(slot)) from None

    def capture(self, victim: str) -> int:
        if not self.awake:
            raise SensorError(ErrorCode.SENSOR_ASLEEP)
        slot = self._next_slot
        self._next_slot = self._next_slot % 0xFFFF + 1
        self._slots[slot] = pseudo_image(victim)
        while len(self._slots) > MAX_SLOTS:
            self._slots.popitem(last=False)
        return slot

    def get_image(self, slot: int) -> FingerprintImage:
        image = self._slot(slot)
        if not self.permits("get_image"):
            raise SensorError(
                ErrorCode.ISOLATION_VIOLATION, f"class {self.isolation_class} keeps raw images on-chip"
            )
        return image

    def get_template(self, slot: int) -> FingerprintTemplate:
        return template_of(self._slot(slot))

    def enroll_template(self, slot: int) -> int:
        template = self.get_template(slot)
        if len(self._enrolled) >= MAX_ENROLLED:
            raise SensorError(ErrorCode.STORE_FULL)
        enrolled_id = len(self._enrolled) + 1
        self._enrolled[enrolled_id] = self._store_form(template.digest)
        return enrolled_id

    def match(self, slot: int) -> Optional[int]:
        digest = self.get_template(slot).digest
        for enrolled_id, stored in self._enrolled.items():
            if self._unwrap(stored) == digest:
                return enrolled_id
        return None

    def clear_enrollments(self) -> None:
        self._enrolled.clear()

    def stored_templates(self) -> list[bytes]:
        """What a dump of lock memory would reveal."""
        return list(self._enrolled.values())

    def _store_form(self, digest: bytes) -> bytes:
        if self._wrap_key is None:
            return digest
        self._wrap_counter += 1
        nonce = nonce_for(0x53454E53, self._wrap_counter)
        return nonce + gcm_seal(self._wrap_key, nonce, b"template", digest)

    def _unwrap(self, stored: bytes) -> bytes:
        if self._wrap_key is None:
            return stored
        return gcm_open(self._wrap_key, stored[:12], b"template", stored[12:])

    def handle_command(self, payload: bytes) -> bytes:
        """Serve one SENSOR_CMD payload: sub-opcode byte then arguments."""
        if not payload:
            raise SensorError(ErrorCode.NO_SUCH_SLOT, "empty sensor command")
        sub, args = payload[0], payload[1:]
        if sub == SUB_CAPTURE:
            return struct.pack("<H", self.capture(args.decode()))
        slot = struct.unpack_from("<H", args)[0] if len(args) >= 2 else -1
        if sub == SUB_GET_IMAGE:
            offset = struct.unpack_from("<H", args, 2)[0] if len(args) >= 4 else 0
            return self.get_image(slot).pixels[offset : offset + IMAGE_CHUNK]
        if sub == SUB_GET_TEMPLATE:
            return self.get_template(slot).digest
        if sub == SUB_ENROLL:
            return bytes([self.enroll_template(slot)])
        if sub == SUB_MATCH:
            found = self.match(slot)
            return bytes([found if found is not None else NO_MATCH])
        raise SensorError(ErrorCode.UNKNOWN_OPCODE, f"sensor sub-op 0x{sub:02X}")
