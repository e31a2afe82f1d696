"""Firmware update packages and the lock-side integrity check.

Container layout::

    b"LLFW" | u16 manifest_len | manifest (utf-8 key=value lines)
           | u32 image_len | image | u16 crc16(image) BE
           | u8 has_sig | [key_id(8) | ed25519 sig(64)]

The signature covers manifest bytes followed by the image, because the
manifest's ``behavior`` line is what decides what the lock runs.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from locklab import cryptobox
from locklab.errors import ErrorCode, LockLabError
from locklab.wire import crc16

PACKAGE_MAGIC = b"LLFW"
MAX_PACKAGE = 64 * 1024


class Behavior(str, Enum):
    LEGITIMATE = "legitimate"
    DROPLOCK = "droplock"


class PackageFormat(str, Enum):
    MODERN = "modern"
    LEGACY = "legacy"  # old SDK tooling: CRC16 only, no signature slot


@dataclass(frozen=True)
class FirmwarePackage:
    version: str
    behavior: Behavior
    image: bytes
    crc16: int
    format: PackageFormat = PackageFormat.MODERN
    signature: Optional[bytes] = None
    key_id: Optional[bytes] = None

    def manifest_bytes(self) -> bytes:
        return (
            f"format={self.format.value}\nversion={self.version}\nbehavior={self.behavior.value}\n"
        ).encode()

    def signed_message(self) -> bytes:
        return self.manifest_bytes() + self.image

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.image).digest()

    def to_bytes(self) -> bytes:
        manifest = self.manifest_bytes()
        out = bytearray(PACKAGE_MAGIC)
        out += struct.pack("<H", len(manifest)) + manifest
        out += struct.pack("<I", len(self.image)) + self.image
        out += struct.pack(">H", self.crc16)
        if self.signature is not None and self.format is PackageFormat.MODERN:
            out += b"\x01" + (self.key_id or b"\x00" * 8) + self.signature
        else:
            out += b"\x00"
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FirmwarePackage":
        try:
            return _parse(bytes(data))
        except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
            raise LockLabError(ErrorCode.INTEGRITY_FAILED, f"malformed package: {exc}") from None


def _parse(data: bytes) -> FirmwarePackage:
    if data[:4] != PACKAGE_MAGIC:
        raise ValueError("bad package magic")
    pos = 4
    (mlen,) = struct.unpack_from("<H", data, pos)
    pos += 2
    manifest = dict(
        line.split("=", 1) for line in data[pos : pos + mlen].decode().splitlines() if line
    )
    pos += mlen
    (ilen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    image = data[pos : pos + ilen]
    if len(image) != ilen:
        raise ValueError("truncated image")
    pos += ilen
    (crc,) = struct.unpack_from(">H", data, pos)
    pos += 2
    has_sig = data[pos]
    pos += 1
    signature = key = None
    if has_sig:
        key, signature = data[pos : pos + 8], data[pos + 8 : pos + 72]
        if len(signature) != 64:
            raise ValueError("truncated signature")
        pos += 72
    if pos != len(data):
        raise ValueError("trailing bytes")
    return FirmwarePackage(
        version=manifest["version"],
        behavior=Behavior(manifest["behavior"]),
        image=image,
        crc16=crc,
        format=PackageFormat(manifest["format"]),
        signature=signature,
        key_id=key,
    )


def build_package(
    image: bytes,
    *,
    version: str,
    behavior: Behavior | str,
    signer: Optional[cryptobox.SigningKeyPair] = None,
    fmt: PackageFormat | str = PackageFormat.MODERN,
) -> FirmwarePackage:
    pkg = FirmwarePackage(
        version=version,
        behavior=Behavior(behavior),
        image=bytes(image),
        crc16=crc16(image),
        format=PackageFormat(fmt),
    )
    if signer is None or pkg.format is PackageFormat.LEGACY:
        return pkg
    return FirmwarePackage(
        **{**pkg.__dict__, "signature": cryptobox.sign(signer.signing_key, pkg.signed_message()),
           "key_id": signer.key_id}
    )


def verify_package(
    pkg: FirmwarePackage,
    *,
    integrity: str,
    legacy_allowed: bool,
    verification_key: Optional[bytes],
) -> None:
    """Raise INTEGRITY_FAILED unless the lock's policy accepts ``pkg``."""
    if crc16(pkg.image) != pkg.crc16:
        raise LockLabError(ErrorCode.INTEGRITY_FAILED, "CRC16 mismatch")
    if pkg.format is PackageFormat.LEGACY:
        if not legacy_allowed:
            raise LockLabError(ErrorCode.INTEGRITY_FAILED, "legacy package format refused")
        return
    if integrity == "crc16":
        return
    if pkg.signature is None or verification_key is None:
        raise LockLabError(ErrorCode.INTEGRITY_FAILED, "unsigned package")
    if pkg.key_id != cryptobox.key_id(verification_key):
        raise LockLabError(ErrorCode.INTEGRITY_FAILED, "signed by an unknown key")
    if not cryptobox.verify(verification_key, pkg.signed_message(), pkg.signature):
        raise LockLabError(ErrorCode.INTEGRITY_FAILED, "bad signature")


@dataclass(frozen=True)
class InstalledFirmware:
    version: str
    behavior: Behavior
    image_bytes: bytes = field(repr=False)

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.image_bytes).digest()

    @classmethod
    def from_package(cls, pkg: FirmwarePackage) -> "InstalledFirmware":
        return cls(pkg.version, pkg.behavior, pkg.image)
