"""Byte framing for the emulated BLE UART link.

Layout (all frames)::

    A5 | opcode | len (u16 LE) | payload[len] | crc16(opcode|len|payload) (u16 BE)

Responses reuse the request opcode with the high bit set; 0x7F carries an
error code.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from locklab.errors import ErrorCode, FrameError

MAGIC = 0xA5
MAX_PAYLOAD = 512
HEADER_SIZE = 4  # magic, opcode, u16 length
TRAILER_SIZE = 2
RESPONSE_BIT = 0x80


class Opcode(IntEnum):
    GET_RANDOM = 0x01
    SESSION_INIT = 0x02
    ENROLL = 0x03
    UNLOCK = 0x04
    ENROLL_FINGER = 0x05
    ENTER_DFU = 0x06
    DFU_DATA = 0x07
    DFU_EXECUTE = 0x08
    SENSOR_CMD = 0x09
    ATTEST_REQ = 0x0A
    ERROR = 0x7F


REQUEST_OPCODES = frozenset(op for op in Opcode if op != Opcode.ERROR)
REGISTERED_OPCODES = frozenset(
    {int(op) for op in Opcode} | {int(op) | RESPONSE_BIT for op in REQUEST_OPCODES}
)


def response_opcode(opcode: int) -> int:
    return opcode | RESPONSE_BIT


def _make_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        reg = byte << 8
        for _ in range(8):
            reg = ((reg << 1) ^ 0x1021) if reg & 0x8000 else (reg << 1)
        table.append(reg & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _make_table()


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


@dataclass(frozen=True)
class Frame:
    opcode: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def is_error(self) -> bool:
        return self.opcode == Opcode.ERROR


def error_frame(code: ErrorCode) -> Frame:
    return Frame(Opcode.ERROR, bytes([int(code)]))


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError(ErrorCode.FRAME_TOO_LARGE, f"{len(frame.payload)} > {MAX_PAYLOAD}")
    if frame.opcode not in REGISTERED_OPCODES:
        raise FrameError(ErrorCode.UNKNOWN_OPCODE, f"0x{frame.opcode:02X}")
    body = struct.pack("<BH", frame.opcode, len(frame.payload)) + frame.payload
    return bytes([MAGIC]) + body + struct.pack(">H", crc16(body))


def decode_frame(data: bytes) -> Frame:
    data = bytes(data)
    if not data:
        raise FrameError(ErrorCode.LENGTH_MISMATCH, "empty input")
    if data[0] != MAGIC:
        raise FrameError(ErrorCode.BAD_MAGIC, f"0x{data[0]:02X}")
    if len(data) < HEADER_SIZE + TRAILER_SIZE:
        raise FrameError(ErrorCode.LENGTH_MISMATCH, "truncated header")
    opcode, length = struct.unpack_from("<BH", data, 1)
    if length > MAX_PAYLOAD or len(data) != HEADER_SIZE + length + TRAILER_SIZE:
        raise FrameError(
            ErrorCode.LENGTH_MISMATCH,
            f"declared {length}, got {len(data) - HEADER_SIZE - TRAILER_SIZE}",
        )
    body = data[1 : HEADER_SIZE + length]
    (sent_crc,) = struct.unpack_from(">H", data, HEADER_SIZE + length)
    if crc16(body) != sent_crc:
        raise FrameError(ErrorCode.BAD_CRC)
    if opcode not in REGISTERED_OPCODES:
        raise FrameError(ErrorCode.UNKNOWN_OPCODE, f"0x{opcode:02X}")
    return Frame(opcode, body[3:])


def read_frame_bytes(read_exact: Callable[[int], bytes]) -> bytes:
    """Pull one encoded frame off a byte stream.

    ``read_exact(n)`` must return exactly n bytes or b"" on EOF. Resyncs are
    not attempted: a bad magic byte is returned as-is so decode_frame reports it.
    """
    head = read_exact(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        return b""
    if head[0] != MAGIC:
        return head
    (length,) = struct.unpack_from("<H", head, 2)
    if length > MAX_PAYLOAD:
        return head
    rest = read_exact(length + TRAILER_SIZE)
    return head + rest
