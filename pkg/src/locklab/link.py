"""Peer side of the lock link: transports, a frame client, and session crypto.

The same :class:`SessionCipher` runs inside the lock, so both ends agree on
the payload format by construction:

* ``ecb``  payload = AES-ECB(key, opcode || body). No counters, so replays work.
* ``gcm``  payload = counter (u64 LE) || AES-GCM(key, endpoint || counter,
  ad = opcode || counter, body). Counters must strictly increase.
"""

from __future__ import annotations

import queue
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Optional, Protocol

from locklab import cryptobox
from locklab.errors import CryptoError, ErrorCode, LockLabError, ProtocolError
from locklab.firmware import FirmwarePackage
from locklab.sensor import SUB_CAPTURE, SUB_GET_IMAGE
from locklab.wire import (
    MAX_PAYLOAD,
    Frame,
    Opcode,
    decode_frame,
    encode_frame,
    read_frame_bytes,
    response_opcode,
)

LOCK_ENDPOINT = 0x4C4F434B
PEER_ENDPOINT = 0x50454552
CIPHER_FLAG_GCM = 0x01
ENROLLED_FLAG = 0x02
DFU_CHUNK = 480

PHASES = {
    Opcode.GET_RANDOM: "get_random",
    Opcode.SESSION_INIT: "session_init",
    Opcode.ENROLL: "enroll",
    Opcode.UNLOCK: "unlock",
    Opcode.ENROLL_FINGER: "enroll_finger",
    Opcode.ENTER_DFU: "enter_dfu",
    Opcode.DFU_DATA: "dfu_receive",
    Opcode.DFU_EXECUTE: "dfu_receive",
    Opcode.SENSOR_CMD: "sensor_cmd",
    Opcode.ATTEST_REQ: "attest",
}


class SessionCipher:
    def __init__(self, key: cryptobox.SymmetricKey, mode: str, local_endpoint: int, remote_endpoint: int):
        if mode not in ("ecb", "gcm"):
            raise ValueError(mode)
        self.key = key
        self.mode = mode
        self.local_endpoint = local_endpoint
        self.remote_endpoint = remote_endpoint
        self.send_counter = 0
        self.recv_counter = 0

    def seal(self, opcode: int, body: bytes) -> bytes:
        if self.mode == "ecb":
            return cryptobox.ecb_encrypt(self.key, bytes([opcode]) + body)
        self.send_counter += 1
        ctr = struct.pack("<Q", self.send_counter)
        nonce = cryptobox.nonce_for(self.local_endpoint, self.send_counter)
        return ctr + cryptobox.gcm_seal(self.key, nonce, bytes([opcode]) + ctr, body)

    def open(self, opcode: int, payload: bytes) -> bytes:
        try:
            if self.mode == "ecb":
                plain = cryptobox.ecb_decrypt(self.key, payload)
                if not plain or plain[0] != opcode:
                    raise LockLabError(ErrorCode.DECRYPT_FAILED, "opcode binding mismatch")
                return plain[1:]
            if len(payload) < 8:
                raise LockLabError(ErrorCode.DECRYPT_FAILED, "short payload")
            ctr = payload[:8]
            (counter,) = struct.unpack("<Q", ctr)
            if counter <= self.recv_counter:
                raise LockLabError(ErrorCode.DECRYPT_FAILED, f"stale counter {counter}")
            nonce = cryptobox.nonce_for(self.remote_endpoint, counter)
            body = cryptobox.gcm_open(self.key, nonce, bytes([opcode]) + ctr, payload[8:])
            self.recv_counter = counter
            return body
        except CryptoError as exc:
            raise LockLabError(ErrorCode.DECRYPT_FAILED, exc.code.name) from None


class Transport(Protocol):
    name: str

    def roundtrip(self, data: bytes) -> bytes: ...

    def disconnect(self) -> None: ...

    def close(self) -> None: ...


class _FrameHandler(Protocol):
    def handle_bytes(self, data: bytes) -> bytes: ...

    def link_lost(self) -> None: ...


_DISCONNECT = object()


class InProcTransport:
    """Request/response queue pair served by one worker thread per lock."""

    name = "inproc"

    def __init__(self, device: _FrameHandler):
        self._requests: "queue.Queue[object]" = queue.Queue()
        self._responses: "queue.Queue[bytes]" = queue.Queue()
        self._mutex = threading.Lock()
        self._worker = threading.Thread(target=self._serve, args=(device,), daemon=True)
        self._worker.start()

    def _serve(self, device: _FrameHandler) -> None:
        while (data := self._requests.get()) is not None:
            if data is _DISCONNECT:
                device.link_lost()
                self._responses.put(b"")
            else:
                self._responses.put(device.handle_bytes(data))

    def roundtrip(self, data: bytes) -> bytes:
        with self._mutex:
            self._requests.put(bytes(data))
            return self._responses.get(timeout=10)

    def disconnect(self) -> None:
        with self._mutex:
            self._requests.put(_DISCONNECT)
            self._responses.get(timeout=10)

    def close(self) -> None:
        self._requests.put(None)
        self._worker.join(timeout=5)


class LoopbackTransport:
    """Frames over a TCP byte stream on 127.0.0.1."""

    name = "loopback"

    def __init__(self, device: _FrameHandler):
        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                stream = self.request.makefile("rb")
                try:
                    while raw := read_frame_bytes(stream.read):
                        self.request.sendall(device.handle_bytes(raw))
                finally:
                    device.link_lost()
                    self.server.ended.release()  # type: ignore[attr-defined]

        self._server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._server.ended = threading.Semaphore(0)  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.02,), daemon=True)
        self._thread.start()
        self._mutex = threading.Lock()
        self._connect()

    def _connect(self) -> None:
        self._sock = socket.create_connection(self._server.server_address, timeout=10)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._stream = self._sock.makefile("rb")

    def roundtrip(self, data: bytes) -> bytes:
        with self._mutex:
            self._sock.sendall(data)
            return read_frame_bytes(self._stream.read)

    def disconnect(self) -> None:
        """Drop the connection, wait until the lock has noticed, reconnect."""
        with self._mutex:
            self._stream.close()
            self._sock.close()
            self._server.ended.acquire(timeout=10)  # type: ignore[attr-defined]
            self._connect()

    def close(self) -> None:
        self._stream.close()
        self._sock.close()
        self._server.shutdown()
        self._server.server_close()


TRANSPORTS = {"inproc": InProcTransport, "loopback": LoopbackTransport}


def open_transport(device: _FrameHandler, kind: str = "inproc") -> Transport:
    try:
        return TRANSPORTS[kind](device)
    except KeyError:
        raise ValueError(f"unknown transport {kind!r}") from None


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    hardware_id: bytes
    cipher: str
    enrolled: bool = False


class LockClient:
    """Speaks frames to one lock. Knows nothing the radio would not reveal."""

    def __init__(self, transport: Transport):
        self.transport = transport
        self.sent: list[bytes] = []

    def send_raw(self, data: bytes) -> Frame:
        self.sent.append(bytes(data))
        return decode_frame(self.transport.roundtrip(data))

    def request(self, opcode: int, payload: bytes = b"") -> bytes:
        reply = self.send_raw(encode_frame(Frame(opcode, payload)))
        if reply.is_error:
            code = ErrorCode(reply.payload[0]) if reply.payload else ErrorCode.BAD_REQUEST
            raise ProtocolError(code, phase=PHASES.get(opcode))
        if reply.opcode != response_opcode(opcode):
            raise ProtocolError(ErrorCode.UNKNOWN_OPCODE, f"reply 0x{reply.opcode:02X}")
        return reply.payload

    def disconnect(self) -> None:
        """End the radio connection; the lock drops any session."""
        self.transport.disconnect()

    def get_random(self) -> Challenge:
        body = self.request(Opcode.GET_RANDOM)
        cipher = "gcm" if body[24] & CIPHER_FLAG_GCM else "ecb"
        return Challenge(body[:16], body[16:24], cipher, bool(body[24] & ENROLLED_FLAG))

    def attest(self, challenge: bytes) -> bytes:
        return self.request(Opcode.ATTEST_REQ, challenge)

    def send_package(self, package: FirmwarePackage) -> None:
        blob = package.to_bytes()
        for off in range(0, len(blob), DFU_CHUNK):
            self.request(Opcode.DFU_DATA, blob[off : off + DFU_CHUNK])
        self.request(Opcode.DFU_EXECUTE)


def session_proof(key: cryptobox.SymmetricKey, nonce: bytes, token: Optional[bytes] = None) -> bytes:
    return cryptobox.ecb_encrypt(key, nonce) + (token or b"")


class SecureSession:
    """Client end of an established session."""

    def __init__(self, client: LockClient, key: cryptobox.SymmetricKey, cipher: str):
        self.client = client
        self.cipher = SessionCipher(key, cipher, PEER_ENDPOINT, LOCK_ENDPOINT)

    def call(self, opcode: int, body: bytes = b"") -> bytes:
        payload = self.cipher.seal(opcode, body)
        reply = self.client.request(opcode, payload)
        return self.cipher.open(response_opcode(opcode), reply)

    def unlock(self) -> None:
        self.call(Opcode.UNLOCK)

    def enroll(self, serial: bytes, key: cryptobox.SymmetricKey) -> None:
        self.call(Opcode.ENROLL, bytes(serial) + key.material)

    def enroll_finger(self, victim: str) -> int:
        return self.call(Opcode.ENROLL_FINGER, victim.encode())[0]

    def enter_dfu(self) -> None:
        self.call(Opcode.ENTER_DFU)

    def sensor(self, sub: int, args: bytes = b"") -> bytes:
        return self.call(Opcode.SENSOR_CMD, bytes([sub]) + args)

    def capture(self, victim: str) -> int:
        return struct.unpack("<H", self.sensor(SUB_CAPTURE, victim.encode()))[0]

    def read_image(self, slot: int, size: int) -> bytes:
        out = bytearray()
        while len(out) < size:
            chunk = self.sensor(SUB_GET_IMAGE, struct.pack("<HH", slot, len(out)))
            if not chunk:
                break
            out += chunk
        return bytes(out)


def open_session(
    client: LockClient,
    challenge: Challenge,
    key: cryptobox.SymmetricKey,
    token: Optional[bytes] = None,
) -> SecureSession:
    client.request(Opcode.SESSION_INIT, session_proof(key, challenge.nonce, token))
    return SecureSession(client, key, challenge.cipher)


assert DFU_CHUNK <= MAX_PAYLOAD
