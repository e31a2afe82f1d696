"""Phone-app model: the legitimate client of the lock and the cloud.

The app never derives a session key itself. Every session starts with a
round trip to the cloud, which holds the derivation inputs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol

from locklab import cloud as cloudmod
from locklab.cloud import ApiChannel, client_channel, decode_response
from locklab.cryptobox import SymmetricKey
from locklab.errors import CloudError, ErrorCode, ProtocolError
from locklab.firmware import FirmwarePackage
from locklab.link import LockClient, SecureSession, open_session
from locklab.lock import DeviceIdentity


@dataclass(frozen=True)
class AppBinaryModel:
    embedded_static_key: SymmetricKey
    pinning_enforced: bool = True
    # tamper-resistant builds notice a repack and pin again at runtime
    tamper_resistant: bool = False
    repacked: bool = False

    @property
    def pins(self) -> bool:
        return self.pinning_enforced or (self.repacked and self.tamper_resistant)

    def repack_without_pinning(self) -> "AppBinaryModel":
        return replace(self, pinning_enforced=False, repacked=True)


def build_app_binary(cert_pinning: str) -> AppBinaryModel:
    return AppBinaryModel(
        embedded_static_key=cloudmod.STATIC_API_KEY,
        tamper_resistant=cert_pinning == "tamper_resistant",
    )


class Endpoint(Protocol):
    def exchange(self, data: bytes) -> bytes: ...


class App:
    def __init__(self, binary: AppBinaryModel, endpoint: Endpoint, rng: random.Random, *, api_mode: str):
        self.binary = binary
        self.endpoint = endpoint
        self.api_mode = api_mode
        self._rng = rng
        # hardware_id -> identity of locks this app enrolled
        self.devices: dict[bytes, DeviceIdentity] = {}

    # -- cloud side ---------------------------------------------------------

    def _exchange(self, data: bytes) -> bytes:
        if getattr(self.endpoint, "intercepting", False) and self.binary.pins:
            raise CloudError(ErrorCode.PINNING_BLOCKED, "server certificate does not match the pin")
        return self.endpoint.exchange(data)

    def api_channel(self) -> ApiChannel:
        return client_channel(self.api_mode, self._exchange, self._rng)

    def api_call(self, channel: ApiChannel, route: str, request: dict) -> dict:
        envelope = channel.wrap(route, json.dumps(request, sort_keys=True).encode())
        return decode_response(channel, self._exchange(envelope.to_bytes()))

    # -- flows --------------------------------------------------------------

    def enroll_flow(
        self,
        client: LockClient,
        account: str,
        *,
        rollback: Optional[Callable[[], None]] = None,
    ) -> DeviceIdentity:
        channel = self.api_channel()
        challenge = client.get_random()
        if challenge.enrolled and challenge.hardware_id in self.devices:
            # our own lock; someone else's shows up as a failed factory session
            raise ProtocolError(ErrorCode.WRONG_STATE, "lock already enrolled by this app", phase="enroll")
        issued = self.api_call(channel, "/session_key", {
            "phase": "enroll",
            "account": account,
            "hardware_id": challenge.hardware_id.hex(),
            "nonce": challenge.nonce.hex(),
        })
        session = open_session(client, challenge, SymmetricKey(bytes.fromhex(issued["key"])), _token(issued))
        identity = DeviceIdentity(self._rng.randbytes(8), SymmetricKey.random(self._rng))
        try:
            session.enroll(identity.serial, identity.key)
        finally:
            client.disconnect()
        try:
            self.api_call(channel, "/register", {
                "account": account,
                "serial": identity.serial.hex(),
                "key": identity.key.hex(),
            })
        except CloudError:
            # lock enrolled but cloud unaware: undo so neither side keeps it
            if rollback is not None:
                rollback()
            raise
        self.devices[challenge.hardware_id] = identity
        return identity

    def open_session(self, client: LockClient, account: str, serial: Optional[bytes] = None) -> SecureSession:
        channel = self.api_channel()
        challenge = client.get_random()
        if serial is None:
            try:
                serial = self.devices[challenge.hardware_id].serial
            except KeyError:
                raise CloudError(ErrorCode.NOT_REGISTERED, "lock unknown to this app") from None
        issued = self.api_call(channel, "/session_key", {
            "account": account,
            "serial": serial.hex(),
            "nonce": challenge.nonce.hex(),
        })
        return open_session(client, challenge, SymmetricKey(bytes.fromhex(issued["key"])), _token(issued))

    def unlock_flow(self, client: LockClient, account: str, serial: Optional[bytes] = None) -> bool:
        try:
            self.open_session(client, account, serial).unlock()
        finally:
            client.disconnect()
        return True

    def fetch_firmware(self, version: str) -> tuple[FirmwarePackage, dict]:
        channel = self.api_channel()
        meta = self.api_call(channel, "/firmware/meta", {"version": version})
        blob = self.api_call(channel, "/firmware/download", {"version": version})["package"]
        return FirmwarePackage.from_bytes(bytes.fromhex(blob)), meta

    def fota_flow(self, client: LockClient, account: str, version: str, serial: Optional[bytes] = None) -> str:
        package, _meta = self.fetch_firmware(version)
        try:
            session = self.open_session(client, account, serial)
            session.enter_dfu()
            client.send_package(package)
        finally:
            client.disconnect()
        return package.version


def _token(issued: dict) -> Optional[bytes]:
    return bytes.fromhex(issued["token"]) if "token" in issued else None
