"""Cryptographic primitives for both security profiles.

The vulnerable side (AES-ECB, HMAC session derivation from observable
inputs) is deliberately weak. The hardened side uses AES-GCM, X25519 key
agreement hashed with SHA-256, and Ed25519 signatures.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass
from typing import Union

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from locklab.errors import CryptoError, ErrorCode

BLOCK = 16
KEY_SIZE = 16
GCM_NONCE_SIZE = 12
GCM_TAG_SIZE = 16

KEY_AGREEMENT_SCHEME = "X25519 + SHA-256 (truncated to 16 bytes)"
SIGNATURE_SCHEME = "Ed25519"


@dataclass(frozen=True)
class SymmetricKey:
    material: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "material", bytes(self.material))
        if len(self.material) != KEY_SIZE:
            raise ValueError(f"symmetric key must be {KEY_SIZE} bytes, got {len(self.material)}")

    @classmethod
    def random(cls, rng: random.Random) -> "SymmetricKey":
        return cls(rng.randbytes(KEY_SIZE))

    def hex(self) -> str:
        return self.material.hex()


KeyLike = Union[SymmetricKey, bytes]


def _raw(key: KeyLike) -> bytes:
    return key.material if isinstance(key, SymmetricKey) else SymmetricKey(key).material


def aes_block_encrypt(key: KeyLike, block: bytes) -> bytes:
    """Single raw AES-128 block operation, no padding. Used for known-answer checks."""
    if len(block) != BLOCK:
        raise CryptoError(ErrorCode.BAD_LENGTH, "raw block must be 16 bytes")
    enc = Cipher(algorithms.AES(_raw(key)), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def ecb_encrypt(key: KeyLike, plaintext: bytes) -> bytes:
    padder = padding.PKCS7(BLOCK * 8).padder()
    padded = padder.update(bytes(plaintext)) + padder.finalize()
    enc = Cipher(algorithms.AES(_raw(key)), modes.ECB()).encryptor()
    return enc.update(padded) + enc.finalize()


def ecb_decrypt(key: KeyLike, ciphertext: bytes) -> bytes:
    if not ciphertext or len(ciphertext) % BLOCK:
        raise CryptoError(ErrorCode.BAD_LENGTH, f"{len(ciphertext)} bytes is not a positive multiple of 16")
    dec = Cipher(algorithms.AES(_raw(key)), modes.ECB()).decryptor()
    padded = dec.update(bytes(ciphertext)) + dec.finalize()
    unpadder = padding.PKCS7(BLOCK * 8).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise CryptoError(ErrorCode.BAD_PADDING) from None


def gcm_seal(key: KeyLike, nonce: bytes, associated_data: bytes, plaintext: bytes) -> bytes:
    if len(nonce) != GCM_NONCE_SIZE:
        raise ValueError("GCM nonce must be 12 bytes")
    return AESGCM(_raw(key)).encrypt(nonce, bytes(plaintext), bytes(associated_data))


def gcm_open(key: KeyLike, nonce: bytes, associated_data: bytes, sealed: bytes) -> bytes:
    # one failure mode for every tag/format problem
    if len(nonce) != GCM_NONCE_SIZE or len(sealed) < GCM_TAG_SIZE:
        raise CryptoError(ErrorCode.AUTH_FAILED)
    try:
        return AESGCM(_raw(key)).decrypt(nonce, bytes(sealed), bytes(associated_data))
    except InvalidTag:
        raise CryptoError(ErrorCode.AUTH_FAILED) from None


class NonceSequence:
    """12-byte GCM nonces: 4-byte endpoint id || 8-byte big-endian counter.

    Two endpoints sharing a key never collide as long as their ids differ.
    """

    def __init__(self, endpoint_id: int, start: int = 0):
        self.endpoint_id = endpoint_id & 0xFFFFFFFF
        self.counter = start

    def next(self) -> bytes:
        self.counter += 1
        return nonce_for(self.endpoint_id, self.counter)


def nonce_for(endpoint_id: int, counter: int) -> bytes:
    return endpoint_id.to_bytes(4, "big") + counter.to_bytes(8, "big")


def derive_session_key(device_key: KeyLike, serial: bytes, nonce: bytes) -> SymmetricKey:
    if len(serial) != 8 or len(nonce) != 16:
        raise ValueError("serial must be 8 bytes and nonce 16 bytes")
    mac = hmac.new(_raw(device_key), bytes(serial) + bytes(nonce), hashlib.sha256).digest()
    return SymmetricKey(mac[:KEY_SIZE])


@dataclass(frozen=True)
class KeyAgreementKeyPair:
    private: bytes
    public: bytes

    @classmethod
    def generate(cls, rng: random.Random) -> "KeyAgreementKeyPair":
        return cls.from_private(rng.randbytes(32))

    @classmethod
    def from_private(cls, private: bytes) -> "KeyAgreementKeyPair":
        sk = X25519PrivateKey.from_private_bytes(bytes(private))
        pub = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        raw = sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return cls(raw, pub)


def dh_handshake(local: KeyAgreementKeyPair, remote_public: bytes) -> SymmetricKey:
    if len(remote_public) != 32:
        raise CryptoError(ErrorCode.INVALID_PUBLIC, f"expected 32 bytes, got {len(remote_public)}")
    try:
        shared = X25519PrivateKey.from_private_bytes(local.private).exchange(
            X25519PublicKey.from_public_bytes(bytes(remote_public))
        )
    except ValueError as exc:  # low-order points yield an all-zero secret
        raise CryptoError(ErrorCode.INVALID_PUBLIC, str(exc)) from None
    return SymmetricKey(hashlib.sha256(b"locklab-dh" + shared).digest()[:KEY_SIZE])


@dataclass(frozen=True)
class SigningKeyPair:
    signing_key: bytes
    verification_key: bytes

    @classmethod
    def generate(cls, rng: random.Random) -> "SigningKeyPair":
        sk = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        vk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        raw = sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return cls(raw, vk)

    @property
    def key_id(self) -> bytes:
        return key_id(self.verification_key)


def key_id(verification_key: bytes) -> bytes:
    return hashlib.sha256(verification_key).digest()[:8]


def sign(signing_key: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(signing_key).sign(bytes(message))


def verify(verification_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(bytes(verification_key)).verify(
            bytes(signature), bytes(message)
        )
    except (InvalidSignature, ValueError):
        return False
    return True
