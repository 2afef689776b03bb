"""Hashing, signatures, and seeded key generation.

The rest of the system treats this module as an opaque contract: a 256-bit
hash, a signature scheme, and deterministic keypairs derived from 32-byte
seeds so simulations replay bit-exactly. SHA-256 and Ed25519 satisfy the
contract; nothing outside this file depends on the concrete algorithms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import CryptoError

DIGEST_SIZE = 32
SEED_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64


def hash_bytes(data: bytes) -> bytes:
    """256-bit digest of ``data``; rendering is ``.hex()`` (lowercase, 64 chars)."""
    return hashlib.sha256(data).digest()


def address_of(public_key: bytes) -> bytes:
    """Addresses are the hash of the public key."""
    return hash_bytes(public_key)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    address: bytes

    def __repr__(self) -> str:  # keep private key out of logs and transcripts
        return f"KeyPair(address={self.address.hex()[:16]}...)"


def keypair_from_seed(seed: bytes) -> KeyPair:
    """Deterministically derive a keypair from a 32-byte seed."""
    if len(seed) != SEED_SIZE:
        raise CryptoError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes_raw()
    return KeyPair(public_key=public, private_key=seed, address=address_of(public))


def sign(private_key: bytes, message: bytes) -> bytes:
    if len(private_key) != SEED_SIZE:
        raise CryptoError("malformed private key")
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` over ``message`` verifies under ``public_key``.

    Malformed key material raises CryptoError; a well-formed but wrong
    signature returns False.
    """
    if not isinstance(public_key, bytes) or len(public_key) != PUBLIC_KEY_SIZE:
        raise CryptoError("malformed public key")
    if not isinstance(signature, bytes):
        raise CryptoError("malformed signature")
    try:
        key = Ed25519PublicKey.from_public_bytes(public_key)
    except Exception as exc:  # pragma: no cover - library rejects rare byte patterns
        raise CryptoError(f"malformed public key: {exc}") from exc
    try:
        key.verify(signature, message)
        return True
    except InvalidSignature:
        return False
