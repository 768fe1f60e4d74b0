"""Low-level cryptographic primitives shared by the ABE layer and the name system.

Authenticated encryption uses ChaCha20-Poly1305 behind a 24-byte random
nonce: the long nonce is folded into a per-message subkey via HKDF, so a
single content key stays collision-safe under random nonces (the same
construction XChaCha20 uses, built from primitives available in
`cryptography`).
"""

from __future__ import annotations

import hmac as _hmac
import hashlib

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

NONCE_SIZE = 24
KEY_SIZE = 32
AEAD_OVERHEAD = 16  # Poly1305 tag


class IntegrityError(Exception):
    """Authenticated decryption failed: wrong key or tampered ciphertext."""


def hkdf(ikm: bytes, info: bytes, salt: bytes | None = None, length: int = KEY_SIZE) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return _hmac.new(key, data, hashlib.sha256).digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _subkey(key: bytes, nonce: bytes, domain: bytes) -> ChaCha20Poly1305:
    if len(key) != KEY_SIZE:
        raise ValueError("content key must be 32 bytes")
    if len(nonce) != NONCE_SIZE:
        raise ValueError("nonce must be 24 bytes")
    return ChaCha20Poly1305(hkdf(key, info=b"aead-subkey:" + domain, salt=nonce))


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, domain: bytes, aad: bytes = b"") -> bytes:
    """Encrypt and authenticate. Returns ciphertext || 16-byte tag."""
    return _subkey(key, nonce, domain).encrypt(b"\x00" * 12, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, domain: bytes, aad: bytes = b"") -> bytes:
    """Inverse of aead_seal. Raises IntegrityError on any mismatch."""
    try:
        return _subkey(key, nonce, domain).decrypt(b"\x00" * 12, ciphertext, aad)
    except InvalidTag as e:
        raise IntegrityError("authenticated decryption failed") from e


# -- signing (Ed25519, 32-byte seeds and public keys, 64-byte signatures) --

def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def signing_public_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def sign(seed: bytes, message: bytes) -> bytes:
    return signing_key_from_seed(seed).sign(message)


def verify(public: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except Exception:
        return False


# -- key agreement (X25519) --

def kx_key_from_seed(seed: bytes) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(seed)


def kx_public_bytes(key: X25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def kx_private_bytes(key: X25519PrivateKey) -> bytes:
    return key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def kx_shared_key(private_seed: bytes, peer_public: bytes, info: bytes) -> bytes:
    shared = kx_key_from_seed(private_seed).exchange(X25519PublicKey.from_public_bytes(peer_public))
    return hkdf(shared, info=info)
