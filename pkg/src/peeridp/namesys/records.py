"""Records: label-encrypted, per-label-signed name system entries.

Three derivations give the system its privacy properties:

* query key   = SHA-256(namespace public key || label) — storage address;
  a party holding only the digest learns neither input.
* record key  = HKDF(namespace public key || label) — symmetric content key;
  knowing (namespace, label) IS the read capability.
* signing key = PRF(namespace private seed, label) — a per-label Ed25519 key;
  its public half travels with the blob so any node can verify the record
  without learning which namespace published it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from enum import IntEnum

from .. import crypto

PAYLOAD_LIMIT = 64 * 1024
SIGNATURE_SIZE = 64
HEADER_SIZE = 32 + 4 + 8 + 4  # derived pub, type, expiration, payload length
BLOB_MIN_SIZE = HEADER_SIZE + crypto.NONCE_SIZE + crypto.AEAD_OVERHEAD + SIGNATURE_SIZE

_RECORD_KEY_INFO = b"ns-record-key"
_RECORD_DOMAIN = b"ns-record"
_LABEL_SIGN_PREFIX = b"ns-label-sign:"


class RecordType(IntEnum):
    ID_ATTR = 1
    ABE_KEY = 2


RECORD_TYPE_ID_ATTR = RecordType.ID_ATTR
RECORD_TYPE_ABE_KEY = RecordType.ABE_KEY


class RecordError(Exception):
    pass


@dataclass(frozen=True)
class Namespace:
    """An owned namespace: the Ed25519 seed is the root of all per-label keys."""

    signing_seed: bytes

    @property
    def public_id(self) -> bytes:
        return crypto.signing_public_bytes(crypto.signing_key_from_seed(self.signing_seed))

    @classmethod
    def generate(cls) -> "Namespace":
        return cls(signing_seed=os.urandom(32))


@dataclass(frozen=True)
class Record:
    label: str
    record_type: RecordType
    payload: bytes
    expiration_ms: int


def derive_query_key(namespace_public: bytes, label: str) -> bytes:
    return crypto.sha256(namespace_public + label.encode("utf-8"))


def derive_record_key(namespace_public: bytes, label: str) -> bytes:
    return crypto.hkdf(namespace_public + label.encode("utf-8"), info=_RECORD_KEY_INFO)


def derive_label_signing_seed(namespace_seed: bytes, label: str) -> bytes:
    return crypto.hmac_sha256(namespace_seed, _LABEL_SIGN_PREFIX + label.encode("utf-8"))


def encrypt_record_payload(record_key: bytes, payload: bytes, nonce: bytes | None = None) -> bytes:
    nonce = nonce if nonce is not None else os.urandom(crypto.NONCE_SIZE)
    return nonce + crypto.aead_seal(record_key, nonce, payload, _RECORD_DOMAIN)


def decrypt_record_payload(record_key: bytes, encrypted: bytes) -> bytes:
    if len(encrypted) < crypto.NONCE_SIZE + crypto.AEAD_OVERHEAD:
        raise RecordError("encrypted payload is truncated")
    nonce, sealed = encrypted[: crypto.NONCE_SIZE], encrypted[crypto.NONCE_SIZE :]
    try:
        return crypto.aead_open(record_key, nonce, sealed, _RECORD_DOMAIN)
    except crypto.IntegrityError as e:
        raise RecordError(f"record payload failed authentication: {e}") from e


def encode_blob(
    derived_public: bytes,
    record_type: int,
    expiration_ms: int,
    encrypted_payload: bytes,
    signature: bytes,
) -> bytes:
    """Wire format: derived pub (32) || type (u32 LE) || expiration epoch-ms
    (u64 LE) || payload length (u32 LE) || encrypted payload || signature (64)."""
    return (
        derived_public
        + struct.pack("<I", record_type)
        + struct.pack("<Q", expiration_ms)
        + struct.pack("<I", len(encrypted_payload))
        + encrypted_payload
        + signature
    )


def decode_blob(blob: bytes) -> tuple[bytes, int, int, bytes, bytes]:
    """Returns (derived_public, record_type, expiration_ms, encrypted_payload, signature)."""
    if len(blob) < BLOB_MIN_SIZE:
        raise RecordError("blob is truncated")
    derived_public = blob[:32]
    (record_type,) = struct.unpack_from("<I", blob, 32)
    (expiration_ms,) = struct.unpack_from("<Q", blob, 36)
    (payload_len,) = struct.unpack_from("<I", blob, 44)
    end = HEADER_SIZE + payload_len
    if len(blob) != end + SIGNATURE_SIZE:
        raise RecordError("blob length does not match payload length field")
    return derived_public, record_type, expiration_ms, blob[HEADER_SIZE:end], blob[end:]


def make_record_blob(
    namespace: Namespace,
    label: str,
    record_type: int,
    payload: bytes,
    expiration_ms: int,
    nonce: bytes | None = None,
) -> bytes:
    """Encrypt, sign and frame a record for storage in the DHT."""
    if len(payload) > PAYLOAD_LIMIT:
        raise RecordError(f"payload exceeds {PAYLOAD_LIMIT} bytes")
    record_key = derive_record_key(namespace.public_id, label)
    encrypted = encrypt_record_payload(record_key, payload, nonce)
    label_seed = derive_label_signing_seed(namespace.signing_seed, label)
    derived_public = crypto.signing_public_bytes(crypto.signing_key_from_seed(label_seed))
    unsigned = (
        derived_public
        + struct.pack("<I", record_type)
        + struct.pack("<Q", expiration_ms)
        + struct.pack("<I", len(encrypted))
        + encrypted
    )
    signature = crypto.sign(label_seed, unsigned)
    return unsigned + signature


def verify_blob(blob: bytes) -> bool:
    """Check the embedded signature against the blob's own derived public key."""
    try:
        derived_public, _, _, _, signature = decode_blob(blob)
    except RecordError:
        return False
    return crypto.verify(derived_public, signature, blob[: len(blob) - SIGNATURE_SIZE])


def blob_expiration(blob: bytes) -> int:
    (expiration_ms,) = struct.unpack_from("<Q", blob, 36)
    return expiration_ms


def open_record(namespace_public: bytes, label: str, blob: bytes) -> Record:
    """Decode, verify and decrypt a blob fetched for (namespace, label)."""
    if not verify_blob(blob):
        raise RecordError("blob signature is invalid")
    _, record_type, expiration_ms, encrypted, _ = decode_blob(blob)
    payload = decrypt_record_payload(derive_record_key(namespace_public, label), encrypted)
    return Record(
        label=label,
        record_type=RecordType(record_type),
        payload=payload,
        expiration_ms=expiration_ms,
    )
