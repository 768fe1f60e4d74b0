"""Attribute-based encryption with single-tag policies, plus key wrapping.

Every identity bootstraps its own key authority.  Because a ciphertext policy
is always exactly one tag (an attribute name plus a version number), the
reference backend needs no pairing arithmetic: a per-tag content key is
derived from the master secret, user keys are simply the derived keys for
the tag set they were issued for, and the ciphertext body is authenticated
symmetric encryption under the policy tag's key.  Bumping the version yields
an unrelated tag, which is what makes revocation-by-versioning work.

The "public" parameters are a one-way derivation of the master secret that
is sufficient to encrypt.  They are never published anywhere: in this system
the encrypting party is always the key authority itself, so the parameters
stay on the owner's machine, and holding them never reveals the master key.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

from . import crypto

TAG_SEPARATOR = b"\x1f"
MAX_PLAINTEXT = 62 * 1024
MAX_NAME_BYTES = 63

_PARAMS_INFO = b"abe-params-root"
_TAG_KEY_DOMAIN = b"abe-tag-key"
_BODY_DOMAIN = b"abe-body"
_WRAP_DOMAIN = b"abe-key-wrap"
_WRAP_INFO = b"abe-key-wrap"


class AbeError(Exception):
    """Base class for ABE failures."""


class PolicyNotSatisfied(AbeError):
    """The user key carries no key material for the ciphertext's policy tag."""


class IntegrityFailure(AbeError):
    """The ciphertext body failed authentication (tampered or wrong system)."""


class OversizePlaintext(AbeError):
    """Plaintext exceeds the bound that keeps records inside the payload cap."""


class KeyWrapError(AbeError):
    """Wrapping or unwrapping a user key for a recipient failed."""


def validate_attribute_name(name: str) -> None:
    if not name:
        raise ValueError("attribute name must be non-empty")
    encoded = name.encode("utf-8")
    if TAG_SEPARATOR in encoded:
        raise ValueError("attribute name must not contain the 0x1f separator")
    if len(encoded) > MAX_NAME_BYTES:
        raise ValueError(f"attribute name exceeds {MAX_NAME_BYTES} bytes")


@dataclass(frozen=True, order=True)
class Tag:
    """One policy atom: an attribute name pinned to a version."""

    name: str
    version: int

    def __post_init__(self) -> None:
        validate_attribute_name(self.name)
        if self.version < 0:
            raise ValueError("tag version must be non-negative")

    def encode(self) -> bytes:
        # Injective: the separator byte cannot occur in the name.
        return self.name.encode("utf-8") + TAG_SEPARATOR + str(self.version).encode("ascii")

    @classmethod
    def decode(cls, data: bytes) -> "Tag":
        name, sep, version = data.rpartition(TAG_SEPARATOR)
        if not sep:
            raise ValueError("malformed tag encoding")
        return cls(name.decode("utf-8"), int(version))


@dataclass(frozen=True)
class AbeMasterKey:
    secret: bytes
    identity: bytes  # namespace id the system was bootstrapped for


@dataclass(frozen=True)
class AbePublicParams:
    material: bytes
    identity: bytes


@dataclass(frozen=True)
class AbeUserKey:
    """Decryption capability for an exact set of versioned tags."""

    entries: tuple[tuple[Tag, bytes], ...]

    @property
    def tags(self) -> frozenset[Tag]:
        return frozenset(tag for tag, _ in self.entries)

    def key_for(self, tag: Tag) -> bytes | None:
        for candidate, material in self.entries:
            if candidate == tag:
                return material
        return None

    def serialize(self) -> bytes:
        out = [struct.pack("<I", len(self.entries))]
        for tag, material in self.entries:
            enc = tag.encode()
            out.append(struct.pack("<I", len(enc)))
            out.append(enc)
            out.append(material)
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "AbeUserKey":
        try:
            if len(data) < 4:
                raise ValueError("truncated user key")
            (count,) = struct.unpack_from("<I", data, 0)
            offset = 4
            entries = []
            for _ in range(count):
                (tag_len,) = struct.unpack_from("<I", data, offset)
                offset += 4
                enc = data[offset : offset + tag_len]
                if len(enc) != tag_len:
                    raise ValueError("truncated tag encoding")
                offset += tag_len
                material = data[offset : offset + 32]
                if len(material) != 32:
                    raise ValueError("truncated key material")
                offset += 32
                entries.append((Tag.decode(enc), material))
            if offset != len(data):
                raise ValueError("trailing bytes after user key")
            return cls(tuple(entries))
        except (struct.error, ValueError, UnicodeDecodeError) as e:
            raise ValueError(f"malformed user key: {e}") from e


@dataclass(frozen=True)
class AbeCiphertext:
    policy: Tag  # travels in the clear; the body key depends on it
    nonce: bytes
    body: bytes

    def serialize(self) -> bytes:
        enc = self.policy.encode()
        return struct.pack("<I", len(enc)) + enc + self.nonce + self.body

    @classmethod
    def deserialize(cls, data: bytes) -> "AbeCiphertext":
        try:
            (tag_len,) = struct.unpack_from("<I", data, 0)
            offset = 4
            policy = Tag.decode(data[offset : offset + tag_len])
            offset += tag_len
            nonce = data[offset : offset + crypto.NONCE_SIZE]
            if len(nonce) != crypto.NONCE_SIZE:
                raise ValueError("truncated nonce")
            body = data[offset + crypto.NONCE_SIZE :]
            if len(body) < crypto.AEAD_OVERHEAD:
                raise ValueError("truncated body")
            return cls(policy, nonce, body)
        except (struct.error, ValueError, UnicodeDecodeError) as e:
            raise ValueError(f"malformed ciphertext: {e}") from e


def setup(identity_id: bytes) -> tuple[AbeMasterKey, AbePublicParams]:
    """Bootstrap a fresh single-authority ABE system for one identity."""
    msk = AbeMasterKey(secret=os.urandom(32), identity=identity_id)
    return msk, derive_params(msk)


def derive_params(msk: AbeMasterKey) -> AbePublicParams:
    return AbePublicParams(
        material=crypto.hkdf(msk.secret, info=_PARAMS_INFO),
        identity=msk.identity,
    )


def _tag_key(params: AbePublicParams, tag: Tag) -> bytes:
    return crypto.hmac_sha256(params.material, _TAG_KEY_DOMAIN + tag.encode())


def keygen(msk: AbeMasterKey, tags: set[Tag] | frozenset[Tag]) -> AbeUserKey:
    """Issue a user key able to decrypt exactly the given tags.

    Deterministic for a fixed master key and tag set, so re-issuing after a
    republish hands out the same capability.
    """
    if not tags:
        raise ValueError("keygen requires a non-empty tag set")
    params = derive_params(msk)
    entries = tuple((tag, _tag_key(params, tag)) for tag in sorted(tags))
    return AbeUserKey(entries)


def empty_user_key() -> AbeUserKey:
    """A user key with zero tags: decrypts nothing, still serializable."""
    return AbeUserKey(())


def encrypt(params: AbePublicParams, plaintext: bytes, policy: Tag) -> AbeCiphertext:
    if len(plaintext) > MAX_PLAINTEXT:
        raise OversizePlaintext(f"plaintext exceeds {MAX_PLAINTEXT} bytes")
    nonce = os.urandom(crypto.NONCE_SIZE)
    body = crypto.aead_seal(
        _tag_key(params, policy), nonce, plaintext, _BODY_DOMAIN, aad=policy.encode()
    )
    return AbeCiphertext(policy=policy, nonce=nonce, body=body)


def decrypt(key: AbeUserKey, ct: AbeCiphertext) -> bytes:
    material = key.key_for(ct.policy)
    if material is None:
        raise PolicyNotSatisfied(f"key carries no material for tag {ct.policy.name!r} v{ct.policy.version}")
    try:
        return crypto.aead_open(material, ct.nonce, ct.body, _BODY_DOMAIN, aad=ct.policy.encode())
    except crypto.IntegrityError as e:
        raise IntegrityFailure(str(e)) from e


def wrap_for_party(recipient_public: bytes, key: AbeUserKey) -> bytes:
    """Encrypt a serialized user key to a recipient's key-agreement public key.

    Layout: ephemeral X25519 public (32) || nonce (24) || sealed payload.
    """
    eph_seed = os.urandom(32)
    eph_pub = crypto.kx_public_bytes(crypto.kx_key_from_seed(eph_seed))
    try:
        shared = crypto.kx_shared_key(
            eph_seed, recipient_public, info=_WRAP_INFO + eph_pub + recipient_public
        )
    except ValueError as e:
        raise KeyWrapError(f"invalid recipient key: {e}") from e
    nonce = os.urandom(crypto.NONCE_SIZE)
    sealed = crypto.aead_seal(shared, nonce, key.serialize(), _WRAP_DOMAIN)
    return eph_pub + nonce + sealed


def unwrap_key(recipient_private_seed: bytes, blob: bytes) -> AbeUserKey:
    if len(blob) < 32 + crypto.NONCE_SIZE + crypto.AEAD_OVERHEAD:
        raise KeyWrapError("wrapped key blob is truncated")
    eph_pub = blob[:32]
    nonce = blob[32 : 32 + crypto.NONCE_SIZE]
    sealed = blob[32 + crypto.NONCE_SIZE :]
    recipient = crypto.kx_key_from_seed(recipient_private_seed)
    recipient_public = crypto.kx_public_bytes(recipient)
    try:
        shared = crypto.kx_shared_key(
            recipient_private_seed, eph_pub, info=_WRAP_INFO + eph_pub + recipient_public
        )
        serialized = crypto.aead_open(shared, nonce, sealed, _WRAP_DOMAIN)
    except (crypto.IntegrityError, ValueError) as e:
        raise KeyWrapError(f"unwrap failed: {e}") from e
    try:
        return AbeUserKey.deserialize(serialized)
    except ValueError as e:
        raise KeyWrapError(f"unwrapped payload is not a user key: {e}") from e
