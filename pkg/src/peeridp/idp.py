"""Identity-provider core: attribute and ticket lifecycle over the name system.

An identity is a signing keypair (its namespace), a key-agreement keypair,
and its own ABE system.  Attributes are encrypted under (name, version) tags
and published under their name; per-party decryption keys are wrapped for
the party and published under a random label carried in the ticket.

Deletion bumps the version so any future incarnation of the attribute is
unreadable with old keys; revocation bumps the versions of the revoked
ticket's attributes, republishes them, and refreshes the keys of every other
ticket that shares a name — and only those.  Versioning state survives
restarts through an append-only event log plus snapshots.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

from . import abe, crypto
from .encoding import b32, b64u, unb32, unb64u
from .namesys import (
    RECORD_TYPE_ABE_KEY,
    RECORD_TYPE_ID_ATTR,
    NameSystemClient,
    Namespace,
    NotFound,
    SignatureInvalid,
)

DEFAULT_TTL_MS = 3_600_000  # 1 hour simulated

KEYS_FILENAME = "keys.json"
LOG_FILENAME = "state.log"
SNAPSHOT_FILENAME = "snapshot.json"


class IdpError(Exception):
    pass


class UnknownAttribute(IdpError):
    pass


class UnknownTicket(IdpError):
    pass


class RetrievalError(IdpError):
    pass


class KeyRecordMissing(RetrievalError):
    """The ticket's key record is gone from the name system (revoked)."""


class UnwrapFailed(RetrievalError):
    """The wrapped key was not addressed to this party's keys."""


@dataclass(frozen=True)
class Attribute:
    name: str
    value: bytes
    version: int


@dataclass(frozen=True)
class Ticket:
    """Authorization handle handed to a requesting party out-of-band."""

    user_id: bytes
    rp_id: bytes
    names: tuple[str, ...]
    rnd: str

    def __post_init__(self) -> None:
        if not self.names:
            raise ValueError("ticket must name at least one attribute")
        if len(set(self.names)) != len(self.names):
            raise ValueError("ticket names must be unique")

    def canonical(self) -> str:
        """base64url of the canonical JSON form; this exact string rides in the OIDC code."""
        doc = {
            "iss": b32(self.user_id),
            "aud": b32(self.rp_id),
            "names": list(self.names),
            "rnd": self.rnd,
        }
        return b64u(json.dumps(doc, separators=(",", ":")).encode("utf-8"))

    @classmethod
    def from_canonical(cls, text: str) -> "Ticket":
        try:
            doc = json.loads(unb64u(text))
            return cls(
                user_id=unb32(doc["iss"]),
                rp_id=unb32(doc["aud"]),
                names=tuple(doc["names"]),
                rnd=doc["rnd"],
            )
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"malformed ticket: {e}") from e


@dataclass
class IssuedTicket:
    ticket: Ticket
    rp_kx_public: bytes


@dataclass(frozen=True)
class PartyKeys:
    """A requesting party's identity material."""

    signing_seed: bytes
    kx_seed: bytes

    @classmethod
    def generate(cls) -> "PartyKeys":
        return cls(signing_seed=os.urandom(32), kx_seed=os.urandom(32))

    @property
    def signing_public(self) -> bytes:
        return crypto.signing_public_bytes(crypto.signing_key_from_seed(self.signing_seed))

    @property
    def kx_public(self) -> bytes:
        return crypto.kx_public_bytes(crypto.kx_key_from_seed(self.kx_seed))


@dataclass
class IdentityState:
    """Everything one identity owner must remember between sessions."""

    signing_seed: bytes
    kx_seed: bytes
    abe_secret: bytes
    rnd_seed: bytes
    abe_identity: bytes = b""  # namespace the ABE system was bootstrapped for
    rnd_counter: int = 0
    attributes: dict[str, Attribute] = field(default_factory=dict)
    tombstones: dict[str, int] = field(default_factory=dict)  # name -> version on re-store
    tickets: list[IssuedTicket] = field(default_factory=list)

    @classmethod
    def create(cls) -> "IdentityState":
        signing_seed = os.urandom(32)
        state = cls(
            signing_seed=signing_seed,
            kx_seed=os.urandom(32),
            abe_secret=b"",
            rnd_seed=os.urandom(32),
        )
        msk, _ = abe.setup(state.public_id)
        state.abe_secret = msk.secret
        state.abe_identity = msk.identity
        return state

    @property
    def namespace(self) -> Namespace:
        return Namespace(signing_seed=self.signing_seed)

    @property
    def public_id(self) -> bytes:
        return self.namespace.public_id

    @property
    def kx_public(self) -> bytes:
        return crypto.kx_public_bytes(crypto.kx_key_from_seed(self.kx_seed))

    @property
    def abe_master(self) -> abe.AbeMasterKey:
        return abe.AbeMasterKey(
            secret=self.abe_secret, identity=self.abe_identity or self.public_id
        )

    @property
    def abe_params(self) -> abe.AbePublicParams:
        return abe.derive_params(self.abe_master)

    def next_rnd(self) -> str:
        material = crypto.hmac_sha256(self.rnd_seed, b"rnd:" + self.rnd_counter.to_bytes(8, "little"))
        self.rnd_counter += 1
        return b32(material)[:26]

    # -- persistence: keys file, event log, snapshot --

    def keys_dict(self) -> dict:
        return {
            "signing_seed": self.signing_seed.hex(),
            "kx_seed": self.kx_seed.hex(),
            "abe_secret": self.abe_secret.hex(),
            "rnd_seed": self.rnd_seed.hex(),
            "abe_identity": (self.abe_identity or self.public_id).hex(),
        }

    @classmethod
    def from_keys_dict(cls, doc: dict) -> "IdentityState":
        return cls(
            signing_seed=bytes.fromhex(doc["signing_seed"]),
            kx_seed=bytes.fromhex(doc["kx_seed"]),
            abe_secret=bytes.fromhex(doc["abe_secret"]),
            rnd_seed=bytes.fromhex(doc["rnd_seed"]),
            abe_identity=bytes.fromhex(doc.get("abe_identity", "")),
        )

    def public_dict(self) -> dict:
        """Snapshot form: the full state minus private key material."""
        return {
            "identity": b32(self.public_id),
            "rnd_counter": self.rnd_counter,
            "attributes": {
                a.name: {"value": b64u(a.value), "version": a.version}
                for a in self.attributes.values()
            },
            "tombstones": dict(sorted(self.tombstones.items())),
            "tickets": [
                {
                    "iss": b32(t.ticket.user_id),
                    "aud": b32(t.ticket.rp_id),
                    "names": list(t.ticket.names),
                    "rnd": t.ticket.rnd,
                    "rp_kx": t.rp_kx_public.hex(),
                }
                for t in self.tickets
            ],
        }

    def load_public_dict(self, doc: dict) -> None:
        self.rnd_counter = doc["rnd_counter"]
        self.attributes = {
            name: Attribute(name=name, value=unb64u(entry["value"]), version=entry["version"])
            for name, entry in doc["attributes"].items()
        }
        self.tombstones = {name: int(v) for name, v in doc["tombstones"].items()}
        self.tickets = [
            IssuedTicket(
                ticket=Ticket(
                    user_id=unb32(entry["iss"]),
                    rp_id=unb32(entry["aud"]),
                    names=tuple(entry["names"]),
                    rnd=entry["rnd"],
                ),
                rp_kx_public=bytes.fromhex(entry["rp_kx"]),
            )
            for entry in doc["tickets"]
        ]

    def apply_event(self, event: dict) -> None:
        op = event["op"]
        if op == "store":
            name = event["name"]
            self.attributes[name] = Attribute(
                name=name, value=unb64u(event["value"]), version=event["version"]
            )
            self.tombstones.pop(name, None)
        elif op == "delete":
            name = event["name"]
            self.attributes.pop(name, None)
            self.tombstones[name] = event["next_version"]
        elif op == "authorize":
            self.tickets.append(
                IssuedTicket(
                    ticket=Ticket(
                        user_id=unb32(event["iss"]),
                        rp_id=unb32(event["aud"]),
                        names=tuple(event["names"]),
                        rnd=event["rnd"],
                    ),
                    rp_kx_public=bytes.fromhex(event["rp_kx"]),
                )
            )
            self.rnd_counter = event["counter"]
        elif op == "revoke":
            for name, version in event["bumped"].items():
                attr = self.attributes[name]
                self.attributes[name] = Attribute(name=name, value=attr.value, version=version)
            self.tickets = [t for t in self.tickets if t.ticket.rnd != event["rnd"]]
        else:
            raise ValueError(f"unknown state event {op!r}")


class FileStateStore:
    """Single-identity on-disk store: keys file, append-only log, snapshot."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self.keys_path = os.path.join(directory, KEYS_FILENAME)
        self.log_path = os.path.join(directory, LOG_FILENAME)
        self.snapshot_path = os.path.join(directory, SNAPSHOT_FILENAME)

    def exists(self) -> bool:
        return os.path.exists(self.keys_path)

    def save_new(self, state: IdentityState) -> None:
        fd = os.open(self.keys_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as f:
            json.dump(state.keys_dict(), f)
        self.snapshot(state)

    def append(self, event: dict) -> None:
        with open(self.log_path, "a") as f:
            f.write(json.dumps(event, separators=(",", ":")) + "\n")

    def snapshot(self, state: IdentityState) -> None:
        with open(self.snapshot_path, "w") as f:
            json.dump(state.public_dict(), f, separators=(",", ":"), sort_keys=True)
        if os.path.exists(self.log_path):
            os.truncate(self.log_path, 0)

    def load(self) -> IdentityState:
        with open(self.keys_path) as f:
            state = IdentityState.from_keys_dict(json.load(f))
        if os.path.exists(self.snapshot_path):
            with open(self.snapshot_path) as f:
                state.load_public_dict(json.load(f))
        if os.path.exists(self.log_path):
            with open(self.log_path) as f:
                for line in f:
                    if line.strip():
                        state.apply_event(json.loads(line))
        return state


@dataclass(frozen=True)
class AuthorizationGrant:
    """Result of authorizing a party: the ticket plus the wrapped key for
    synchronous out-of-band handover."""

    ticket: Ticket
    wrapped_key: bytes


@dataclass(frozen=True)
class RetrievalResult:
    values: dict[str, bytes]
    failures: dict[str, str]  # name -> not_found | policy_not_satisfied | integrity


class IdentityProvider:
    """Operations of one identity owner against the name system."""

    def __init__(
        self,
        state: IdentityState,
        client: NameSystemClient,
        ttl_ms: int = DEFAULT_TTL_MS,
        store_backend: FileStateStore | None = None,
        log_sink=None,
    ):
        if state.abe_master.identity != state.public_id:
            raise IdpError("ABE master key is bound to a different identity")
        self.state = state
        self.client = client
        self.ttl_ms = ttl_ms
        self._store = store_backend
        self._log_sink = log_sink

    def _log(self, event: dict) -> None:
        event = {**event, "ts": time.time()}
        if self._store is not None:
            self._store.append(event)
        if self._log_sink is not None:
            self._log_sink(event)

    # -- attribute management --

    def _publish_attribute(self, attr: Attribute) -> None:
        ct = abe.encrypt(self.state.abe_params, attr.value, abe.Tag(attr.name, attr.version))
        self.client.publish(
            self.state.namespace, attr.name, RECORD_TYPE_ID_ATTR, ct.serialize(), self.ttl_ms
        )

    def store(self, name: str, value: bytes) -> Attribute:
        """Create or update an attribute.

        Re-storing an existing name keeps its version (that is an update and
        must stay decryptable with existing keys); re-storing a deleted name
        resumes at the tombstoned version so stale keys stay locked out.
        """
        abe.validate_attribute_name(name)
        existing = self.state.attributes.get(name)
        if existing is not None:
            version = existing.version
        else:
            version = self.state.tombstones.get(name, 0)
        attr = Attribute(name=name, value=value, version=version)
        self._publish_attribute(attr)
        self.state.attributes[name] = attr
        self.state.tombstones.pop(name, None)
        self._log({"op": "store", "name": name, "version": version, "value": b64u(value)})
        return attr

    def update(self, name: str, value: bytes) -> Attribute:
        """Replace the value under the same version tag; takes effect for
        readers once cached copies of the old record expire."""
        if name not in self.state.attributes:
            raise UnknownAttribute(name)
        return self.store(name, value)

    def delete(self, name: str) -> None:
        attr = self.state.attributes.get(name)
        if attr is None:
            raise UnknownAttribute(name)
        try:
            self.client.depublish(self.state.namespace, name)
        except NotFound:
            pass  # record already expired out of the name system
        next_version = attr.version + 1
        del self.state.attributes[name]
        self.state.tombstones[name] = next_version
        self._log({"op": "delete", "name": name, "version": attr.version, "next_version": next_version})
        for issued in self.state.tickets:
            if name in issued.ticket.names:
                self._republish_ticket_key(issued)

    # -- authorization --

    def _current_tags(self, names: tuple[str, ...]) -> set[abe.Tag]:
        return {
            abe.Tag(n, self.state.attributes[n].version)
            for n in names
            if n in self.state.attributes
        }

    def _wrap_current_key(self, issued: IssuedTicket) -> bytes:
        tags = self._current_tags(issued.ticket.names)
        key = abe.keygen(self.state.abe_master, tags) if tags else abe.empty_user_key()
        return abe.wrap_for_party(issued.rp_kx_public, key)

    def _republish_ticket_key(self, issued: IssuedTicket) -> None:
        # Refreshed keys go out under the ticket's existing random label.
        self.client.publish(
            self.state.namespace,
            issued.ticket.rnd,
            RECORD_TYPE_ABE_KEY,
            self._wrap_current_key(issued),
            self.ttl_ms,
        )

    def authorize(
        self, rp_id: bytes, rp_kx_public: bytes, names: list[str] | tuple[str, ...]
    ) -> AuthorizationGrant:
        names = tuple(names)
        for name in names:
            if name not in self.state.attributes:
                raise UnknownAttribute(name)
        ticket = Ticket(
            user_id=self.state.public_id, rp_id=rp_id, names=names, rnd=self.state.next_rnd()
        )
        issued = IssuedTicket(ticket=ticket, rp_kx_public=rp_kx_public)
        wrapped = self._wrap_current_key(issued)
        self.client.publish(
            self.state.namespace, ticket.rnd, RECORD_TYPE_ABE_KEY, wrapped, self.ttl_ms
        )
        self.state.tickets.append(issued)
        self._log(
            {
                "op": "authorize",
                "iss": b32(ticket.user_id),
                "aud": b32(ticket.rp_id),
                "names": list(names),
                "rnd": ticket.rnd,
                "rp_kx": rp_kx_public.hex(),
                "counter": self.state.rnd_counter,
            }
        )
        return AuthorizationGrant(ticket=ticket, wrapped_key=wrapped)

    def revoke(self, ticket: Ticket) -> None:
        """Cut one party off from future attribute values.

        Bumps and republishes every attribute the ticket could read, refreshes
        keys for overlapping tickets only, and removes the revoked key record.
        """
        if ticket.user_id != self.state.public_id:
            raise UnknownTicket("ticket was not issued by this identity")
        issued = next((t for t in self.state.tickets if t.ticket.rnd == ticket.rnd), None)
        if issued is None:
            raise UnknownTicket("unknown or already-revoked ticket")

        bumped: dict[str, int] = {}
        for name in issued.ticket.names:
            attr = self.state.attributes.get(name)
            if attr is None:
                continue  # deleted since authorization; already locked out
            attr = Attribute(name=name, value=attr.value, version=attr.version + 1)
            self.state.attributes[name] = attr
            self._publish_attribute(attr)
            bumped[name] = attr.version

        revoked_names = set(issued.ticket.names)
        for other in self.state.tickets:
            if other.ticket.rnd == ticket.rnd:
                continue
            if revoked_names & set(other.ticket.names):
                self._republish_ticket_key(other)

        try:
            self.client.depublish(self.state.namespace, ticket.rnd)
        except NotFound:
            pass  # key record already expired; nothing to remove
        self.state.tickets = [t for t in self.state.tickets if t.ticket.rnd != ticket.rnd]
        self._log({"op": "revoke", "rnd": ticket.rnd, "bumped": bumped})

    def refresh_all(self) -> None:
        """Maintenance: republish every live record before it expires.

        Keygen is deterministic, so refreshed key records carry the same
        capability; no consent or ticket change is involved.
        """
        for attr in self.state.attributes.values():
            self._publish_attribute(attr)
        for issued in self.state.tickets:
            self._republish_ticket_key(issued)

    def snapshot(self) -> None:
        if self._store is not None:
            self._store.snapshot(self.state)


def retrieve(
    rp: PartyKeys,
    ticket: Ticket,
    client: NameSystemClient,
    wrapped_key: bytes | None = None,
    user_key: abe.AbeUserKey | None = None,
) -> RetrievalResult:
    """Requesting-party side: fetch the key record, unwrap, resolve and decrypt.

    Attribute failures are reported per name; only a missing or un-unwrappable
    key record fails the whole call.
    """
    if rp.signing_public != ticket.rp_id:
        raise RetrievalError("ticket is not addressed to this party")
    if user_key is None:
        if wrapped_key is None:
            try:
                res = client.resolve(ticket.user_id, ticket.rnd)
            except NotFound as e:
                raise KeyRecordMissing(f"key record not resolvable: {e}") from e
            except SignatureInvalid as e:
                raise KeyRecordMissing(f"key record invalid: {e}") from e
            if res.record_type != RECORD_TYPE_ABE_KEY:
                raise KeyRecordMissing("record under rnd label is not a key record")
            wrapped_key = res.payload
        try:
            user_key = abe.unwrap_key(rp.kx_seed, wrapped_key)
        except abe.KeyWrapError as e:
            raise UnwrapFailed(str(e)) from e

    values: dict[str, bytes] = {}
    failures: dict[str, str] = {}
    for name in ticket.names:
        try:
            res = client.resolve(ticket.user_id, name)
        except NotFound:
            failures[name] = "not_found"
            continue
        except SignatureInvalid:
            failures[name] = "integrity"
            continue
        if res.record_type != RECORD_TYPE_ID_ATTR:
            failures[name] = "integrity"
            continue
        try:
            values[name] = abe.decrypt(user_key, abe.AbeCiphertext.deserialize(res.payload))
        except abe.PolicyNotSatisfied:
            failures[name] = "policy_not_satisfied"
        except (abe.IntegrityFailure, ValueError):
            failures[name] = "integrity"
    return RetrievalResult(values=values, failures=failures)
