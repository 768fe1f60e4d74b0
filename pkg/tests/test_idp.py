"""Identity-provider lifecycle: store/update/delete, authorization tickets,
revocation by version bump, retrieval, and state persistence."""

import json
import random

import pytest

from peeridp import abe, idp
from peeridp.namesys import NameSystemClient, RECORD_TYPE_ID_ATTR, sim_build
from peeridp.namesys.records import derive_query_key

from conftest import make_provider

TTL = 3_600_000


def rp_pair():
    return idp.PartyKeys.generate()


def reader(network, home=17):
    return NameSystemClient(network, home)


# -- store / update --

def test_store_and_authorized_retrieve(network, provider):
    provider.store("email", b"alice@doe.com")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    result = idp.retrieve(rp, grant.ticket, reader(network))
    assert result.values == {"email": b"alice@doe.com"}
    assert result.failures == {}


def test_store_twice_keeps_version(provider):
    provider.store("email", b"one")
    provider.store("email", b"two")
    attr = provider.state.attributes["email"]
    assert attr.version == 0
    assert attr.value == b"two"


def test_store_validates_name(provider):
    with pytest.raises(ValueError):
        provider.store("bad\x1fname", b"v")
    with pytest.raises(ValueError):
        provider.store("", b"v")
    with pytest.raises(ValueError):
        provider.store("n" * 64, b"v")


def test_unauthorized_party_sees_only_ciphertext(network, provider):
    provider.store("email", b"alice@doe.com")
    res = reader(network).resolve(provider.state.public_id, "email")
    assert res.record_type == RECORD_TYPE_ID_ATTR
    assert b"alice@doe.com" not in res.payload
    stranger_key = abe.keygen(
        abe.AbeMasterKey(secret=b"\x09" * 32, identity=b"\x09" * 32), {abe.Tag("email", 0)}
    )
    with pytest.raises(abe.AbeError):
        abe.decrypt(stranger_key, abe.AbeCiphertext.deserialize(res.payload))


def test_update_requires_existing_attribute(provider):
    with pytest.raises(idp.UnknownAttribute):
        provider.update("nope", b"v")


def test_update_is_visible_after_expiry_with_old_key(network, provider):
    provider.store("email", b"old@doe.com")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    first = idp.retrieve(rp, grant.ticket, reader(network))
    assert first.values["email"] == b"old@doe.com"

    provider.update("email", b"new@doe.com")
    # stale-cache semantics: before expiry the reader still sees the old value
    stale = idp.retrieve(rp, grant.ticket, reader(network))
    assert stale.values["email"] == b"old@doe.com"

    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    fresh = idp.retrieve(rp, grant.ticket, reader(network))
    assert fresh.values["email"] == b"new@doe.com"


# -- authorize --

def test_authorize_unknown_attribute(provider):
    provider.store("email", b"v")
    rp = rp_pair()
    with pytest.raises(idp.UnknownAttribute):
        provider.authorize(rp.signing_public, rp.kx_public, ["email", "phone"])


def test_two_authorizations_use_distinct_labels(provider):
    provider.store("email", b"v")
    g1 = provider.authorize(*_pub(rp_pair()), ["email"])
    g2 = provider.authorize(*_pub(rp_pair()), ["email"])
    assert g1.ticket.rnd != g2.ticket.rnd
    assert len(g1.ticket.rnd) == 26


def _pub(rp):
    return rp.signing_public, rp.kx_public


def test_ticket_canonical_form_is_exact():
    ticket = idp.Ticket(user_id=b"\x01" * 32, rp_id=b"\x02" * 32, names=("email",), rnd="x" * 26)
    from peeridp.encoding import unb64u

    doc = json.loads(unb64u(ticket.canonical()))
    assert list(doc.keys()) == ["iss", "aud", "names", "rnd"]
    assert idp.Ticket.from_canonical(ticket.canonical()) == ticket


def test_wrapped_key_handover_equals_published_record(network, provider):
    provider.store("email", b"v")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    published = reader(network).resolve(provider.state.public_id, grant.ticket.rnd)
    assert abe.unwrap_key(rp.kx_seed, published.payload).serialize() == abe.unwrap_key(
        rp.kx_seed, grant.wrapped_key
    ).serialize()


def test_abe_identity_binding_is_enforced(network):
    # splice another identity's ABE material into a keys file: rejected
    alice = idp.IdentityState.create()
    mallory = idp.IdentityState.create()
    doc = alice.keys_dict()
    doc["abe_secret"] = mallory.keys_dict()["abe_secret"]
    doc["abe_identity"] = mallory.keys_dict()["abe_identity"]
    spliced = idp.IdentityState.from_keys_dict(doc)
    with pytest.raises(idp.IdpError):
        idp.IdentityProvider(spliced, NameSystemClient(network, 0))
    # the untampered file loads fine
    idp.IdentityProvider(
        idp.IdentityState.from_keys_dict(alice.keys_dict()), NameSystemClient(network, 0)
    )


# -- delete --

def test_delete_bumps_version_for_future_stores(network, provider):
    provider.store("email", b"v0")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    old_key = abe.unwrap_key(rp.kx_seed, grant.wrapped_key)

    provider.delete("email")
    assert provider.state.tombstones["email"] == 1
    provider.store("email", b"v1-value")
    assert provider.state.attributes["email"].version == 1

    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    result = idp.retrieve(rp, grant.ticket, reader(network), user_key=old_key)
    assert result.values == {}
    assert result.failures["email"] == "policy_not_satisfied"


def test_delete_refreshes_remaining_names(network, provider):
    provider.store("email", b"e")
    provider.store("phone", b"p")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email", "phone"])
    provider.delete("email")

    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    # the refreshed key under the same rnd still opens phone; email is gone
    result = idp.retrieve(rp, grant.ticket, reader(network))
    assert result.values == {"phone": b"p"}
    assert result.failures["email"] == "not_found"


def test_delete_last_name_publishes_zero_tag_key(network, provider):
    provider.store("email", b"e")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    provider.delete("email")
    published = reader(network).resolve(provider.state.public_id, grant.ticket.rnd)
    refreshed = abe.unwrap_key(rp.kx_seed, published.payload)
    assert refreshed.tags == frozenset()


def test_delete_unknown_attribute(provider):
    with pytest.raises(idp.UnknownAttribute):
        provider.delete("ghost")


def test_delete_succeeds_after_record_expired_naturally(network, provider):
    provider.store("email", b"v")
    network.step_until(network.clock_ms + TTL + 1)
    provider.delete("email")  # nothing left to depublish, still tombstones
    assert provider.state.tombstones["email"] == 1
    assert "email" not in provider.state.attributes


# -- revoke --

def test_revoke_two_party_scenario(network, provider):
    provider.store("email", b"alice@doe.com")
    rp1, rp2 = rp_pair(), rp_pair()
    g1 = provider.authorize(rp1.signing_public, rp1.kx_public, ["email"])
    g2 = provider.authorize(rp2.signing_public, rp2.kx_public, ["email"])
    rp1_old_key = abe.unwrap_key(rp1.kx_seed, g1.wrapped_key)

    provider.revoke(g1.ticket)
    assert provider.state.attributes["email"].version == 1
    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()

    # rp2 refreshes its key from its own rnd label and keeps access
    r2 = idp.retrieve(rp2, g2.ticket, reader(network))
    assert r2.values == {"email": b"alice@doe.com"}
    # rp1's key record is depublished
    with pytest.raises(idp.KeyRecordMissing):
        idp.retrieve(rp1, g1.ticket, reader(network))
    # even a hoarded old key cannot open the re-published record
    r1 = idp.retrieve(rp1, g1.ticket, reader(network), user_key=rp1_old_key)
    assert r1.values == {} and r1.failures["email"] == "policy_not_satisfied"


def test_revoke_twice_errors(provider):
    provider.store("email", b"v")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    provider.revoke(grant.ticket)
    with pytest.raises(idp.UnknownTicket):
        provider.revoke(grant.ticket)


def test_revoke_foreign_ticket_rejected(provider):
    ticket = idp.Ticket(user_id=b"\x0c" * 32, rp_id=b"\x0d" * 32, names=("email",), rnd="r" * 26)
    with pytest.raises(idp.UnknownTicket):
        provider.revoke(ticket)


def test_revoke_rekeys_only_overlapping_tickets(network, provider):
    provider.store("email", b"e")
    provider.store("phone", b"p")
    rp1, rp2, rp3 = rp_pair(), rp_pair(), rp_pair()
    g1 = provider.authorize(rp1.signing_public, rp1.kx_public, ["email"])
    g2 = provider.authorize(rp2.signing_public, rp2.kx_public, ["email", "phone"])
    g3 = provider.authorize(rp3.signing_public, rp3.kx_public, ["phone"])

    def rnd_blobs(rnd: str) -> list[bytes]:
        qk = derive_query_key(provider.state.public_id, rnd)
        return sorted(
            n.store[qk].blob for n in network.nodes if qk in n.store
        )

    g3_before = rnd_blobs(g3.ticket.rnd)
    g2_before = rnd_blobs(g2.ticket.rnd)
    provider.revoke(g1.ticket)
    # overlapping ticket re-keyed, non-overlapping ticket untouched byte-for-byte
    assert rnd_blobs(g2.ticket.rnd) != g2_before
    assert rnd_blobs(g3.ticket.rnd) == g3_before


def test_older_wrap_after_reauthorization_has_stale_tags(network, provider):
    provider.store("email", b"v")
    rp1, rp2 = rp_pair(), rp_pair()
    g1 = provider.authorize(rp1.signing_public, rp1.kx_public, ["email"])
    old_blob = g1.wrapped_key
    g2 = provider.authorize(rp2.signing_public, rp2.kx_public, ["email"])
    provider.revoke(g2.ticket)  # bumps email to v1, refreshes rp1's record

    # the old wrapped blob still unwraps, but its tags name the dead version
    old_key = abe.unwrap_key(rp1.kx_seed, old_blob)
    assert old_key.tags == frozenset({abe.Tag("email", 0)})
    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    stale = idp.retrieve(rp1, g1.ticket, reader(network), user_key=old_key)
    assert stale.failures["email"] == "policy_not_satisfied"
    fresh = idp.retrieve(rp1, g1.ticket, reader(network))
    assert fresh.values["email"] == b"v"


# -- retrieve --

def test_retrieve_requires_matching_party(network, provider):
    provider.store("email", b"v")
    rp, imposter = rp_pair(), rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    with pytest.raises(idp.RetrievalError):
        idp.retrieve(imposter, grant.ticket, reader(network))


def test_retrieve_unwrap_failure_for_wrong_kx_key(network, provider):
    provider.store("email", b"v")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email"])
    wrong = idp.PartyKeys(signing_seed=rp.signing_seed, kx_seed=b"\x33" * 32)
    with pytest.raises(idp.UnwrapFailed):
        idp.retrieve(wrong, grant.ticket, reader(network))


def test_retrieve_reports_partial_failures(network, provider):
    provider.store("email", b"e")
    provider.store("phone", b"p")
    rp = rp_pair()
    grant = provider.authorize(rp.signing_public, rp.kx_public, ["email", "phone"])
    provider.delete("phone")
    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    result = idp.retrieve(rp, grant.ticket, reader(network))
    assert result.values == {"email": b"e"}
    assert result.failures == {"phone": "not_found"}


# -- invariants --

def test_version_monotonicity_over_random_operations(network):
    provider = make_provider(network, home=2)
    rng = random.Random(7)
    names = ["email", "phone", "addr"]
    seen: dict[str, int] = {}

    def current(name):
        if name in provider.state.attributes:
            return provider.state.attributes[name].version
        return provider.state.tombstones.get(name, 0)

    for _ in range(60):
        name = rng.choice(names)
        action = rng.choice(["store", "delete", "authorize+revoke"])
        try:
            if action == "store":
                provider.store(name, rng.randbytes(8))
            elif action == "delete":
                provider.delete(name)
            else:
                rp = rp_pair()
                grant = provider.authorize(rp.signing_public, rp.kx_public, [name])
                provider.revoke(grant.ticket)
        except idp.IdpError:
            pass
        for n in names:
            assert current(n) >= seen.get(n, 0), "version must never decrease"
            seen[n] = current(n)


def test_authorization_completeness_at_quiescence(network, provider):
    provider.store("email", b"e")
    provider.store("phone", b"p")
    parties = [rp_pair() for _ in range(3)]
    grants = [
        provider.authorize(p.signing_public, p.kx_public, names)
        for p, names in zip(parties, (["email"], ["phone"], ["email", "phone"]))
    ]
    provider.revoke(grants[0].ticket)
    network.step_until(network.clock_ms + TTL + 1)
    provider.refresh_all()
    for p, g in list(zip(parties, grants))[1:]:
        result = idp.retrieve(p, g.ticket, reader(network))
        live = {n for n in g.ticket.names if n in provider.state.attributes}
        assert set(result.values) == live
        for name in live:
            assert result.values[name] == provider.state.attributes[name].value


# -- persistence --

def test_state_survives_reload_mid_scenario(tmp_path):
    net_a = sim_build(30, seed=5151, topology="random-regular", degree=4)
    net_b = sim_build(30, seed=5151, topology="random-regular", degree=4)
    store = idp.FileStateStore(str(tmp_path / "alice"))

    state = idp.IdentityState.create()
    store.save_new(state)
    uninterrupted = idp.IdentityProvider(
        idp.IdentityState.from_keys_dict(json.loads(open(store.keys_path).read())),
        NameSystemClient(net_b, 0),
    )
    provider = idp.IdentityProvider(state, NameSystemClient(net_a, 0), store_backend=store)

    rp = rp_pair()
    for p in (provider, uninterrupted):
        p.store("email", b"e")
        p.store("phone", b"p")
        p.authorize(rp.signing_public, rp.kx_public, ["email"])
        p.delete("phone")

    # kill: reload from disk (snapshot was written before the log lines)
    reloaded_state = store.load()
    reloaded = idp.IdentityProvider(reloaded_state, NameSystemClient(net_a, 0), store_backend=store)

    for p in (reloaded, uninterrupted):
        p.store("phone", b"p2")
        grant = p.authorize(rp.signing_public, rp.kx_public, ["phone"])
        p.revoke(grant.ticket)

    assert reloaded.state.public_dict() == uninterrupted.state.public_dict()
    # snapshot compaction: after snapshotting, the log is empty and reload matches
    reloaded.snapshot()
    assert store.load().public_dict() == reloaded.state.public_dict()
    with open(store.log_path) as f:
        assert f.read() == ""


def test_keys_file_is_mode_restricted(tmp_path):
    store = idp.FileStateStore(str(tmp_path / "id"))
    store.save_new(idp.IdentityState.create())
    import os

    assert (os.stat(store.keys_path).st_mode & 0o777) == 0o600
