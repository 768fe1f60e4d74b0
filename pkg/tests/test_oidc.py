"""Authorization-code flow over HTTP: consent, codes, tokens, userinfo."""

import json
import threading
import urllib.parse

import pytest
import requests

from peeridp import idp, oidc
from peeridp.encoding import b32
from peeridp.namesys import NameSystemClient, sim_build

from conftest import make_provider

TTL = 3_600_000
REDIRECT = "https://rp.example/cb"


class Stack:
    """One service instance wired to a fresh simulated network."""

    def __init__(self, auto_approve=True):
        self.network = sim_build(30, seed=2024, topology="random-regular", degree=4)
        self.provider = make_provider(self.network, home=0)
        self.provider.store("email", b"alice@doe.com")
        self.provider.store("phone", b"555-0100")
        self.rp = idp.PartyKeys.generate()
        self.client_id = b32(self.rp.signing_public)
        clients = {
            self.client_id: oidc.RegisteredClient(
                client_id=self.client_id,
                redirect_uris=(REDIRECT,),
                kx_public=self.rp.kx_public,
                party_keys=self.rp,
            )
        }
        self.service = oidc.OidcService(
            self.provider,
            clients,
            auto_approve=auto_approve,
            retrieval_client=NameSystemClient(self.network, 19),
        )
        self.server = oidc.make_server(self.service)
        host, port = self.server.server_address[:2]
        self.base = f"http://{host}:{port}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()

    def authorize(self, scope="email", state="st1", nonce="n-1", **overrides):
        params = {
            "client_id": self.client_id,
            "redirect_uri": REDIRECT,
            "scope": scope,
            "state": state,
            "nonce": nonce,
            "response_type": "code",
        }
        params.update(overrides)
        return requests.get(f"{self.base}/authorize", params=params, allow_redirects=False)

    def token(self, code, assertion=None):
        assertion = assertion if assertion is not None else oidc.make_client_assertion(self.rp, code)
        return requests.post(
            f"{self.base}/token",
            data={
                "grant_type": "authorization_code",
                "code": code,
                "client_assertion": assertion,
            },
        )

    def userinfo(self, access_token):
        return requests.get(
            f"{self.base}/userinfo", headers={"Authorization": f"Bearer {access_token}"}
        )


@pytest.fixture
def stack():
    s = Stack(auto_approve=True)
    yield s
    s.close()


@pytest.fixture
def consent_stack():
    s = Stack(auto_approve=False)
    yield s
    s.close()


def code_from_redirect(response) -> str:
    assert response.status_code == 302
    query = urllib.parse.parse_qs(urllib.parse.urlparse(response.headers["Location"]).query)
    assert "code" in query, query
    return query["code"][0]


def test_full_code_flow(stack):
    auth = stack.authorize()
    code = code_from_redirect(auth)
    location = urllib.parse.urlparse(auth.headers["Location"])
    assert urllib.parse.parse_qs(location.query)["state"] == ["st1"]

    # the code decodes to the canonical ticket
    ticket = idp.Ticket.from_canonical(code.split(".")[0])
    assert ticket.names == ("email",)
    assert ticket.rp_id == stack.rp.signing_public

    token = stack.token(code)
    assert token.status_code == 200, token.text
    body = token.json()
    claims = oidc.verify_id_token(body["id_token"], stack.provider.state.public_id)
    assert claims["email"] == "alice@doe.com"
    assert claims["nonce"] == "n-1"
    assert claims["iss"] == b32(stack.provider.state.public_id)
    assert claims["aud"] == stack.client_id

    info = stack.userinfo(body["access_token"])
    assert info.status_code == 200
    assert info.json()["email"] == "alice@doe.com"


def test_token_claim_mutation_breaks_signature(stack):
    code = code_from_redirect(stack.authorize())
    body = stack.token(code).json()
    header, payload, sig = body["id_token"].split(".")
    from peeridp.encoding import b64u, unb64u

    doc = json.loads(unb64u(payload))
    doc["email"] = "mallory@evil.example"
    forged = f"{header}.{b64u(json.dumps(doc, separators=(',', ':')).encode())}.{sig}"
    with pytest.raises(ValueError):
        oidc.verify_id_token(forged, stack.provider.state.public_id)


def test_code_replay_rejected(stack):
    code = code_from_redirect(stack.authorize())
    assert stack.token(code).status_code == 200
    replay = stack.token(code)
    assert replay.status_code == 400
    assert replay.json()["error"] == "invalid_grant"


def test_code_single_use_under_concurrency(stack):
    code = code_from_redirect(stack.authorize())
    results = []

    def attempt():
        results.append(stack.token(code).status_code)

    threads = [threading.Thread(target=attempt) for _ in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count(200) == 1
    assert results.count(400) == 9


def test_unknown_client_and_bad_redirect(stack):
    r = stack.authorize(client_id="nope")
    assert r.status_code == 400 and r.json()["error"] == "unknown_client"
    r = stack.authorize(redirect_uri="https://evil.example/cb")
    assert r.status_code == 400 and r.json()["error"] == "invalid_redirect_uri"


def test_invalid_scope_redirects_with_error(stack):
    r = stack.authorize(scope="email missing-attr")
    assert r.status_code == 302
    query = urllib.parse.parse_qs(urllib.parse.urlparse(r.headers["Location"]).query)
    assert query["error"] == ["invalid_scope"]
    assert query["state"] == ["st1"]


def test_wrong_response_type_redirects_with_error(stack):
    r = stack.authorize(response_type="token")
    query = urllib.parse.parse_qs(urllib.parse.urlparse(r.headers["Location"]).query)
    assert query["error"] == ["unsupported_response_type"]


def test_assertion_for_wrong_client_rejected(stack):
    code = code_from_redirect(stack.authorize())
    other = idp.PartyKeys.generate()
    r = stack.token(code, assertion=oidc.make_client_assertion(other, code))
    assert r.status_code == 401
    assert r.json()["error"] == "invalid_client"


def test_assertion_bound_to_other_code_rejected(stack):
    code1 = code_from_redirect(stack.authorize())
    code2 = code_from_redirect(stack.authorize())
    r = stack.token(code1, assertion=oidc.make_client_assertion(stack.rp, code2))
    assert r.status_code == 401


def test_expired_code_rejected(stack, monkeypatch):
    code = code_from_redirect(stack.authorize())
    entry = stack.service._codes[code]
    entry.issued_at -= oidc.CODE_TTL_S + 1
    r = stack.token(code)
    assert r.status_code == 400 and r.json()["error"] == "invalid_grant"


def test_userinfo_reflects_update_after_expiry_without_reconsent(stack):
    code = code_from_redirect(stack.authorize())
    access = stack.token(code).json()["access_token"]
    assert stack.userinfo(access).json()["email"] == "alice@doe.com"

    stack.provider.update("email", b"new@doe.com")
    stack.provider.refresh_all()
    stack.network.step_until(stack.network.clock_ms + TTL + 1)
    stack.provider.refresh_all()

    info = stack.userinfo(access)
    assert info.status_code == 200
    assert info.json()["email"] == "new@doe.com"


def test_userinfo_after_revoke_is_401(stack):
    code = code_from_redirect(stack.authorize())
    access = stack.token(code).json()["access_token"]
    ticket = idp.Ticket.from_canonical(code.split(".")[0])
    stack.provider.revoke(ticket)
    stack.network.step_until(stack.network.clock_ms + TTL + 1)
    stack.provider.refresh_all()
    r = stack.userinfo(access)
    assert r.status_code == 401


def test_token_after_midflow_revoke_is_invalid_grant(stack):
    code = code_from_redirect(stack.authorize())
    ticket = idp.Ticket.from_canonical(code.split(".")[0])
    stack.provider.revoke(ticket)
    stack.network.step_until(stack.network.clock_ms + TTL + 1)
    stack.provider.refresh_all()
    r = stack.token(code)
    assert r.status_code == 400
    assert r.json()["error"] == "invalid_grant"


def test_unknown_bearer_token_is_401(stack):
    assert stack.userinfo("bogus").status_code == 401


def test_two_parties_have_isolated_claims(stack):
    rp2 = idp.PartyKeys.generate()
    client_id2 = b32(rp2.signing_public)
    stack.service.clients[client_id2] = oidc.RegisteredClient(
        client_id=client_id2, redirect_uris=(REDIRECT,), kx_public=rp2.kx_public, party_keys=rp2
    )
    code1 = code_from_redirect(stack.authorize(scope="email"))
    code2 = code_from_redirect(stack.authorize(scope="phone", client_id=client_id2))
    t1 = stack.token(code1).json()
    t2 = requests.post(
        f"{stack.base}/token",
        data={
            "grant_type": "authorization_code",
            "code": code2,
            "client_assertion": oidc.make_client_assertion(rp2, code2),
        },
    ).json()
    i1 = stack.userinfo(t1["access_token"]).json()
    i2 = stack.userinfo(t2["access_token"]).json()
    assert "email" in i1 and "phone" not in i1
    assert "phone" in i2 and "email" not in i2


# -- consent flow --

def test_consent_approve_subset(consent_stack):
    s = consent_stack
    r = s.authorize(scope="email phone")
    assert r.status_code == 302
    request_id = r.json()["pending"]

    pending = requests.get(f"{s.base}/consent/pending").json()["pending"]
    assert [p["request_id"] for p in pending] == [request_id]
    assert pending[0]["scope_names"] == ["email", "phone"]

    decision = requests.post(
        f"{s.base}/consent/decision",
        json={"request_id": request_id, "approved_names": ["email"]},
    )
    assert decision.status_code == 200
    redirect = decision.json()["redirect"]
    code = urllib.parse.parse_qs(urllib.parse.urlparse(redirect).query)["code"][0]
    ticket = idp.Ticket.from_canonical(code.split(".")[0])
    assert ticket.names == ("email",)
    assert s.token(code).status_code == 200


def test_consent_deny(consent_stack):
    s = consent_stack
    request_id = s.authorize().json()["pending"]
    decision = requests.post(
        f"{s.base}/consent/decision", json={"request_id": request_id, "deny": True}
    )
    query = urllib.parse.parse_qs(urllib.parse.urlparse(decision.json()["redirect"]).query)
    assert query["error"] == ["access_denied"]
    assert not s.provider.state.tickets  # no ticket was created
    assert requests.get(f"{s.base}/consent/pending").json()["pending"] == []


def test_consent_unknown_request(consent_stack):
    r = requests.post(
        f"{consent_stack.base}/consent/decision",
        json={"request_id": "ghost", "approved_names": ["email"]},
    )
    assert r.status_code == 404


def test_consent_expired_request(consent_stack):
    s = consent_stack
    request_id = s.authorize().json()["pending"]
    s.service._pending[request_id].created -= oidc.PENDING_TTL_S + 1
    assert requests.get(f"{s.base}/consent/pending").json()["pending"] == []
    r = requests.post(
        f"{s.base}/consent/decision",
        json={"request_id": request_id, "approved_names": ["email"]},
    )
    assert r.status_code == 404


def test_consent_approval_must_be_subset(consent_stack):
    s = consent_stack
    request_id = s.authorize(scope="email").json()["pending"]
    r = requests.post(
        f"{s.base}/consent/decision",
        json={"request_id": request_id, "approved_names": ["email", "phone"]},
    )
    assert r.status_code == 400


# -- bridge endpoints --

def test_attribute_and_ticket_bridge(stack):
    r = requests.get(f"{stack.base}/attributes").json()
    assert {a["name"] for a in r["attributes"]} == {"email", "phone"}

    assert (
        requests.post(
            f"{stack.base}/attributes", json={"name": "addr", "value": "1 Main St"}
        ).status_code
        == 200
    )
    r = requests.get(f"{stack.base}/attributes").json()
    assert {a["name"] for a in r["attributes"]} == {"email", "phone", "addr"}

    assert requests.delete(f"{stack.base}/attributes/addr").status_code == 200
    r = requests.get(f"{stack.base}/attributes").json()
    assert r["tombstones"] == {"addr": 1}

    code = code_from_redirect(stack.authorize())
    tickets = requests.get(f"{stack.base}/tickets").json()["tickets"]
    assert len(tickets) == 1
    rnd = tickets[0]["rnd"]
    assert requests.post(f"{stack.base}/tickets/{rnd}/revoke").status_code == 200
    assert requests.get(f"{stack.base}/tickets").json()["tickets"] == []
    assert requests.post(f"{stack.base}/tickets/{rnd}/revoke").status_code == 404


def test_no_plaintext_in_name_system_after_flows(stack):
    code = code_from_redirect(stack.authorize())
    stack.token(code)
    secrets = [b"alice@doe.com", b"555-0100", b"email", b"phone"]
    for node in stack.network.nodes:
        for entry in list(node.store.values()) + list(node.cache.values()):
            for secret in secrets:
                assert secret not in entry.blob


# -- config / registry parsing --

def test_service_config_parse(tmp_path):
    conf = tmp_path / "service.conf"
    conf.write_text(
        "# comment\nlisten = 127.0.0.1:8099\nclients = reg.json\nauto_approve = true\nui_dir = web\n"
    )
    cfg = oidc.ServiceConfig.parse(str(conf))
    assert cfg.listen_host == "127.0.0.1"
    assert cfg.listen_port == 8099
    assert cfg.clients_path == "reg.json"
    assert cfg.auto_approve is True
    assert cfg.ui_dir == "web"


def test_client_registry_load(tmp_path):
    rp = idp.PartyKeys.generate()
    keys_file = tmp_path / "rp.json"
    keys_file.write_text(
        json.dumps({"signing_seed": rp.signing_seed.hex(), "kx_seed": rp.kx_seed.hex()})
    )
    registry = tmp_path / "clients.json"
    registry.write_text(
        json.dumps(
            {
                "clients": [
                    {
                        "client_id": b32(rp.signing_public),
                        "redirect_uris": [REDIRECT],
                        "kx_public": b32(rp.kx_public),
                        "keys_file": "rp.json",
                    }
                ]
            }
        )
    )
    clients = oidc.load_clients(str(registry))
    entry = clients[b32(rp.signing_public)]
    assert entry.kx_public == rp.kx_public
    assert entry.party_keys == rp
