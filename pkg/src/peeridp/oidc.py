"""OIDC-style authorization-code flow over the identity provider.

The authorization code piggybacks the ticket (its canonical base64url form)
plus the wrapped decryption key, so a synchronous flow hands the key over
out-of-band instead of forcing the requesting party through a name-system
lookup.  The token endpoint plays the requesting party's local instance: it
proves possession of the client's signing key, runs retrieval, and returns
the attributes inside a JWT-shaped token signed with the user identity key.
The userinfo endpoint re-runs retrieval from scratch on every call, which is
what lets a party refresh attribute values while the user is offline.

Endpoints (all JSON):
    GET  /authorize          query: client_id, redirect_uri, scope, state,
                             nonce, response_type=code
    POST /token              form: grant_type=authorization_code, code,
                             client_assertion
    GET  /userinfo           Authorization: Bearer <token>
    GET  /consent/pending    pending authorization requests for the UI
    POST /consent/decision   {"request_id", "approved_names": [...]} or
                             {"request_id", "deny": true}
plus attribute/ticket bridge endpoints consumed by the web frontend.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, quote, urlparse

from . import abe, crypto, idp
from .encoding import b32, b64u, unb32, unb64u
from .namesys import NameSystemClient

CODE_TTL_S = 600
PENDING_TTL_S = 600
TOKEN_LIFETIME_S = 3600


@dataclass
class RegisteredClient:
    client_id: str  # base32 signing public key
    redirect_uris: tuple[str, ...]
    kx_public: bytes
    party_keys: idp.PartyKeys | None = None  # present when this host serves the RP


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    clients_path: str = "clients.json"
    auto_approve: bool = False
    ui_dir: str | None = None

    @classmethod
    def parse(cls, path: str) -> "ServiceConfig":
        """Flag-style config: one `key = value` per line, `#` comments."""
        values: dict[str, str] = {}
        with open(path) as f:
            for raw in f:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValueError(f"malformed config line: {raw!r}")
                values[key.strip()] = value.strip()
        cfg = cls()
        if "listen" in values:
            host, _, port = values["listen"].rpartition(":")
            cfg.listen_host, cfg.listen_port = host or "127.0.0.1", int(port)
        cfg.clients_path = values.get("clients", cfg.clients_path)
        cfg.auto_approve = values.get("auto_approve", "false").lower() in ("true", "1", "yes")
        cfg.ui_dir = values.get("ui_dir") or None
        return cfg


def load_clients(path: str) -> dict[str, RegisteredClient]:
    with open(path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    clients: dict[str, RegisteredClient] = {}
    for entry in doc["clients"]:
        party_keys = None
        if entry.get("keys_file"):
            with open(os.path.join(base, entry["keys_file"])) as kf:
                keys_doc = json.load(kf)
            party_keys = idp.PartyKeys(
                signing_seed=bytes.fromhex(keys_doc["signing_seed"]),
                kx_seed=bytes.fromhex(keys_doc["kx_seed"]),
            )
        clients[entry["client_id"]] = RegisteredClient(
            client_id=entry["client_id"],
            redirect_uris=tuple(entry["redirect_uris"]),
            kx_public=unb32(entry["kx_public"]),
            party_keys=party_keys,
        )
    return clients


@dataclass
class _CodeEntry:
    ticket: idp.Ticket
    wrapped_key: bytes | None
    nonce: str
    issued_at: float
    consumed: bool = False


@dataclass
class _PendingAuth:
    request_id: str
    client_id: str
    redirect_uri: str
    scope_names: tuple[str, ...]
    state: str
    nonce: str
    created: float


@dataclass
class JsonResponse:
    status: int
    body: dict
    headers: dict[str, str] = field(default_factory=dict)


def _redirect(url: str, extra: dict | None = None) -> JsonResponse:
    return JsonResponse(302, {"redirect": url, **(extra or {})}, {"Location": url})


def _redirect_params(uri: str, params: dict[str, str]) -> str:
    query = "&".join(f"{k}={quote(v, safe='')}" for k, v in params.items() if v)
    return f"{uri}{'&' if urlparse(uri).query else '?'}{query}"


def make_client_assertion(keys: idp.PartyKeys, code: str) -> str:
    """Proof of key possession for the token endpoint, bound to one code."""
    payload = json.dumps(
        {
            "client_id": b32(keys.signing_public),
            "code_sha256": hashlib.sha256(code.encode()).hexdigest(),
            "ts": int(time.time()),
        },
        separators=(",", ":"),
    ).encode()
    signature = crypto.sign(keys.signing_seed, payload)
    return b64u(payload) + "." + b64u(signature)


def verify_id_token(token: str, issuer_public: bytes) -> dict:
    """Check the detached signature against the issuer namespace key and
    return the payload. Raises ValueError on any mismatch."""
    try:
        header_b64, payload_b64, sig_b64 = token.split(".")
    except ValueError as e:
        raise ValueError("token must have three segments") from e
    signing_input = f"{header_b64}.{payload_b64}".encode()
    if not crypto.verify(issuer_public, unb64u(sig_b64), signing_input):
        raise ValueError("token signature invalid")
    return json.loads(unb64u(payload_b64))


def _claim_value(value: bytes) -> str:
    try:
        return value.decode("utf-8")
    except UnicodeDecodeError:
        return "b64:" + b64u(value)


class OidcService:
    """Request handlers; a single lock serializes identity-state and
    simulator access, and gives the code store atomic consume semantics."""

    def __init__(
        self,
        provider: idp.IdentityProvider,
        clients: dict[str, RegisteredClient],
        auto_approve: bool = False,
        retrieval_client: NameSystemClient | None = None,
        ui_dir: str | None = None,
    ):
        self.provider = provider
        self.clients = clients
        self.auto_approve = auto_approve
        self.retrieval_client = retrieval_client or provider.client
        self.ui_dir = ui_dir
        self._codes: dict[str, _CodeEntry] = {}
        self._tokens: dict[str, tuple[idp.Ticket, str]] = {}
        self._pending: dict[str, _PendingAuth] = {}
        self._lock = threading.RLock()

    # -- authorization endpoint --

    def handle_authorize(self, params: dict[str, str]) -> JsonResponse:
        client_id = params.get("client_id", "")
        client = self.clients.get(client_id)
        if client is None:
            return JsonResponse(400, {"error": "unknown_client"})
        redirect_uri = params.get("redirect_uri", "")
        if redirect_uri not in client.redirect_uris:
            return JsonResponse(400, {"error": "invalid_redirect_uri"})
        state = params.get("state", "")
        if params.get("response_type") != "code":
            return _redirect(
                _redirect_params(redirect_uri, {"error": "unsupported_response_type", "state": state})
            )
        names = tuple(n for n in params.get("scope", "").split() if n)
        with self._lock:
            known = self.provider.state.attributes
            if not names or any(n not in known for n in names):
                return _redirect(
                    _redirect_params(redirect_uri, {"error": "invalid_scope", "state": state})
                )
            nonce = params.get("nonce", "")
            if self.auto_approve:
                return self._grant(client, redirect_uri, names, state, nonce)
            request_id = secrets.token_urlsafe(16)
            self._pending[request_id] = _PendingAuth(
                request_id=request_id,
                client_id=client_id,
                redirect_uri=redirect_uri,
                scope_names=names,
                state=state,
                nonce=nonce,
                created=time.time(),
            )
        return _redirect(f"/ui/?request_id={request_id}", {"pending": request_id})

    def _grant(
        self,
        client: RegisteredClient,
        redirect_uri: str,
        names: tuple[str, ...],
        state: str,
        nonce: str,
    ) -> JsonResponse:
        grant = self.provider.authorize(unb32(client.client_id), client.kx_public, names)
        code = grant.ticket.canonical() + "." + b64u(grant.wrapped_key)
        self._codes[code] = _CodeEntry(
            ticket=grant.ticket, wrapped_key=grant.wrapped_key, nonce=nonce, issued_at=time.time()
        )
        return _redirect(_redirect_params(redirect_uri, {"code": code, "state": state}))

    # -- consent bridge --

    def _prune_pending(self) -> None:
        cutoff = time.time() - PENDING_TTL_S
        self._pending = {k: v for k, v in self._pending.items() if v.created >= cutoff}

    def handle_consent_pending(self) -> JsonResponse:
        with self._lock:
            self._prune_pending()
            pending = [
                {
                    "request_id": p.request_id,
                    "client_id": p.client_id,
                    "scope_names": list(p.scope_names),
                    "redirect_uri": p.redirect_uri,
                    "state": p.state,
                    "created": p.created,
                }
                for p in sorted(self._pending.values(), key=lambda p: p.created)
            ]
        return JsonResponse(200, {"pending": pending})

    def handle_consent_decision(self, body: dict) -> JsonResponse:
        request_id = body.get("request_id", "")
        with self._lock:
            self._prune_pending()
            pending = self._pending.pop(request_id, None)
            if pending is None:
                return JsonResponse(404, {"error": "unknown_or_expired_request"})
            client = self.clients[pending.client_id]
            if body.get("deny"):
                url = _redirect_params(
                    pending.redirect_uri, {"error": "access_denied", "state": pending.state}
                )
                return JsonResponse(200, {"redirect": url})
            approved = tuple(body.get("approved_names", []))
            if not approved or not set(approved) <= set(pending.scope_names):
                return JsonResponse(400, {"error": "invalid_approval"})
            response = self._grant(
                client, pending.redirect_uri, approved, pending.state, pending.nonce
            )
        return JsonResponse(200, response.body)

    # -- token endpoint --

    def _verify_assertion(self, assertion: str, code: str, ticket: idp.Ticket) -> bool:
        try:
            payload_b64, sig_b64 = assertion.split(".")
            payload = unb64u(payload_b64)
            doc = json.loads(payload)
            if doc["client_id"] != b32(ticket.rp_id):
                return False
            if doc["code_sha256"] != hashlib.sha256(code.encode()).hexdigest():
                return False
            return crypto.verify(ticket.rp_id, unb64u(sig_b64), payload)
        except (ValueError, KeyError, TypeError):
            return False

    def handle_token(self, form: dict[str, str]) -> JsonResponse:
        if form.get("grant_type") != "authorization_code":
            return JsonResponse(400, {"error": "unsupported_grant_type"})
        code = form.get("code", "")
        entry = self._codes.get(code)
        if entry is None or time.time() - entry.issued_at > CODE_TTL_S:
            return JsonResponse(400, {"error": "invalid_grant"})
        if not self._verify_assertion(form.get("client_assertion", ""), code, entry.ticket):
            return JsonResponse(401, {"error": "invalid_client"})
        client = self.clients.get(b32(entry.ticket.rp_id))
        if client is None or client.party_keys is None:
            return JsonResponse(500, {"error": "server_error", "error_description": "no local keys for client"})
        with self._lock:
            if entry.consumed:
                return JsonResponse(400, {"error": "invalid_grant"})
            entry.consumed = True
            try:
                result = idp.retrieve(
                    client.party_keys,
                    entry.ticket,
                    self.retrieval_client,
                    wrapped_key=entry.wrapped_key,
                )
            except idp.RetrievalError:
                return JsonResponse(400, {"error": "invalid_grant"})
            if not result.values:
                return JsonResponse(400, {"error": "invalid_grant", "failures": result.failures})
            id_token = self._sign_token(entry.ticket, result.values, entry.nonce)
            access_token = secrets.token_urlsafe(32)
            self._tokens[access_token] = (entry.ticket, b32(entry.ticket.rp_id))
        body = {"access_token": access_token, "token_type": "Bearer", "id_token": id_token}
        if result.failures:
            body["warning"] = result.failures
        return JsonResponse(200, body)

    def _sign_token(self, ticket: idp.Ticket, values: dict[str, bytes], nonce: str) -> str:
        now = int(time.time())
        header = b64u(json.dumps({"alg": "Ed25519-NS", "typ": "JWT"}, separators=(",", ":")).encode())
        payload_doc = {
            "iss": b32(ticket.user_id),
            "aud": b32(ticket.rp_id),
            "iat": now,
            "exp": now + TOKEN_LIFETIME_S,
        }
        if nonce:
            payload_doc["nonce"] = nonce
        for name, value in values.items():
            payload_doc[name] = _claim_value(value)
        payload = b64u(json.dumps(payload_doc, separators=(",", ":")).encode())
        signing_input = f"{header}.{payload}".encode()
        signature = crypto.sign(self.provider.state.signing_seed, signing_input)
        return f"{header}.{payload}.{b64u(signature)}"

    # -- userinfo --

    def handle_userinfo(self, authorization: str) -> JsonResponse:
        if not authorization.startswith("Bearer "):
            return JsonResponse(401, {"error": "invalid_token"})
        token = authorization[len("Bearer ") :].strip()
        with self._lock:
            entry = self._tokens.get(token)
            if entry is None:
                return JsonResponse(401, {"error": "invalid_token"})
            ticket, client_id = entry
            client = self.clients.get(client_id)
            if client is None or client.party_keys is None:
                return JsonResponse(401, {"error": "invalid_token"})
            try:
                # Fresh retrieval every time: resolves the key record again, so
                # refreshed keys and updated values flow through automatically.
                result = idp.retrieve(client.party_keys, ticket, self.retrieval_client)
            except idp.RetrievalError:
                return JsonResponse(401, {"error": "invalid_token"})
        body: dict = {"sub": b32(ticket.user_id)}
        for name, value in result.values.items():
            body[name] = _claim_value(value)
        if result.failures:
            body["warning"] = result.failures
        return JsonResponse(200, body)

    # -- attribute / ticket bridge for the frontend --

    def handle_attributes_get(self) -> JsonResponse:
        with self._lock:
            state = self.provider.state
            attributes = [
                {"name": a.name, "version": a.version, "value": _claim_value(a.value)}
                for a in sorted(state.attributes.values(), key=lambda a: a.name)
            ]
            tombstones = dict(sorted(state.tombstones.items()))
        return JsonResponse(200, {"attributes": attributes, "tombstones": tombstones})

    def handle_attributes_post(self, body: dict) -> JsonResponse:
        name, value = body.get("name", ""), body.get("value", "")
        with self._lock:
            try:
                attr = self.provider.store(name, value.encode("utf-8"))
            except (ValueError, abe.OversizePlaintext) as e:
                return JsonResponse(400, {"error": "invalid_attribute", "detail": str(e)})
        return JsonResponse(200, {"name": attr.name, "version": attr.version})

    def handle_attribute_delete(self, name: str) -> JsonResponse:
        with self._lock:
            try:
                self.provider.delete(name)
            except idp.UnknownAttribute:
                return JsonResponse(404, {"error": "unknown_attribute"})
            next_version = self.provider.state.tombstones[name]
        return JsonResponse(200, {"name": name, "next_version": next_version})

    def handle_tickets_get(self) -> JsonResponse:
        with self._lock:
            tickets = [
                {
                    "rnd": t.ticket.rnd,
                    "rp": b32(t.ticket.rp_id),
                    "names": list(t.ticket.names),
                }
                for t in self.provider.state.tickets
            ]
        return JsonResponse(200, {"tickets": tickets})

    def handle_ticket_revoke(self, rnd: str) -> JsonResponse:
        with self._lock:
            issued = next((t for t in self.provider.state.tickets if t.ticket.rnd == rnd), None)
            if issued is None:
                return JsonResponse(404, {"error": "unknown_ticket"})
            self.provider.revoke(issued.ticket)
            # access tokens live exactly as long as their ticket
            self._tokens = {
                token: entry for token, entry in self._tokens.items() if entry[0].rnd != rnd
            }
        return JsonResponse(200, {"revoked": rnd})

    def handle_index(self) -> JsonResponse:
        return JsonResponse(
            200,
            {
                "issuer": b32(self.provider.state.public_id),
                "authorization_endpoint": "/authorize",
                "token_endpoint": "/token",
                "userinfo_endpoint": "/userinfo",
            },
        )


_CORS_HEADERS = {
    "Access-Control-Allow-Origin": "*",
    "Access-Control-Allow-Methods": "GET, POST, DELETE, OPTIONS",
    "Access-Control-Allow-Headers": "Content-Type, Authorization",
}


class _Handler(BaseHTTPRequestHandler):
    service: OidcService  # set by make_server

    def log_message(self, fmt: str, *args) -> None:  # quiet by default
        pass

    def _respond(self, response: JsonResponse) -> None:
        payload = json.dumps(response.body).encode("utf-8")
        self.send_response(response.status)
        for key, value in {**_CORS_HEADERS, **response.headers}.items():
            self.send_header(key, value)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict:
        try:
            return json.loads(self._body() or b"{}")
        except json.JSONDecodeError:
            return {}

    def _serve_ui(self, path: str) -> None:
        rel = path[len("/ui/") :] or "index.html"
        base = os.path.abspath(self.service.ui_dir or "")
        full = os.path.abspath(os.path.join(base, rel))
        if not self.service.ui_dir or not full.startswith(base) or not os.path.isfile(full):
            self._respond(JsonResponse(404, {"error": "not_found"}))
            return
        content_type = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        with open(full, "rb") as f:
            data = f.read()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_OPTIONS(self) -> None:
        self.send_response(204)
        for key, value in _CORS_HEADERS.items():
            self.send_header(key, value)
        self.end_headers()

    def do_GET(self) -> None:
        url = urlparse(self.path)
        params = {k: v[0] for k, v in parse_qs(url.query).items()}
        if url.path == "/authorize":
            self._respond(self.service.handle_authorize(params))
        elif url.path == "/userinfo":
            self._respond(self.service.handle_userinfo(self.headers.get("Authorization", "")))
        elif url.path == "/consent/pending":
            self._respond(self.service.handle_consent_pending())
        elif url.path == "/attributes":
            self._respond(self.service.handle_attributes_get())
        elif url.path == "/tickets":
            self._respond(self.service.handle_tickets_get())
        elif url.path == "/" or url.path == "":
            self._respond(self.service.handle_index())
        elif url.path.startswith("/ui/"):
            self._serve_ui(url.path)
        else:
            self._respond(JsonResponse(404, {"error": "not_found"}))

    def do_POST(self) -> None:
        url = urlparse(self.path)
        if url.path == "/token":
            form = {k: v[0] for k, v in parse_qs(self._body().decode("utf-8")).items()}
            self._respond(self.service.handle_token(form))
        elif url.path == "/consent/decision":
            self._respond(self.service.handle_consent_decision(self._json_body()))
        elif url.path == "/attributes":
            self._respond(self.service.handle_attributes_post(self._json_body()))
        elif url.path.startswith("/tickets/") and url.path.endswith("/revoke"):
            rnd = url.path[len("/tickets/") : -len("/revoke")]
            self._respond(self.service.handle_ticket_revoke(rnd))
        else:
            self._respond(JsonResponse(404, {"error": "not_found"}))

    def do_DELETE(self) -> None:
        url = urlparse(self.path)
        if url.path.startswith("/attributes/"):
            self._respond(self.service.handle_attribute_delete(url.path[len("/attributes/") :]))
        else:
            self._respond(JsonResponse(404, {"error": "not_found"}))


def make_server(service: OidcService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
