"""Line-oriented scenario scripts and CSV event traces.

Commands:
    publish <ns> <label> <ttl-ms> <hexpayload>
    resolve <ns> <label> <at-ms>
    advance <ms>

Namespace keys and origin nodes are derived deterministically from the
network seed and the command arguments, so a (seed, script) pair always
replays to the same trace.
"""

from __future__ import annotations

import io

from .. import crypto
from . import records
from .network import NameSystemClient, NotFound, SignatureInvalid, SimNetwork

TRACE_HEADER = "time_ms,event,node,query_key_hex,detail"


def _scenario_namespace(network: SimNetwork, name: str) -> records.Namespace:
    seed = crypto.hmac_sha256(
        network.seed.to_bytes(8, "little", signed=True), b"scenario-ns:" + name.encode()
    )
    return records.Namespace(signing_seed=seed)


def _origin(network: SimNetwork, *parts: str) -> int:
    digest = crypto.sha256(("origin:" + "/".join(parts)).encode())
    return int.from_bytes(digest[:8], "big") % network.size


def run_scenario(network: SimNetwork, script: str) -> list[dict]:
    """Execute a script against a network; returns one result dict per command."""
    results: list[dict] = []
    for lineno, raw in enumerate(script.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        command = parts[0]
        if command == "publish":
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: publish takes <ns> <label> <ttl> <hexpayload>")
            ns_name, label, ttl, payload_hex = parts[1:]
            ns = _scenario_namespace(network, ns_name)
            client = NameSystemClient(network, _origin(network, "pub", ns_name))
            receipt = client.publish(
                ns, label, records.RECORD_TYPE_ID_ATTR, bytes.fromhex(payload_hex), int(ttl)
            )
            results.append(
                {"command": "publish", "ok": True, "query_key": receipt.query_key.hex()}
            )
        elif command == "resolve":
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: resolve takes <ns> <label> <at-ms>")
            ns_name, label, at_ms = parts[1:]
            network.step_until(float(at_ms))
            ns = _scenario_namespace(network, ns_name)
            client = NameSystemClient(network, _origin(network, "res", ns_name, label))
            try:
                res = client.resolve(ns.public_id, label)
                results.append(
                    {
                        "command": "resolve",
                        "ok": True,
                        "payload": res.payload.hex(),
                        "hops": res.hops,
                        "duration_ms": res.duration_ms,
                    }
                )
            except (NotFound, SignatureInvalid) as e:
                results.append({"command": "resolve", "ok": False, "error": type(e).__name__})
        elif command == "advance":
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: advance takes <ms>")
            network.step_until(network.clock_ms + float(parts[1]))
            results.append({"command": "advance", "ok": True})
        else:
            raise ValueError(f"line {lineno}: unknown command {command!r}")
    return results


def trace_to_csv(trace: list[tuple[float, str, int, str, str]]) -> str:
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    for time_ms, event, node, query_key_hex, detail in trace:
        out.write(f"{time_ms:.3f},{event},{node},{query_key_hex},{detail}\n")
    return out.getvalue()
