"""Operator command line: identities, attributes, tickets, retrieval, a local
service node, the simulated clock, and the benchmark harness.

All commands run against a state directory:

    keys/           one mode-0600 key file per identity
    state.log       append-only JSONL mutation log (compacted on exit)
    snapshot.json   identity states (minus keys) plus the embedded network
    service.conf    optional flag-style service configuration
    .lock           advisory lock; one writer at a time

The name system is an embedded deterministic simulator whose state persists
in the snapshot, so a scripted sequence of commands replays identically from
the same starting directory.
"""

from __future__ import annotations

import argparse
import fcntl
import hashlib
import json
import os
import re
import sys

from . import abe, bench, idp, oidc
from .encoding import b32, unb32
from .namesys import LatencyParams, NameSystemClient, SimNetwork, sim_build

DEFAULT_NET = {"size": 30, "seed": 7, "topology": "random-regular", "degree": 4}


class CliError(Exception):
    pass


class StateDir:
    def __init__(self, path: str):
        self.path = path
        self.keys_dir = os.path.join(path, "keys")
        self.log_path = os.path.join(path, idp.LOG_FILENAME)
        self.snapshot_path = os.path.join(path, idp.SNAPSHOT_FILENAME)
        self.conf_path = os.path.join(path, "service.conf")
        os.makedirs(self.keys_dir, exist_ok=True)
        self._lock_file = open(os.path.join(path, ".lock"), "w")
        fcntl.flock(self._lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
        self._snapshot = self._read_snapshot()
        self.network = self._load_network()
        self._states: dict[str, idp.IdentityState] = {}

    def _read_snapshot(self) -> dict:
        if os.path.exists(self.snapshot_path):
            with open(self.snapshot_path) as f:
                return json.load(f)
        return {"identities": {}, "homes": {}, "network": None}

    def _net_defaults(self) -> dict:
        settings = dict(DEFAULT_NET)
        if os.path.exists(self.conf_path):
            with open(self.conf_path) as f:
                for raw in f:
                    line = raw.strip()
                    if not line or line.startswith("#") or "=" not in line:
                        continue
                    key, _, value = line.partition("=")
                    key = key.strip()
                    if key in ("net_size", "net_seed", "net_degree"):
                        settings[key[4:]] = int(value.strip())
                    elif key == "net_topology":
                        settings["topology"] = value.strip()
        return settings

    def _load_network(self) -> SimNetwork:
        if self._snapshot.get("network"):
            return SimNetwork.from_state(self._snapshot["network"])
        cfg = self._net_defaults()
        return sim_build(cfg["size"], cfg["seed"], topology=cfg["topology"], degree=cfg["degree"])

    # -- identities --

    def identity_names(self) -> list[str]:
        return sorted(
            name[: -len(".json")] for name in os.listdir(self.keys_dir) if name.endswith(".json")
        )

    def _keys_path(self, name: str) -> str:
        if not re.fullmatch(r"[A-Za-z0-9_-]+", name):
            raise CliError("identity names may contain only letters, digits, '-' and '_'")
        return os.path.join(self.keys_dir, f"{name}.json")

    def create_identity(self, name: str) -> idp.IdentityState:
        if os.path.exists(self._keys_path(name)):
            raise CliError(f"identity {name!r} already exists")
        state = idp.IdentityState.create()
        fd = os.open(self._keys_path(name), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as f:
            json.dump(state.keys_dict(), f)
        home = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big") % self.network.size
        self._snapshot["homes"][name] = home
        self._states[name] = state
        return state

    def load_identity(self, name: str) -> idp.IdentityState:
        if name in self._states:
            return self._states[name]
        path = self._keys_path(name)
        if not os.path.exists(path):
            raise CliError(f"unknown identity {name!r}")
        with open(path) as f:
            state = idp.IdentityState.from_keys_dict(json.load(f))
        if name in self._snapshot["identities"]:
            state.load_public_dict(self._snapshot["identities"][name])
        if os.path.exists(self.log_path):
            with open(self.log_path) as f:
                for line in f:
                    if line.strip():
                        event = json.loads(line)
                        if event.get("id") == name:
                            state.apply_event({k: v for k, v in event.items() if k != "id"})
        self._states[name] = state
        return state

    def provider(self, name: str) -> idp.IdentityProvider:
        state = self.load_identity(name)
        home = self._snapshot["homes"].get(name, 0)

        def sink(event: dict) -> None:
            with open(self.log_path, "a") as f:
                f.write(json.dumps({"id": name, **event}, separators=(",", ":")) + "\n")

        return idp.IdentityProvider(
            state, NameSystemClient(self.network, home), log_sink=sink
        )

    def party_keys(self, name: str) -> idp.PartyKeys:
        state = self.load_identity(name)
        return idp.PartyKeys(signing_seed=state.signing_seed, kx_seed=state.kx_seed)

    def save(self) -> None:
        for name, state in self._states.items():
            self._snapshot["identities"][name] = state.public_dict()
        self._snapshot["network"] = self.network.to_state()
        with open(self.snapshot_path, "w") as f:
            json.dump(self._snapshot, f, separators=(",", ":"), sort_keys=True)
        if os.path.exists(self.log_path):
            os.truncate(self.log_path, 0)


def _resolve_rp(state_dir: StateDir, rp: str) -> tuple[bytes, bytes]:
    """An RP reference: a local identity name, or '<sig_b32>:<kx_b32>'."""
    if ":" in rp:
        sig_b32, _, kx_b32 = rp.partition(":")
        return unb32(sig_b32), unb32(kx_b32)
    keys = state_dir.party_keys(rp)
    return keys.signing_public, keys.kx_public


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- subcommand implementations --

def cmd_id(args, state_dir: StateDir) -> int:
    if args.action == "create":
        state = state_dir.create_identity(args.name)
        print(f"{args.name} {b32(state.public_id)}")
    else:  # list
        rows = []
        for name in state_dir.identity_names():
            state = state_dir.load_identity(name)
            rows.append({"name": name, "id": b32(state.public_id), "kx": b32(state.kx_public)})
        if args.json:
            _print_json(rows)
        else:
            for row in rows:
                print(f"{row['name']} {row['id']}")
    return 0


def cmd_attr(args, state_dir: StateDir) -> int:
    provider = state_dir.provider(args.id)
    if args.action == "store":
        attr = provider.store(args.name, args.value.encode("utf-8"))
        print(f"{attr.name} v{attr.version}")
    elif args.action == "update":
        attr = provider.update(args.name, args.value.encode("utf-8"))
        print(f"{attr.name} v{attr.version}")
    elif args.action == "delete":
        provider.delete(args.name)
        print(f"{args.name} deleted (next version {provider.state.tombstones[args.name]})")
    else:  # list
        rows = [
            {"name": a.name, "version": a.version, "value": a.value.decode("utf-8", "replace")}
            for a in sorted(provider.state.attributes.values(), key=lambda a: a.name)
        ]
        if args.json:
            _print_json(rows)
        else:
            for row in rows:
                print(f"{row['name']} v{row['version']} {row['value']}")
    return 0


def cmd_ticket(args, state_dir: StateDir) -> int:
    provider = state_dir.provider(args.id)
    if args.action == "issue":
        rp_sig, rp_kx = _resolve_rp(state_dir, args.rp)
        names = [n for n in args.attrs.split(",") if n]
        grant = provider.authorize(rp_sig, rp_kx, names)
        if args.key_out:
            with open(args.key_out, "wb") as f:
                f.write(grant.wrapped_key)
        print(grant.ticket.canonical())
    elif args.action == "revoke":
        ticket = idp.Ticket.from_canonical(args.ticket)
        provider.revoke(ticket)
        print(f"revoked {ticket.rnd}")
    else:  # list
        rows = [
            {"rnd": t.ticket.rnd, "rp": b32(t.ticket.rp_id), "names": list(t.ticket.names)}
            for t in provider.state.tickets
        ]
        if args.json:
            _print_json(rows)
        else:
            for row in rows:
                print(f"{row['rnd']} rp={row['rp']} names={','.join(row['names'])}")
    return 0


def cmd_retrieve(args, state_dir: StateDir) -> int:
    ticket = idp.Ticket.from_canonical(args.ticket)
    rp = state_dir.party_keys(args.rp_id)
    wrapped = None
    if args.key:
        with open(args.key, "rb") as f:
            wrapped = f.read()
    home = state_dir._snapshot["homes"].get(args.rp_id, 0)
    client = NameSystemClient(state_dir.network, home)
    try:
        result = idp.retrieve(rp, ticket, client, wrapped_key=wrapped)
    except idp.RetrievalError as e:
        print(f"retrieval failed: {e}", file=sys.stderr)
        return 1
    if args.json:
        _print_json(
            {
                "values": {k: v.decode("utf-8", "replace") for k, v in result.values.items()},
                "failures": result.failures,
            }
        )
    else:
        for name, value in sorted(result.values.items()):
            print(f"{name}={value.decode('utf-8', 'replace')}")
        for name, reason in sorted(result.failures.items()):
            print(f"{name}!{reason}", file=sys.stderr)
    if result.failures:
        return 1
    return 0


def cmd_clock(args, state_dir: StateDir) -> int:
    if args.action == "advance":
        state_dir.network.step_until(state_dir.network.clock_ms + args.ms)
        print(f"clock {state_dir.network.clock_ms:.0f} ms")
    else:  # show
        if args.json:
            _print_json({"clock_ms": state_dir.network.clock_ms})
        else:
            print(f"clock {state_dir.network.clock_ms:.0f} ms")
    return 0


def cmd_serve(args, state_dir: StateDir) -> int:
    provider = state_dir.provider(args.id)
    conf_path = args.config or state_dir.conf_path
    cfg = oidc.ServiceConfig.parse(conf_path) if os.path.exists(conf_path) else oidc.ServiceConfig()
    clients_path = cfg.clients_path
    if not os.path.isabs(clients_path):
        clients_path = os.path.join(state_dir.path, clients_path)
    clients = oidc.load_clients(clients_path) if os.path.exists(clients_path) else {}
    service = oidc.OidcService(
        provider, clients, auto_approve=cfg.auto_approve, ui_dir=cfg.ui_dir
    )
    server = oidc.make_server(service, cfg.listen_host, cfg.listen_port)
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        state_dir.save()
    return 0


def cmd_bench(args) -> int:
    config = bench.ExperimentConfig(
        sizes=tuple(int(s) for s in args.sizes.split(",")),
        runs=args.runs,
        repeats=args.repeats,
        seed=args.seed,
        latency=LatencyParams(median_ms=args.latency_median, sigma=args.latency_sigma),
        topology=args.topology,
        degree=args.degree,
    )
    try:
        config.validate()
    except ValueError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 1
    measurements = bench.run_experiment(config)
    paths = bench.write_csv_outputs(measurements, args.out)
    summary = bench.summarize(measurements)
    for row in summary.by_size:
        print(
            f"size={row['size']} attr_median={row['attr_median_ms']:.1f}ms "
            f"first_attr_median={row['first_attr_median_ms']:.1f}ms "
            f"key_median={row['key_median_ms']:.1f}ms"
        )
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peeridp", description=__doc__.splitlines()[0])
    parser.add_argument("--state-dir", "-d", default="./idp-state", help="state directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_id = sub.add_parser("id", help="manage identities")
    id_sub = p_id.add_subparsers(dest="action", required=True)
    p = id_sub.add_parser("create")
    p.add_argument("name")
    p = id_sub.add_parser("list")
    p.add_argument("--json", action="store_true")

    p_attr = sub.add_parser("attr", help="manage attributes")
    attr_sub = p_attr.add_subparsers(dest="action", required=True)
    for action in ("store", "update"):
        p = attr_sub.add_parser(action)
        p.add_argument("id")
        p.add_argument("name")
        p.add_argument("value")
    p = attr_sub.add_parser("delete")
    p.add_argument("id")
    p.add_argument("name")
    p = attr_sub.add_parser("list")
    p.add_argument("id")
    p.add_argument("--json", action="store_true")

    p_ticket = sub.add_parser("ticket", help="issue and revoke authorizations")
    ticket_sub = p_ticket.add_subparsers(dest="action", required=True)
    p = ticket_sub.add_parser("issue")
    p.add_argument("id")
    p.add_argument("--rp", required=True, help="local identity name or <sig_b32>:<kx_b32>")
    p.add_argument("--attrs", required=True, help="comma-separated attribute names")
    p.add_argument("--key-out", help="write the wrapped key blob to this file")
    p = ticket_sub.add_parser("revoke")
    p.add_argument("id")
    p.add_argument("ticket")
    p = ticket_sub.add_parser("list")
    p.add_argument("id")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("retrieve", help="requesting-party retrieval")
    p.add_argument("ticket")
    p.add_argument("--rp-id", required=True, help="local identity acting as the requesting party")
    p.add_argument("--key", help="wrapped key blob from an out-of-band handover")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("clock", help="simulated clock")
    clock_sub = p.add_subparsers(dest="action", required=True)
    p = clock_sub.add_parser("advance")
    p.add_argument("ms", type=float)
    p = clock_sub.add_parser("show")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run the OIDC service with the embedded simulator")
    p.add_argument("id")
    p.add_argument("--config", help="service.conf path (default: state dir)")

    p_bench = sub.add_parser("bench", help="retrieval performance experiment")
    bench_sub = p_bench.add_subparsers(dest="action", required=True)
    p = bench_sub.add_parser("run")
    p.add_argument("--sizes", default="50,100,150,200")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="results")
    p.add_argument("--topology", default="random-regular")
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--latency-median", type=float, default=10.0)
    p.add_argument("--latency-sigma", type=float, default=0.5)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        return cmd_bench(args)
    try:
        state_dir = StateDir(args.state_dir)
    except BlockingIOError:
        print("state directory is locked by another process", file=sys.stderr)
        return 1
    try:
        if args.command == "id":
            code = cmd_id(args, state_dir)
        elif args.command == "attr":
            code = cmd_attr(args, state_dir)
        elif args.command == "ticket":
            code = cmd_ticket(args, state_dir)
        elif args.command == "retrieve":
            code = cmd_retrieve(args, state_dir)
        elif args.command == "clock":
            code = cmd_clock(args, state_dir)
        elif args.command == "serve":
            return cmd_serve(args, state_dir)
        else:
            raise CliError(f"unknown command {args.command!r}")
        state_dir.save()
        return code
    except (CliError, idp.IdpError, abe.AbeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
