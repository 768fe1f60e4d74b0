"""Deterministic event-driven simulator for a replicated DHT.

Routing is simplified XOR-metric iterative lookup: a resolver works through
candidate nodes in order of distance to the query key, learning each queried
node's neighbors, until some node answers from its store or cache.  Replica
placement is on the nodes closest to the query key.  Per-message latency is
drawn from a seeded log-normal distribution, so identical seeds and scripts
replay to identical event traces.

Nodes verify a blob's embedded signature before storing or caching it, and
evict entries the moment the simulated clock passes their expiration.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import OrderedDict
from dataclasses import dataclass

from . import records
from .records import blob_expiration, verify_blob

CACHE_CAPACITY = 1024
DEFAULT_REPLICATION = 3
DEFAULT_DEGREE = 4


class NotFound(Exception):
    """No unexpired record reachable for the query key."""


class SignatureInvalid(Exception):
    """Every reachable copy failed signature verification."""


class PublishError(Exception):
    pass


@dataclass(frozen=True)
class LatencyParams:
    median_ms: float = 10.0
    sigma: float = 0.5

    def sample(self, rng: random.Random) -> float:
        return rng.lognormvariate(math.log(self.median_ms), self.sigma)


@dataclass(frozen=True)
class PublishReceipt:
    query_key: bytes
    expiration_ms: int
    replicas: tuple[int, ...]
    duration_ms: float


@dataclass(frozen=True)
class DepublishReceipt:
    query_key: bytes
    removed_from: tuple[int, ...]


@dataclass(frozen=True)
class ResolveResult:
    record_type: int
    payload: bytes
    expiration_ms: int
    hops: int
    duration_ms: float
    query_key: bytes


@dataclass
class _Entry:
    blob: bytes
    since_ms: float


class DhtNode:
    """One peer: an authoritative store plus a bounded LRU cache."""

    def __init__(self, index: int, node_id: bytes):
        self.index = index
        self.node_id = node_id
        self.store: dict[bytes, _Entry] = {}
        self.cache: OrderedDict[bytes, _Entry] = OrderedDict()

    def lookup(self, query_key: bytes, now_ms: float) -> tuple[bytes, str] | None:
        """Return (blob, source) for an unexpired copy, authoritative first."""
        entry = self.store.get(query_key)
        if entry is not None and blob_expiration(entry.blob) > now_ms:
            return entry.blob, "store"
        entry = self.cache.get(query_key)
        if entry is not None and blob_expiration(entry.blob) > now_ms:
            self.cache.move_to_end(query_key)
            return entry.blob, "cache"
        return None

    def cache_put(self, query_key: bytes, blob: bytes, now_ms: float) -> bool:
        if query_key in self.store:
            return False
        if not verify_blob(blob) or blob_expiration(blob) <= now_ms:
            return False
        self.cache[query_key] = _Entry(blob, now_ms)
        self.cache.move_to_end(query_key)
        while len(self.cache) > CACHE_CAPACITY:
            self.cache.popitem(last=False)
        return True


def _xor_distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def _clique(n: int) -> list[list[int]]:
    return [[j for j in range(n) if j != i] for i in range(n)]


def _random_regular(n: int, degree: int, rng: random.Random) -> list[list[int]]:
    """Random regular graph as a union of degree/2 random Hamiltonian rings.

    Always connected (every ring is a spanning cycle) and cheap to sample
    deterministically; edge collisions between rings just get resampled.
    """
    if degree >= n:
        return _clique(n)
    if degree % 2 != 0 or degree < 2:
        raise ValueError("degree must be a positive even number")
    edges: set[tuple[int, int]] = set()
    for _ in range(degree // 2):
        for _attempt in range(1000):
            order = list(range(n))
            rng.shuffle(order)
            ring = {
                (min(a, b), max(a, b))
                for a, b in zip(order, order[1:] + order[:1])
            }
            if len(ring) == n and not (ring & edges):
                edges |= ring
                break
        else:
            raise RuntimeError("failed to sample disjoint rings for topology")
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    return [sorted(neighbors) for neighbors in adjacency]


class _Op:
    done = False

    def on_message(self, network: "SimNetwork", msg: dict) -> None:
        raise NotImplementedError


class SimNetwork:
    """The simulated network: nodes, topology, event queue, trace."""

    def __init__(
        self,
        size: int,
        seed: int,
        topology: str = "clique",
        latency: LatencyParams | None = None,
        replication: int = DEFAULT_REPLICATION,
        degree: int = DEFAULT_DEGREE,
    ):
        if size < 2:
            raise ValueError("network size must be at least 2")
        self.size = size
        self.seed = seed
        self.topology = topology
        self.degree = degree
        self.latency = latency or LatencyParams()
        self.replication = replication
        self.rng = random.Random(seed)
        self.clock_ms = 0.0
        self._seq = 0
        self._events: list[tuple[float, int, dict]] = []
        self._expiry: list[tuple[int, int, bytes, str]] = []
        self.trace: list[tuple[float, str, int, str, str]] = []

        ids: set[bytes] = set()
        self.nodes: list[DhtNode] = []
        for index in range(size):
            node_id = self.rng.randbytes(32)
            while node_id in ids:
                node_id = self.rng.randbytes(32)
            ids.add(node_id)
            self.nodes.append(DhtNode(index, node_id))

        if topology == "clique":
            self.adjacency = _clique(size)
        elif topology == "random-regular":
            self.adjacency = _random_regular(size, degree, self.rng)
        else:
            raise ValueError(f"unknown topology {topology!r}")

    # -- trace and time --

    def _emit(self, event: str, node: int, query_key: bytes, detail: str) -> None:
        self.trace.append((self.clock_ms, event, node, query_key.hex(), detail))

    def _advance_clock(self, t: float) -> None:
        self.clock_ms = max(self.clock_ms, t)
        while self._expiry and self._expiry[0][0] <= self.clock_ms:
            exp, index, query_key, kind = heapq.heappop(self._expiry)
            node = self.nodes[index]
            table = node.store if kind == "store" else node.cache
            entry = table.get(query_key)
            if entry is not None and blob_expiration(entry.blob) == exp:
                del table[query_key]
                self._emit("expire", index, query_key, kind)

    def _track_expiry(self, index: int, query_key: bytes, blob: bytes, kind: str) -> None:
        heapq.heappush(self._expiry, (blob_expiration(blob), index, query_key, kind))

    # -- messaging --

    def _send(self, op: _Op, kind: str, src: int, dst: int, query_key: bytes, body: dict) -> None:
        delay = self.latency.sample(self.rng)
        self._seq += 1
        msg = {"op": op, "kind": kind, "src": src, "dst": dst, "qk": query_key, **body}
        self._emit("send", src, query_key, f"{kind}->{dst}")
        heapq.heappush(self._events, (self.clock_ms + delay, self._seq, msg))

    def _dispatch(self, msg: dict) -> None:
        kind, dst, query_key = msg["kind"], msg["dst"], msg["qk"]
        node = self.nodes[dst]
        op: _Op = msg["op"]
        if kind == "STORE":
            blob = msg["blob"]
            ok = verify_blob(blob) and blob_expiration(blob) > self.clock_ms
            self._emit("receive", dst, query_key, "STORE" if ok else "STORE-reject")
            if ok:
                node.store[query_key] = _Entry(blob, self.clock_ms)
                self._track_expiry(dst, query_key, blob, "store")
                self._emit("store", dst, query_key, "replica")
            self._send(op, "STORE_ACK", dst, msg["src"], query_key, {"ok": ok})
        elif kind == "REMOVE":
            self._emit("receive", dst, query_key, "REMOVE")
            node.store.pop(query_key, None)
            self._send(op, "REMOVE_ACK", dst, msg["src"], query_key, {})
        elif kind == "QUERY":
            self._emit("receive", dst, query_key, "QUERY")
            found = node.lookup(query_key, self.clock_ms)
            if found is not None:
                blob, source = found
                if source == "cache":
                    self._emit("cache-hit", dst, query_key, "serve")
                self._send(op, "QUERY_HIT", dst, msg["src"], query_key, {"blob": blob, "source": source})
            else:
                self._send(op, "QUERY_MISS", dst, msg["src"], query_key, {"neighbors": self.adjacency[dst]})
        else:  # responses route back to the waiting operation
            self._emit("receive", dst, query_key, kind)
            op.on_message(self, msg)

    def _run_op(self, op: _Op) -> None:
        while not op.done:
            if not self._events:
                raise RuntimeError("operation stalled with no pending events")
            t, _, msg = heapq.heappop(self._events)
            self._advance_clock(t)
            self._dispatch(msg)

    def step_until(self, until_ms: float) -> list[tuple[float, str, int, str, str]]:
        """Process every queued event up to the given simulated time."""
        if until_ms < self.clock_ms:
            raise ValueError("cannot step backwards in time")
        mark = len(self.trace)
        while self._events and self._events[0][0] <= until_ms:
            t, _, msg = heapq.heappop(self._events)
            self._advance_clock(t)
            self._dispatch(msg)
        self._advance_clock(until_ms)
        return self.trace[mark:]

    # -- placement --

    def closest_nodes(self, query_key: bytes, count: int) -> list[int]:
        ranked = sorted(self.nodes, key=lambda n: (_xor_distance(n.node_id, query_key), n.index))
        return [n.index for n in ranked[:count]]

    # -- persistence (for the CLI's cross-invocation network) --

    def to_state(self) -> dict:
        if self._events:
            raise RuntimeError("cannot snapshot a network with in-flight messages")
        version, internal, gauss = self.rng.getstate()
        return {
            "size": self.size,
            "seed": self.seed,
            "topology": self.topology,
            "degree": self.degree,
            "replication": self.replication,
            "latency": {"median_ms": self.latency.median_ms, "sigma": self.latency.sigma},
            "clock_ms": self.clock_ms,
            "seq": self._seq,
            "rng_state": [version, list(internal), gauss],
            "adjacency": self.adjacency,
            "node_ids": [n.node_id.hex() for n in self.nodes],
            "stores": [
                [[qk.hex(), e.blob.hex(), e.since_ms] for qk, e in n.store.items()]
                for n in self.nodes
            ],
            "caches": [
                [[qk.hex(), e.blob.hex(), e.since_ms] for qk, e in n.cache.items()]
                for n in self.nodes
            ],
            "expiry": [[exp, idx, qk.hex(), kind] for exp, idx, qk, kind in self._expiry],
        }

    @classmethod
    def from_state(cls, doc: dict) -> "SimNetwork":
        net = cls.__new__(cls)
        net.size = doc["size"]
        net.seed = doc["seed"]
        net.topology = doc["topology"]
        net.degree = doc["degree"]
        net.replication = doc["replication"]
        net.latency = LatencyParams(**doc["latency"])
        net.clock_ms = doc["clock_ms"]
        net._seq = doc["seq"]
        net.rng = random.Random()
        version, internal, gauss = doc["rng_state"]
        net.rng.setstate((version, tuple(internal), gauss))
        net.adjacency = [list(neighbors) for neighbors in doc["adjacency"]]
        net._events = []
        net.trace = []
        net.nodes = [DhtNode(i, bytes.fromhex(h)) for i, h in enumerate(doc["node_ids"])]
        for node, entries in zip(net.nodes, doc["stores"]):
            for qk_hex, blob_hex, since in entries:
                node.store[bytes.fromhex(qk_hex)] = _Entry(bytes.fromhex(blob_hex), since)
        for node, entries in zip(net.nodes, doc["caches"]):
            for qk_hex, blob_hex, since in entries:
                node.cache[bytes.fromhex(qk_hex)] = _Entry(bytes.fromhex(blob_hex), since)
        net._expiry = [
            (exp, idx, bytes.fromhex(qk_hex), kind) for exp, idx, qk_hex, kind in doc["expiry"]
        ]
        heapq.heapify(net._expiry)
        return net


class _PublishOp(_Op):
    def __init__(self, network: SimNetwork, origin: int, query_key: bytes, blob: bytes):
        self.query_key = query_key
        self.started_ms = network.clock_ms
        self.targets = tuple(network.closest_nodes(query_key, network.replication))
        self.pending = len(self.targets)
        self.result: PublishReceipt | None = None
        for target in self.targets:
            network._send(self, "STORE", origin, target, query_key, {"blob": blob})
        self.expiration = blob_expiration(blob)

    def on_message(self, network: SimNetwork, msg: dict) -> None:
        self.pending -= 1
        if self.pending == 0:
            self.done = True
            self.result = PublishReceipt(
                query_key=self.query_key,
                expiration_ms=self.expiration,
                replicas=self.targets,
                duration_ms=network.clock_ms - self.started_ms,
            )


class _RemoveOp(_Op):
    def __init__(self, network: SimNetwork, origin: int, query_key: bytes, targets: list[int]):
        self.pending = len(targets)
        for target in targets:
            network._send(self, "REMOVE", origin, target, query_key, {})

    def on_message(self, network: SimNetwork, msg: dict) -> None:
        self.pending -= 1
        if self.pending == 0:
            self.done = True


class _ResolveOp(_Op):
    """Iterative best-first lookup from an origin node toward the query key."""

    def __init__(self, network: SimNetwork, origin: int, query_key: bytes):
        self.origin = origin
        self.query_key = query_key
        self.started_ms = network.clock_ms
        self.hops = 0
        self.tampered = False
        self.blob: bytes | None = None
        self.error: Exception | None = None
        self.visited = {origin}
        self.queried: list[int] = []
        self.candidates: list[tuple[int, int]] = []

        local = network.nodes[origin].lookup(query_key, network.clock_ms)
        if local is not None and verify_blob(local[0]):
            if local[1] == "cache":
                network._emit("cache-hit", origin, query_key, "local")
            self.blob = local[0]
            self.done = True
            return
        if local is not None:
            self.tampered = True
        for neighbor in network.adjacency[origin]:
            self._offer(network, neighbor)
        self._query_next(network)

    def _offer(self, network: SimNetwork, index: int) -> None:
        if index not in self.visited:
            heapq.heappush(
                self.candidates,
                (_xor_distance(network.nodes[index].node_id, self.query_key), index),
            )

    def _query_next(self, network: SimNetwork) -> None:
        while self.candidates:
            _, index = heapq.heappop(self.candidates)
            if index in self.visited:
                continue
            self.visited.add(index)
            self.queried.append(index)
            self.hops += 1
            network._send(self, "QUERY", self.origin, index, self.query_key, {})
            return
        if self.tampered:
            self.error = SignatureInvalid("all reachable copies failed verification")
        else:
            self.error = NotFound("no record for query key")
        self.done = True

    def on_message(self, network: SimNetwork, msg: dict) -> None:
        if msg["kind"] == "QUERY_HIT":
            blob = msg["blob"]
            valid = verify_blob(blob)
            if valid and blob_expiration(blob) > network.clock_ms:
                self.blob = blob
                self._populate_caches(network, blob)
                self.done = True
                return
            if not valid:
                self.tampered = True
            # expired in flight: keep looking, this is not a tamper signal
            self._query_next(network)
        elif msg["kind"] == "QUERY_MISS":
            for neighbor in msg["neighbors"]:
                self._offer(network, neighbor)
            self._query_next(network)

    def _populate_caches(self, network: SimNetwork, blob: bytes) -> None:
        # Return path: every node touched by the lookup keeps a copy.
        for index in [self.origin, *self.queried]:
            if network.nodes[index].cache_put(self.query_key, blob, network.clock_ms):
                network._track_expiry(index, self.query_key, blob, "cache")
                network._emit("store", index, self.query_key, "cache")


def sim_build(
    size: int,
    seed: int,
    topology: str = "clique",
    latency: LatencyParams | None = None,
    replication: int = DEFAULT_REPLICATION,
    degree: int = DEFAULT_DEGREE,
) -> SimNetwork:
    return SimNetwork(size, seed, topology=topology, latency=latency, replication=replication, degree=degree)


def sim_step(network: SimNetwork, until_ms: float) -> list[tuple[float, str, int, str, str]]:
    return network.step_until(until_ms)


class NameSystemClient:
    """Blocking facade over the event loop, bound to one home node."""

    def __init__(self, network: SimNetwork, home_index: int = 0):
        if not 0 <= home_index < network.size:
            raise ValueError("home node index out of range")
        self.network = network
        self.home_index = home_index

    def publish(
        self,
        owner: records.Namespace,
        label: str,
        record_type: int,
        payload: bytes,
        ttl_ms: int,
    ) -> PublishReceipt:
        if ttl_ms <= 0:
            raise PublishError("ttl must be positive")
        if len(payload) > records.PAYLOAD_LIMIT:
            raise PublishError(f"payload exceeds {records.PAYLOAD_LIMIT} bytes")
        expiration = int(self.network.clock_ms) + ttl_ms
        blob = records.make_record_blob(owner, label, record_type, payload, expiration)
        query_key = records.derive_query_key(owner.public_id, label)
        op = _PublishOp(self.network, self.home_index, query_key, blob)
        self.network._run_op(op)
        assert op.result is not None
        return op.result

    def resolve(self, namespace_public: bytes, label: str) -> ResolveResult:
        query_key = records.derive_query_key(namespace_public, label)
        started = self.network.clock_ms
        op = _ResolveOp(self.network, self.home_index, query_key)
        self.network._run_op(op)
        if op.blob is None:
            assert op.error is not None
            raise op.error
        try:
            record = records.open_record(namespace_public, label, op.blob)
        except records.RecordError as e:
            raise SignatureInvalid(str(e)) from e
        return ResolveResult(
            record_type=record.record_type,
            payload=record.payload,
            expiration_ms=record.expiration_ms,
            hops=op.hops,
            duration_ms=self.network.clock_ms - started,
            query_key=query_key,
        )

    def depublish(self, owner: records.Namespace, label: str) -> DepublishReceipt:
        query_key = records.derive_query_key(owner.public_id, label)
        targets = self.network.closest_nodes(query_key, self.network.replication)
        held = [
            t
            for t in targets
            if query_key in self.network.nodes[t].store
            and blob_expiration(self.network.nodes[t].store[query_key].blob) > self.network.clock_ms
        ]
        if not held:
            raise NotFound(f"label not published authoritatively: {label!r}")
        op = _RemoveOp(self.network, self.home_index, query_key, held)
        self.network._run_op(op)
        return DepublishReceipt(query_key=query_key, removed_from=tuple(held))
