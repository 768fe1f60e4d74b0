"""Retrieval-performance experiment on the simulated network.

One run bootstraps a fresh network, fixes a user node A, then repeats a
six-step exchange with a different requesting-party node B each time: create
identities, store an attribute, authorize B, then measure how long B takes
to resolve the user key and to resolve the attribute.  The network is not
reset between repeats, so successive attribute resolutions feel the caches
warming up, while every key lookup targets a fresh random label and never
benefits.

All randomness (node ids, topology, latency, node choices, key material)
derives from the experiment seed, so one seed maps to one byte-exact
measurements file.  Times are simulated milliseconds: trends and shapes are
meaningful, absolute numbers are an artifact of the latency model.
"""

from __future__ import annotations

import hashlib
import os
import random
import statistics
from dataclasses import dataclass, field

from . import abe, idp
from .namesys import LatencyParams, NameSystemClient, sim_build

ATTRIBUTE_NAME = "email"
ATTRIBUTE_VALUE = b"alice@doe.com"


@dataclass(frozen=True)
class ExperimentConfig:
    sizes: tuple[int, ...] = (50, 100, 150, 200)
    runs: int = 50
    repeats: int = 10
    seed: int = 42
    latency: LatencyParams = field(default_factory=LatencyParams)
    topology: str = "random-regular"
    degree: int = 4
    replication: int = 3
    ttl_ms: int = 3_600_000

    def validate(self) -> None:
        if not self.sizes or any(s < 2 for s in self.sizes):
            raise ValueError("sizes must be a non-empty list of integers >= 2")
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if self.repeats < 2:
            raise ValueError("repeats must be at least 2 to observe caching")
        if any(self.repeats + 1 > s for s in self.sizes):
            raise ValueError("each repeat needs a distinct requesting node")


@dataclass(frozen=True)
class Measurement:
    size: int
    run: int
    repeat: int
    key_ms: float
    attr_ms: float
    key_hops: int
    attr_hops: int


def _digest_seed(*parts) -> bytes:
    return hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()


def _deterministic_identity(seed_material: bytes) -> idp.IdentityState:
    def expand(label: bytes) -> bytes:
        return hashlib.sha256(seed_material + label).digest()

    # key material expanded from the run seed, not the OS entropy pool:
    # one config seed must map to one byte-exact measurements file
    return idp.IdentityState(
        signing_seed=expand(b"sign"),
        kx_seed=expand(b"kx"),
        abe_secret=expand(b"abe"),
        rnd_seed=expand(b"rnd"),
    )


def _run_once(config: ExperimentConfig, size: int, run: int) -> list[Measurement]:
    run_digest = _digest_seed(config.seed, size, run)
    net_seed = int.from_bytes(run_digest[:8], "big") % 2**31
    network = sim_build(
        size,
        net_seed,
        topology=config.topology,
        latency=config.latency,
        replication=config.replication,
        degree=config.degree,
    )
    rng = random.Random(int.from_bytes(run_digest[8:16], "big"))
    user_node = rng.randrange(size)
    user = _deterministic_identity(run_digest + b"user")
    provider = idp.IdentityProvider(
        user, NameSystemClient(network, user_node), ttl_ms=config.ttl_ms
    )

    measurements: list[Measurement] = []
    chosen = {user_node}
    for repeat in range(1, config.repeats + 1):
        rp_node = rng.randrange(size)
        while rp_node in chosen:
            rp_node = rng.randrange(size)
        chosen.add(rp_node)

        rp_seed = _digest_seed(config.seed, size, run, repeat).hex()
        rp = idp.PartyKeys(
            signing_seed=hashlib.sha256((rp_seed + "s").encode()).digest(),
            kx_seed=hashlib.sha256((rp_seed + "k").encode()).digest(),
        )
        provider.store(ATTRIBUTE_NAME, ATTRIBUTE_VALUE)
        grant = provider.authorize(rp.signing_public, rp.kx_public, [ATTRIBUTE_NAME])

        rp_client = NameSystemClient(network, rp_node)
        key_res = rp_client.resolve(user.public_id, grant.ticket.rnd)
        user_key = abe.unwrap_key(rp.kx_seed, key_res.payload)
        attr_res = rp_client.resolve(user.public_id, ATTRIBUTE_NAME)
        value = abe.decrypt(user_key, abe.AbeCiphertext.deserialize(attr_res.payload))
        assert value == ATTRIBUTE_VALUE

        measurements.append(
            Measurement(
                size=size,
                run=run,
                repeat=repeat,
                key_ms=key_res.duration_ms,
                attr_ms=attr_res.duration_ms,
                key_hops=key_res.hops,
                attr_hops=attr_res.hops,
            )
        )
    return measurements


def run_experiment(config: ExperimentConfig) -> list[Measurement]:
    config.validate()
    measurements: list[Measurement] = []
    for size in config.sizes:
        for run in range(config.runs):
            measurements.extend(_run_once(config, size, run))
    return measurements


def _quartiles(values: list[float]) -> tuple[float, float, float, float, float]:
    ordered = sorted(values)
    med = statistics.median_low(ordered)
    if len(ordered) >= 2:
        q1, _, q3 = statistics.quantiles(ordered, n=4, method="inclusive")
    else:
        q1 = q3 = float(ordered[0])
    return ordered[0], q1, med, q3, ordered[-1]


@dataclass(frozen=True)
class Summary:
    by_size: list[dict]
    by_repeat: list[dict]


def summarize(measurements: list[Measurement]) -> Summary:
    """Per-size and per-(size, repeat) lower-medians with box-plot dispersion."""
    if not measurements:
        raise ValueError("no measurements to summarize")
    sizes = sorted({m.size for m in measurements})
    repeats = sorted({m.repeat for m in measurements})

    by_size = []
    for size in sizes:
        group = [m for m in measurements if m.size == size]
        first = [m for m in group if m.repeat == 1]
        attr = _quartiles([m.attr_ms for m in group])
        key = _quartiles([m.key_ms for m in group])
        by_size.append(
            {
                "size": size,
                "attr_min_ms": attr[0],
                "attr_q1_ms": attr[1],
                "attr_median_ms": attr[2],
                "attr_q3_ms": attr[3],
                "attr_max_ms": attr[4],
                "key_median_ms": key[2],
                "first_attr_median_ms": statistics.median_low([m.attr_ms for m in first]),
                "first_attr_median_hops": statistics.median_low([m.attr_hops for m in first]),
            }
        )

    by_repeat = []
    for size in sizes:
        for repeat in repeats:
            group = [m for m in measurements if m.size == size and m.repeat == repeat]
            if not group:
                continue
            attr = _quartiles([m.attr_ms for m in group])
            key = _quartiles([m.key_ms for m in group])
            by_repeat.append(
                {
                    "size": size,
                    "repeat": repeat,
                    "attr_min_ms": attr[0],
                    "attr_q1_ms": attr[1],
                    "attr_median_ms": attr[2],
                    "attr_q3_ms": attr[3],
                    "attr_max_ms": attr[4],
                    "key_min_ms": key[0],
                    "key_q1_ms": key[1],
                    "key_median_ms": key[2],
                    "key_q3_ms": key[3],
                    "key_max_ms": key[4],
                }
            )
    return Summary(by_size=by_size, by_repeat=by_repeat)


def _fmt(value) -> str:
    return f"{value:.3f}" if isinstance(value, float) else str(value)


def write_csv_outputs(measurements: list[Measurement], out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["measurements"] = os.path.join(out_dir, "measurements.csv")
    with open(paths["measurements"], "w") as f:
        f.write("size,run,repeat,key_ms,attr_ms,key_hops,attr_hops\n")
        for m in measurements:
            f.write(
                f"{m.size},{m.run},{m.repeat},{m.key_ms:.3f},{m.attr_ms:.3f},"
                f"{m.key_hops},{m.attr_hops}\n"
            )

    summary = summarize(measurements)
    for name, rows in (("summary_by_size", summary.by_size), ("summary_by_repeat", summary.by_repeat)):
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        with open(paths[name], "w") as f:
            header = list(rows[0].keys())
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(_fmt(row[k]) for k in header) + "\n")
    return paths
