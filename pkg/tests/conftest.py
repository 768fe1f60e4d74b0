import os
import random

import pytest

from peeridp import idp
from peeridp.namesys import NameSystemClient, sim_build

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def golden(name: str) -> bytes:
    with open(os.path.join(GOLDEN_DIR, name)) as f:
        return bytes.fromhex(f.read().strip())


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


@pytest.fixture
def network():
    return sim_build(30, seed=1234, topology="random-regular", degree=4)


@pytest.fixture
def clique():
    return sim_build(20, seed=99, topology="clique")


def make_provider(network, home=0, ttl_ms=3_600_000, store_backend=None):
    state = idp.IdentityState.create()
    client = NameSystemClient(network, home)
    return idp.IdentityProvider(state, client, ttl_ms=ttl_ms, store_backend=store_backend)


@pytest.fixture
def provider(network):
    return make_provider(network)
