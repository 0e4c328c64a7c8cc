import pytest

from dist_helpers import random_dist
from sparsamp.codec import build_distribution
from sparsamp.randomness import SeedKey


@pytest.fixture
def zero_key():
    return SeedKey(bytes(32))


@pytest.fixture
def quarter_dist():
    """cum = [0.25, 0.75, 1.0]: the worked-example distribution."""
    return build_distribution([0, 1, 2], [0.25, 0.5, 0.25])


class ConstantSource:
    """Serves the same distribution every step; handy for hand traces."""

    eos_id = None

    def __init__(self, dist, max_steps):
        self.dist = dist
        self.max_steps = max_steps
        self.served = 0

    def next_dist(self):
        if self.served >= self.max_steps:
            return None
        self.served += 1
        return self.dist

    def advance(self, token_id):
        pass


@pytest.fixture
def constant_source_cls():
    return ConstantSource


@pytest.fixture
def make_random_dist():
    return random_dist
