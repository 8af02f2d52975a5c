import numpy as np
import pytest

from coalwalk import GraphSpec, RateGenerator, build_graph, walk_generator


@pytest.fixture
def two_state_symmetric():
    return RateGenerator(2, [(0, 1, 1.0), (1, 0, 1.0)])


@pytest.fixture
def two_state_asymmetric():
    # q(0,1)=1, q(1,0)=2 -> pi = (2/3, 1/3)
    return RateGenerator(2, [(0, 1, 1.0), (1, 0, 2.0)])


@pytest.fixture
def three_cycle():
    return walk_generator(build_graph(GraphSpec("cycle", n=3)))


def k_walk(n):
    return walk_generator(build_graph(GraphSpec("complete", n=n)))


def random_chain(n, rng, density=0.5):
    """Random irreducible generator: a directed cycle plus random extra rates."""
    trips = [(x, (x + 1) % n, float(rng.uniform(0.1, 1.0))) for x in range(n)]
    for x in range(n):
        for y in range(n):
            if x != y and rng.random() < density:
                trips.append((x, y, float(rng.uniform(0.0, 1.0))))
    return RateGenerator(n, trips)


@pytest.fixture
def chain_matrix():
    """Small battery of structurally different chains."""
    rng = np.random.default_rng(424242)
    return {
        "two_state": RateGenerator(2, [(0, 1, 1.0), (1, 0, 1.0)]),
        "two_state_skew": RateGenerator(2, [(0, 1, 1.0), (1, 0, 2.0)]),
        "k4": k_walk(4),
        "cycle5": walk_generator(build_graph(GraphSpec("cycle", n=5))),
        "star4": walk_generator(build_graph(GraphSpec("star", n=4))),
        "random5": random_chain(5, rng),
        "random6": random_chain(6, rng, density=0.3),
    }
