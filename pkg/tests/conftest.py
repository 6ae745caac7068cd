import pytest

from kadmesh.simnet import RandomWalkConfig, Simulator, spawn_chain, spawn_converged, wait_for_joins


def quiet_sim(seed=0, **kw):
    """Simulator without periodic refresh or random walk."""
    kw.setdefault("refresh_enabled", False)
    kw.setdefault("random_walk", RandomWalkConfig(enabled=False))
    return Simulator(seed=seed, **kw)


def chain(n, seed=0, **kw):
    sim = quiet_sim(seed, **kw)
    nodes = spawn_chain(sim, n)
    wait_for_joins(sim, n)
    return sim, nodes


def converged(n, seed=0, **kw):
    sim = quiet_sim(seed, **kw)
    return sim, spawn_converged(sim, n)


def global_nearest(sim, target, exclude, k=20):
    t = int.from_bytes(target, "big")
    ids = [i for i in sim.live_ids() if i != exclude]
    return sorted(ids, key=lambda i: int.from_bytes(i, "big") ^ t)[:k]


@pytest.fixture(scope="session")
def testbed40():
    return chain(40, seed=0)
