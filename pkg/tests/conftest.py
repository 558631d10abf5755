import numpy as np
import pytest

from delayflock.influence import InfluenceFunction
from delayflock.particles import InitialHistory


@pytest.fixture
def exp_psi():
    return InfluenceFunction.exponential()


@pytest.fixture
def cs4():
    return InfluenceFunction.cucker_smale(4.0)


def const_history(velocities, tau, anchor_time=None, anchors=None):
    v = np.asarray(velocities, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    at = -tau if anchor_time is None else anchor_time
    return InitialHistory.constant_velocity(v, tau, anchor_positions=anchors, anchor_time=at)


def random_history(rng, n, d, tau, spread=1.0):
    x0 = rng.uniform(-spread, spread, size=(n, d))
    v = rng.uniform(-1.0, 1.0, size=(n, d))
    return InitialHistory.constant_velocity(v, tau, anchor_positions=x0)


def random_flock_config(seed):
    """Seeded small configuration: N in [2, 8], d in {1, 2}, exponential or Cucker-Smale(1) kernel."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    d = int(rng.integers(1, 3))
    tau = float(rng.uniform(0.05, 1.0))
    psi = InfluenceFunction.exponential() if rng.random() < 0.5 else InfluenceFunction.cucker_smale(1.0)
    x0 = rng.uniform(0, 0.5, (n, d))
    v = rng.uniform(-0.3, 0.3, (n, d))
    return InitialHistory.constant_velocity(v, tau, anchor_positions=x0, anchor_time=-tau), psi
