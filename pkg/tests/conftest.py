import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nfr.net import Network


@pytest.fixture
def fixture_net():
    """Small fixed two-hidden-layer net used by several oracle tests.

    d=2, widths (2, 2), K=1, tanh; weights chosen small so nothing
    saturates and finite differences stay well conditioned.
    """
    w1 = np.array([[0.31, -0.58], [0.72, 0.14]])
    w2 = np.array([[-0.44, 0.91], [0.27, 0.63]])
    u = np.array([[0.85], [-0.37]])
    return Network([w1, w2], u, "tanh")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_small_net(rng, max_depth=3, max_width=4, activation="tanh"):
    depth = int(rng.integers(1, max_depth + 1))
    d = int(rng.integers(1, max_width + 1))
    k = int(rng.integers(1, 3))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth)]
    weights = []
    fan_in = d
    for m in widths:
        weights.append(rng.normal(0.0, 1.0, size=(m, fan_in)))
        fan_in = m
    top = rng.normal(0.0, 1.0, size=(fan_in, k))
    return Network(weights, top, activation)
