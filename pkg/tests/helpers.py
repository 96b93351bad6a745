"""Independent oracles used across the test suite.

Everything here is deliberately implemented with plain Python loops and
scalar math so it shares no code path with the library.
"""

import math

import numpy as np


def scalar_activation(name, x):
    if name == "tanh":
        return math.tanh(x)
    if name == "sigmoid":
        return 1.0 / (1.0 + math.exp(-x))
    if name == "softplus":
        return math.log1p(math.exp(x)) if x < 30 else x
    raise ValueError(name)


def scalar_forward(weights, top, activation, x):
    """Direct expansion of the nested mean-field sums, one scalar at a time."""
    cur = list(x)
    for W in weights:
        m_out, m_in = len(W), len(W[0])
        nxt = []
        for j in range(m_out):
            s = 0.0
            for k in range(m_in):
                s += W[j][k] * cur[k]
            nxt.append(scalar_activation(activation, s / m_in))
        cur = nxt
    m, K = len(top), len(top[0])
    out = [0.0] * K
    for j in range(m):
        for c in range(K):
            out[c] += top[j][c] * cur[j]
    return [v / m for v in out]


def central_diff(func, theta, eps=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += eps
        dn[i] -= eps
        grad[i] = (func(up) - func(dn)) / (2 * eps)
    return grad


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def flatten_params(net):
    return np.concatenate([w.ravel() for w in net.weights] + [net.top.ravel()])


def set_params(net, theta):
    offset = 0
    for w in net.weights:
        n = w.size
        w[...] = theta[offset : offset + n].reshape(w.shape)
        offset += n
    n = net.top.size
    net.top[...] = theta[offset : offset + n].reshape(net.top.shape)
    assert offset + n == theta.size


class ScalarAdam:
    """Reference Adam on a single scalar, straight from the update rules."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = 0.0
        self.v = 0.0
        self.t = 0

    def step(self, theta, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (math.sqrt(vhat) + self.eps)


def grid_project(v, total, floor, steps=201):
    """Brute-force projection onto {p >= floor, sum p = total} for len <= 4.

    Scans a dense grid of the feasible set and returns the closest point;
    only used to cross-check the sorted-threshold implementation.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    free = total - n * floor
    assert free > 0
    if n == 1:
        return np.array([total])
    axes = [np.linspace(0.0, free, steps)] * (n - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    rest = free - sum(mesh)
    ok = rest >= -1e-12
    pts = np.stack([m[ok] for m in mesh] + [rest[ok]], axis=-1) + floor
    d = np.sum((pts - v[None, :]) ** 2, axis=1)
    return pts[int(np.argmin(d))]
