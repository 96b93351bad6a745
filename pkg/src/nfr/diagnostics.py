"""Read-only analyses of a trained network.

``approx_variance`` estimates how far a randomly subsampled copy of the
network would drift from it: per layer, the batch average of the squared
sensitivity-weighted residuals between each neuron's contribution and the
layer mean, plus the matching top-layer term. ``kkt_pairs`` computes the
per-neuron stationarity estimates whose scatter is expected to be affine
at an optimum.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .net import Network, forward, sensitivities
from .regularizers import RegularizerSpec

__all__ = [
    "KKTPair",
    "approx_variance",
    "kkt_pairs",
    "pearson",
    "sparsity_cdf",
    "feature_functions",
    "write_variance_csv",
    "write_kkt_csv",
    "write_sparsity_csv",
    "write_features_csv",
]

FLOAT_FMT = "%.17g"


@dataclass
class KKTPair:
    layer: int
    neuron: int
    u_val: float
    v_val: float


def approx_variance(net: Network, x_batch) -> float:
    """Discretization-variance estimate V averaged over the batch.

    V = mean_x [ sum_{l=2..L} (1/m_{l-1}^2) sum_j || sum_i a_i(x)
    (f_j(x) w_ij - g_i(x)) ||^2  +  (1/m_L^2) sum_j || u_j f_j(x) - f(x) ||^2 ]
    with a_i the output sensitivity to the layer-l pre-activation.
    """
    if net.depth < 1:
        raise ValueError("approx_variance needs at least one hidden layer")
    X = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty input batch")
    tr = forward(net, X)
    a = sensitivities(net, tr, layers=range(2, net.depth + 1))
    n = X.shape[0]
    total = 0.0
    for l in range(2, net.depth + 1):
        W = net.weights[l - 1]  # (m_l, m_{l-1})
        A = a[l]  # (n, m_l, K)
        f_below = tr.act[l - 2]  # (n, m_{l-1})
        g = tr.pre[l - 1]  # (n, m_l)
        # s_j = f_j * (sum_i a_i w_ij) - sum_i a_i g_i, a K-vector per j
        c = np.einsum("nik,ij->njk", A, W, optimize=True)
        offs = np.einsum("nik,ni->nk", A, g, optimize=True)
        s = f_below[:, :, None] * c - offs[:, None, :]
        m_below = W.shape[1]
        total += float(np.sum(s * s)) / (m_below**2) / n
    out = tr.output  # (n, K)
    s_top = tr.act[-1][:, :, None] * net.top[None, :, :] - out[:, None, :]
    m_top = net.top.shape[0]
    total += float(np.sum(s_top * s_top)) / (m_top**2) / n
    return total


def kkt_pairs(net: Network, spec: RegularizerSpec, layer: int):
    """Stationarity estimates (u_j, v_j) for every neuron of one layer.

    u_j balances the layer's own penalty around neuron j; v_j is the
    matching upstream (or top) quantity. At an optimum of the
    (|w|, square) penalty the scatter of the two is affine.
    """
    L = net.depth
    if not 1 <= layer <= L:
        raise ValueError(f"layer {layer} out of range 1..{L}")
    lams = spec.lambdas(L)
    W = net.weights[layer - 1]
    m_out, m_in = W.shape
    absw = np.abs(W)
    col_sums = absw.sum(axis=0)  # per input node k
    u_vals = lams[layer - 1] / (m_out * m_in) * (absw @ col_sums)

    if layer < L:
        W_up = np.abs(net.weights[layer])
        v_vals = lams[layer] * (W_up.mean(axis=0) ** 2)
    else:
        v_vals = spec.lambda_u * np.sum(net.top**2, axis=1)

    return [
        KKTPair(layer, j, float(u_vals[j]), float(v_vals[j])) for j in range(m_out)
    ]


def pearson(pairs) -> float:
    """Pearson correlation of the (u, v) scatter."""
    if len(pairs) < 2:
        raise ValueError("need at least two pairs")
    u = np.array([p.u_val for p in pairs])
    v = np.array([p.v_val for p in pairs])
    du = u - u.mean()
    dv = v - v.mean()
    su = np.sqrt(np.sum(du * du))
    sv = np.sqrt(np.sum(dv * dv))
    if su == 0 or sv == 0:
        raise ValueError("degenerate scatter: zero variance in a coordinate")
    return float(np.clip(np.sum(du * dv) / (su * sv), -1.0, 1.0))


def sparsity_cdf(W, thresholds):
    """Fraction of entries with |w| <= t for each threshold t."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(thresholds < 0) or np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be non-negative and sorted")
    absw = np.abs(np.asarray(W, dtype=np.float64)).ravel()
    return np.array([np.mean(absw <= t) for t in thresholds])


def feature_functions(net: Network, layer: int, x_grid, neuron_ids):
    """Matrix of activations f_j(x): rows follow the grid, columns the
    requested neurons of the given layer."""
    L = net.depth
    if not 1 <= layer <= L:
        raise ValueError(f"layer {layer} out of range 1..{L}")
    m = net.hidden_widths[layer - 1]
    ids = list(neuron_ids)
    if any(not 0 <= j < m for j in ids):
        raise ValueError(f"neuron index out of range 0..{m - 1}: {ids}")
    X = np.atleast_2d(np.asarray(x_grid, dtype=np.float64))
    if X.shape[1] != net.input_dim and X.shape[0] == 1:
        X = X.T  # a flat grid for 1-d inputs
    tr = forward(net, X)
    return tr.act[layer - 1][:, ids]


# ----------------------------------------------------------- CSV emission


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _f(x):
    return FLOAT_FMT % x


def write_variance_csv(path, records):
    """records: iterable of (epoch, V)."""
    return _write_rows(path, ["epoch", "V"], [(e, _f(v)) for e, v in records])


def write_kkt_csv(out_dir, pairs):
    layer = pairs[0].layer
    path = os.path.join(out_dir, f"kkt_layer{layer}.csv")
    return _write_rows(
        path,
        ["neuron", "u_val", "v_val"],
        [(p.neuron, _f(p.u_val), _f(p.v_val)) for p in pairs],
    )


def write_sparsity_csv(out_dir, layer, thresholds, fractions):
    path = os.path.join(out_dir, f"sparsity_layer{layer}.csv")
    return _write_rows(
        path,
        ["threshold", "fraction"],
        [(_f(t), _f(fr)) for t, fr in zip(thresholds, fractions)],
    )


def write_features_csv(out_dir, layer, x_grid, neuron_ids, values):
    path = os.path.join(out_dir, f"features_layer{layer}.csv")
    header = ["x"] + [f"f_j{j}" for j in neuron_ids]
    grid = np.asarray(x_grid, dtype=np.float64).ravel()
    rows = [
        [_f(x)] + [_f(v) for v in values[i]] for i, x in enumerate(grid)
    ]
    return _write_rows(path, header, rows)
