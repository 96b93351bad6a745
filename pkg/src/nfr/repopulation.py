"""Importance-weight solving and discrete feature repopulation.

Each hidden layer carries positive per-neuron weights summing to the layer
width (so all-ones is neutral). ``solve_weights`` minimizes the
importance-weighted regularizer over that constraint set by projected
gradient descent with step halving; ``resample`` redraws every hidden
layer from the resulting categorical distribution, copying incoming rows
and rescaling outgoing connections by the inverse weight so each layer
sum stays unbiased.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .net import Network, forward
from .regularizers import RegularizerSpec, weighted_reg, weighted_reg_grad_p

__all__ = [
    "ImportanceWeights",
    "ProxConfig",
    "weighted_forward",
    "project_scaled_simplex",
    "solve_weights",
    "resample",
    "export_weights_csv",
]

EPS_FLOOR = 1e-8


@dataclass
class ImportanceWeights:
    """Per hidden layer, a positive vector of length m summing to m."""

    per_layer: list

    @classmethod
    def ones(cls, widths):
        return cls([np.ones(m) for m in widths])

    def validate(self, widths=None, floor=EPS_FLOOR):
        if widths is not None and tuple(len(v) for v in self.per_layer) != tuple(widths):
            raise ValueError(
                f"importance weights cover widths "
                f"{tuple(len(v) for v in self.per_layer)}, expected {tuple(widths)}"
            )
        for l, v in enumerate(self.per_layer, start=1):
            v = np.asarray(v, dtype=np.float64)
            if np.any(v < floor):
                raise ValueError(f"layer {l}: weights below the floor {floor}")
            m = v.size
            if abs(float(np.sum(v)) - m) > 1e-9 * m:
                raise ValueError(
                    f"layer {l}: weights sum to {float(np.sum(v))}, expected {m}"
                )
        return self

    def __iter__(self):
        return iter(self.per_layer)

    def __len__(self):
        return len(self.per_layer)


@dataclass
class ProxConfig:
    step: float = 0.5
    max_iters: int = 500
    tol: float = 1e-12
    floor: float = EPS_FLOOR
    max_halvings: int = 30

    def __post_init__(self):
        if self.step <= 0 or self.tol <= 0 or self.floor <= 0:
            raise ValueError("step, tol, and floor must be positive")
        if self.max_iters < 0 or self.max_halvings < 0:
            raise ValueError("iteration budgets cannot be negative")


def weighted_forward(net: Network, p, x):
    """Importance-weighted evaluation: weights are divided by the input
    node's p and every activation is premultiplied by its own p. The two
    factors cancel algebraically, so this equals forward(net, x)."""
    p = getattr(p, "per_layer", p)
    vecs = [np.ones(net.input_dim)] + [np.asarray(v, dtype=np.float64) for v in p]
    if len(vecs) != net.depth + 1:
        raise ValueError(
            f"importance weights cover {len(vecs) - 1} layers, network has {net.depth}"
        )
    for l, (v, m) in enumerate(zip(vecs[1:], net.hidden_widths), start=1):
        if v.shape != (m,) or np.any(v <= 0):
            raise ValueError(f"layer {l}: importance weights must be positive, length {m}")

    from .net import _act  # same activation table as the plain forward

    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    cur = x[None, :] if single else x
    for l, w in enumerate(net.weights):
        p_in = vecs[l]
        g = ((cur * p_in[None, :]) @ (w / p_in[None, :]).T) / w.shape[1]
        cur = _act(net.activation, g)
    p_top = vecs[-1]
    out = (cur * p_top[None, :]) @ (net.top / p_top[:, None]) / net.top.shape[0]
    return out[0] if single else out


def project_scaled_simplex(v, total, floor=0.0):
    """Euclidean projection onto {p : p_j >= floor, sum_j p_j = total}
    by the sorted-threshold method."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    if total <= n * floor:
        raise ValueError(
            f"infeasible target: total {total} <= {n} * floor {floor}"
        )
    u = v - floor
    budget = total - n * floor
    s = np.sort(u)[::-1]
    cssv = np.cumsum(s) - budget
    idx = np.arange(1, n + 1)
    cond = s - cssv / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = cssv[rho - 1] / rho
    return np.maximum(u - theta, 0.0) + floor


def solve_weights(
    net: Network,
    spec: RegularizerSpec,
    cfg: ProxConfig = None,
    return_history=False,
):
    """Minimize the importance-weighted regularizer over the per-layer
    constraint sets, starting from all-ones.

    Projected gradient descent; on an objective increase the step is
    halved (up to cfg.max_halvings, then the solve stops). The accepted
    objective sequence is non-increasing by construction.
    """
    cfg = cfg or ProxConfig()
    widths = net.hidden_widths
    p = [np.ones(m) for m in widths]
    obj = weighted_reg(net, spec, p)
    history = [obj]
    step = cfg.step

    for _ in range(cfg.max_iters):
        grads = weighted_reg_grad_p(net, spec, p)
        if any(not np.all(np.isfinite(g)) for g in grads):
            raise FloatingPointError("non-finite gradient in weight solve")
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            trial = [
                project_scaled_simplex(pl - step * g, len(pl), cfg.floor)
                for pl, g in zip(p, grads)
            ]
            trial_obj = weighted_reg(net, spec, trial)
            if trial_obj <= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = obj - trial_obj
        p, obj = trial, trial_obj
        history.append(obj)
        if gain <= cfg.tol:
            break

    weights = ImportanceWeights(p).validate(widths, cfg.floor)
    return (weights, history) if return_history else weights


def resample(net: Network, p, seed: int) -> Network:
    """Redraw every hidden layer, top layer first.

    Slot j of layer l receives the incoming row of a drawn neuron j'
    (probability p_j'/m) verbatim; the drawn neuron's outgoing column (or
    top row at l = L) is rescaled by 1/p_j', which makes each layer's
    mean-field sum an unbiased estimate of the original. Widths never
    change; draws use inverse-CDF sampling on the cumulative weights.
    """
    pw = p if isinstance(p, ImportanceWeights) else ImportanceWeights(list(p))
    pw.validate(net.hidden_widths)

    rng = np.random.default_rng(seed)
    L = net.depth
    weights = [w.copy() for w in net.weights]
    top = net.top.copy()

    for l in range(L - 1, -1, -1):  # math layer l+1, from L down to 1
        pv = np.asarray(pw.per_layer[l], dtype=np.float64)
        m = pv.size
        cdf = np.cumsum(pv / m)
        cdf[-1] = 1.0  # guard the last bin against rounding
        draws = np.searchsorted(cdf, rng.random(m), side="right")
        scale = 1.0 / pv[draws]
        if l == L - 1:
            top = top[draws, :] * scale[:, None]
        else:
            weights[l + 1] = weights[l + 1][:, draws] * scale[None, :]
        weights[l] = weights[l][draws, :]

    return Network(weights, top, net.activation, net.seed).validate()


def export_weights_csv(p, out_dir, fmt="%.17g"):
    """One CSV per layer: p_layer<l>.csv with columns (neuron_index, p_value)."""
    p = getattr(p, "per_layer", p)
    paths = []
    for l, vec in enumerate(p, start=1):
        path = os.path.join(out_dir, f"p_layer{l}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["neuron_index", "p_value"])
            for j, val in enumerate(vec):
                writer.writerow([j, fmt % val])
        paths.append(path)
    return paths
