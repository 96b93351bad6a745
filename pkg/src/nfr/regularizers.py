"""Power-family regularizers for mean-field networks.

A hidden layer is penalized by ``(1/m_in) * sum_k ((1/m_out) *
sum_j |w_jk|^o1)^o2`` and the top layer by ``(1/m) * sum_j ||u_j||^o3``.
The importance-weighted variant reweights both sums by per-neuron
positive weights that average to one, leaving the network function
untouched while changing the penalty.

Preset names follow the l_{a,b} notation: "l12" is the variance-derived
(|w|, square) combination, "l21" is classical weight decay, "l_half_4"
is the sub-linear inner exponent variant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .net import Network

__all__ = [
    "RegularizerSpec",
    "PRESETS",
    "layer_reg",
    "top_reg",
    "total_reg",
    "reg_grad",
    "add_reg_grad_inplace",
    "weighted_reg",
    "weighted_reg_grad_p",
]

PRESETS = {
    "l12": (1.0, 2.0, 2.0),
    "l21": (2.0, 1.0, 2.0),
    "l_half_4": (0.5, 4.0, 2.0),
}


@dataclass
class RegularizerSpec:
    """Exponents (o1, o2, o3) and penalty strengths per layer.

    ``lambda_w`` is either a scalar applied to every hidden layer or a
    sequence with one value per layer.
    """

    o1: float
    o2: float
    o3: float
    lambda_w: Union[float, Sequence[float]] = 0.0
    lambda_u: float = 0.0

    def __post_init__(self):
        if self.o1 <= 0 or self.o2 < 1 or self.o3 < 1:
            raise ValueError("exponents must satisfy o1 > 0, o2 >= 1, o3 >= 1")
        if self.lambda_u < 0 or np.any(np.asarray(self.lambda_w) < 0):
            raise ValueError("penalties must be non-negative")

    @classmethod
    def preset(cls, name, lambda_w=0.0, lambda_u=0.0):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}, have {sorted(PRESETS)}")
        o1, o2, o3 = PRESETS[name]
        return cls(o1, o2, o3, lambda_w, lambda_u)

    def lambdas(self, depth):
        lw = self.lambda_w
        if np.isscalar(lw):
            return [float(lw)] * depth
        lw = list(lw)
        if len(lw) != depth:
            raise ValueError(
                f"lambda_w has {len(lw)} entries for a depth-{depth} network"
            )
        return [float(v) for v in lw]


def _apow(absw, p):
    """absw**p with fast paths for the common integer exponents."""
    if p == 1.0:
        return absw
    if p == 2.0:
        return absw * absw
    return absw**p


def layer_reg(W, o1, o2):
    """(1/m_in) * sum over input nodes of the o2-power of the o1-moment of
    the column's absolute weights, averaged over output nodes."""
    W = np.asarray(W, dtype=np.float64)
    inner = np.mean(_apow(np.abs(W), o1), axis=0)  # per input node k
    return float(np.mean(_apow(inner, o2)))


def top_reg(U, o3):
    U = np.asarray(U, dtype=np.float64)
    norms = np.linalg.norm(U, axis=1)
    return float(np.mean(norms**o3))


def total_reg(net: Network, spec: RegularizerSpec):
    lw = spec.lambdas(net.depth)
    val = sum(
        lam * layer_reg(w, spec.o1, spec.o2) for lam, w in zip(lw, net.weights)
    )
    return float(val + spec.lambda_u * top_reg(net.top, spec.o3))


def reg_grad(net: Network, spec: RegularizerSpec):
    """Analytic (sub)gradient of total_reg; the subgradient of |w|^o1 at
    w = 0 is taken as 0."""
    lw = spec.lambdas(net.depth)
    o1, o2, o3 = spec.o1, spec.o2, spec.o3
    d_weights = []
    for lam, W in zip(lw, net.weights):
        m_out, m_in = W.shape
        absw = np.abs(W)
        inner = np.mean(_apow(absw, o1), axis=0)  # (m_in,)
        if o2 == 1.0:
            outer = np.ones_like(inner)
        elif o2 == 2.0:
            outer = inner
        else:
            outer = np.where(inner > 0, inner ** (o2 - 1.0), 0.0)
        # d/dw_jk |w|^o1 = o1 |w|^(o1-1) sign(w); 0 at w = 0 by convention.
        if o1 == 1.0:
            pw = np.sign(W)
        elif o1 == 2.0:
            pw = W  # |w| sign(w) = w
        else:
            pw = np.where(absw > 0, absw ** (o1 - 1.0), 0.0) * np.sign(W)
        d_weights.append(lam * (o2 * o1 / (m_in * m_out)) * outer[None, :] * pw)

    U = net.top
    norms = np.linalg.norm(U, axis=1)
    scale = np.where(norms > 0, norms ** (o3 - 2.0), 0.0)
    d_top = spec.lambda_u * (o3 / U.shape[0]) * scale[:, None] * U
    return d_weights, d_top


def add_reg_grad_inplace(net, spec, d_weights, d_top, scratch):
    """Accumulate reg_grad into existing gradient arrays without fresh
    allocations; ``scratch`` holds one preallocated buffer per weight
    matrix. Semantics identical to reg_grad (the training hot path)."""
    lw = spec.lambdas(net.depth)
    o1, o2, o3 = spec.o1, spec.o2, spec.o3
    for lam, W, dW, buf in zip(lw, net.weights, d_weights, scratch):
        if lam == 0.0:
            continue
        m_out, m_in = W.shape
        np.abs(W, out=buf)
        if o1 != 1.0:
            if o1 == 2.0:
                buf *= buf
            else:
                np.power(buf, o1, out=buf)
        inner = buf.mean(axis=0)
        if o2 == 1.0:
            coef = np.ones_like(inner)
        elif o2 == 2.0:
            coef = inner
        else:
            coef = np.where(inner > 0, inner ** (o2 - 1.0), 0.0)
        coef = coef * (lam * o1 * o2 / (m_in * m_out))
        if o1 == 1.0:
            np.sign(W, out=buf)
        elif o1 == 2.0:
            np.copyto(buf, W)
        else:
            np.abs(W, out=buf)
            np.power(buf, o1 - 1.0, out=buf)
            buf *= np.sign(W)
            buf[W == 0.0] = 0.0
        buf *= coef[None, :]
        dW += buf
    if spec.lambda_u != 0.0:
        U = net.top
        norms = np.linalg.norm(U, axis=1)
        scale = np.where(norms > 0, norms ** (o3 - 2.0), 0.0)
        d_top += spec.lambda_u * (o3 / U.shape[0]) * scale[:, None] * U
    return d_weights, d_top


def _p_layers(net, p):
    """Per-layer weight vectors with the fixed all-ones input layer first."""
    p = getattr(p, "per_layer", p)
    vecs = [np.ones(net.input_dim)] + [np.asarray(v, dtype=np.float64) for v in p]
    if len(vecs) != net.depth + 1:
        raise ValueError(
            f"importance weights cover {len(vecs) - 1} layers, network has "
            f"{net.depth}"
        )
    for l, (v, m) in enumerate(zip(vecs[1:], net.hidden_widths), start=1):
        if v.shape != (m,):
            raise ValueError(f"layer {l}: p has length {v.shape}, width is {m}")
        if np.any(v <= 0):
            raise ValueError(f"layer {l}: importance weights must be positive")
    return vecs


def weighted_reg(net: Network, spec: RegularizerSpec, p):
    """Importance-weighted regularizer R(p; w, u).

    ``p`` is a sequence of per-hidden-layer positive vectors (the input
    layer is pinned to 1). Equals total_reg when every weight is 1.
    """
    vecs = _p_layers(net, p)
    lw = spec.lambdas(net.depth)
    o1, o2, o3 = spec.o1, spec.o2, spec.o3
    total = 0.0
    for l, (lam, W) in enumerate(zip(lw, net.weights)):
        p_in, p_out = vecs[l], vecs[l + 1]
        m_out, m_in = W.shape
        inner = (np.abs(W / p_in[None, :]) ** o1 * p_out[:, None]).mean(axis=0)
        total += lam * float(np.mean(inner**o2 * p_in))
    p_top = vecs[-1]
    norms = np.linalg.norm(net.top / p_top[:, None], axis=1)
    total += spec.lambda_u * float(np.mean(norms**o3 * p_top))
    return total


def weighted_reg_grad_p(net: Network, spec: RegularizerSpec, p):
    """Gradient of weighted_reg w.r.t. each hidden layer's weight vector."""
    vecs = _p_layers(net, p)
    lw = spec.lambdas(net.depth)
    o1, o2, o3 = spec.o1, spec.o2, spec.o3
    L = net.depth
    grads = [np.zeros(m) for m in net.hidden_widths]

    for l, (lam, W) in enumerate(zip(lw, net.weights)):
        p_in, p_out = vecs[l], vecs[l + 1]
        m_out, m_in = W.shape
        awo = np.abs(W) ** o1  # (m_out, m_in)
        # B_k = (1/m_out) sum_j |w_jk|^o1 p_out_j; the p_in^{-o1} factor is
        # kept outside so both partial derivatives stay simple.
        B = awo.T @ p_out / m_out  # (m_in,)
        pin_pow = p_in ** (1.0 - o1 * o2)
        Bpow = np.where(B > 0, B ** (o2 - 1.0), 0.0 if o2 > 1 else 1.0)
        # d/dp_out_j: lam/m_in * sum_k o2 B_k^{o2-1} pin_k^{1-o1 o2} awo_jk/m_out
        grads[l] += lam * (o2 / (m_in * m_out)) * (awo @ (Bpow * pin_pow))
        if l >= 1:
            # d/dp_in_k of B_k^{o2} p_in_k^{1-o1 o2}
            Bo2 = B**o2
            grads[l - 1] += (
                lam
                * (1.0 - o1 * o2)
                / m_in
                * Bo2
                * p_in ** (-o1 * o2)
            )

    p_top = vecs[-1]
    norms = np.linalg.norm(net.top, axis=1)
    grads[L - 1] += (
        spec.lambda_u
        * (1.0 - o3)
        / net.top.shape[0]
        * norms**o3
        * p_top ** (-o3)
    )
    return grads
