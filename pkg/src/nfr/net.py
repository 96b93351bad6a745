"""Mean-field fully connected networks: forward, reverse-mode gradients,
per-neuron output sensitivities, initialization, and checkpointing.

Layer ``l`` computes ``g_j = (1/m_{l-1}) * sum_k w_{j,k} f_k`` and
``f_j = h(g_j)``; the output is ``(1/m_L) * sum_j u_j f_j``. Weight matrices
are stored row = output neuron, column = input neuron. All arithmetic is
float64 and reductions go through fixed BLAS paths, so repeated evaluation
is bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Network",
    "ForwardTrace",
    "Gradients",
    "Loss",
    "ShapeMismatchError",
    "CheckpointError",
    "forward",
    "backward",
    "sensitivities",
    "loss_and_grad",
    "batch_loss_and_grad",
    "init_network",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "NFR1"


class ShapeMismatchError(ValueError):
    """A tensor does not match the network geometry; names the layer."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed, truncated, or inconsistent."""


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "softplus":
        return np.logaddexp(0.0, x)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name, x):
    if name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if name == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    if name == "softplus":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATIONS = ("tanh", "sigmoid", "softplus")


@dataclass
class Network:
    """Weights and activation of a mean-field DNN.

    ``weights[l]`` has shape ``(m_{l+1}, m_l)`` in 0-based list indexing
    (layer ``l+1`` of the math), ``top`` has shape ``(m_L, K)``.
    """

    weights: list
    top: np.ndarray
    activation: str = "tanh"
    seed: int = 0

    @property
    def depth(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def hidden_widths(self):
        return tuple(w.shape[0] for w in self.weights)

    @property
    def output_dim(self):
        return self.top.shape[1]

    def validate(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.depth < 1:
            raise ValueError("network needs at least one hidden layer")
        for l in range(1, self.depth):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeMismatchError(
                    f"layer {l + 1}: weight matrix expects "
                    f"{self.weights[l].shape[1]} inputs but layer {l} has "
                    f"{self.weights[l - 1].shape[0]} neurons"
                )
        if self.top.ndim != 2 or self.top.shape[0] != self.weights[-1].shape[0]:
            raise ShapeMismatchError(
                f"top layer: U has shape {self.top.shape} but layer "
                f"{self.depth} has {self.weights[-1].shape[0]} neurons"
            )
        for l, w in enumerate(self.weights):
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {l + 1}: non-finite weight entries")
        if not np.all(np.isfinite(self.top)):
            raise ValueError("top layer: non-finite entries")
        return self

    def copy(self):
        return Network(
            [w.copy() for w in self.weights],
            self.top.copy(),
            self.activation,
            self.seed,
        )

    def parameters(self):
        """All trainable arrays, hidden layers first, then the top."""
        return list(self.weights) + [self.top]


@dataclass
class ForwardTrace:
    """Cached pre-activations, activations, and output of one forward pass.

    Arrays are batch-first: ``pre[l]`` and ``act[l]`` have shape
    ``(n, m_{l+1})``; ``output`` has shape ``(n, K)``, or ``(K,)`` when the
    input was a single vector (``single`` is then True).
    """

    x: np.ndarray
    pre: list
    act: list
    output: np.ndarray
    single: bool = False


@dataclass
class Gradients:
    d_weights: list
    d_top: np.ndarray
    a: dict = field(default_factory=dict)  # layer -> (n, m_l, K) sensitivities


@dataclass
class Loss:
    """Loss attached to one output: squared with a target vector, or
    logistic with an integer class label."""

    kind: str
    target: Optional[np.ndarray] = None
    label: Optional[int] = None


def forward(net: Network, x) -> ForwardTrace:
    """Evaluate the network, caching every layer.

    ``x`` may be a single length-d vector or an ``(n, d)`` batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise ShapeMismatchError(
            f"layer 1: input has {xb.shape[-1] if xb.ndim else 0} features, "
            f"network expects {net.input_dim}"
        )
    if not np.all(np.isfinite(xb)):
        raise ValueError("input contains non-finite values")

    pre, act = [], []
    cur = xb
    for l, w in enumerate(net.weights):
        g = cur @ w.T / w.shape[1]
        f = _act(net.activation, g)
        pre.append(g)
        act.append(f)
        cur = f
    out = cur @ net.top / net.top.shape[0]
    return ForwardTrace(xb, pre, act, out[0] if single else out, single)


def _check_trace(net, trace):
    if len(trace.pre) != net.depth:
        raise ShapeMismatchError(
            f"trace has {len(trace.pre)} layers, network has {net.depth}"
        )
    for l in range(net.depth):
        if trace.pre[l].shape[1] != net.weights[l].shape[0]:
            raise ShapeMismatchError(
                f"layer {l + 1}: trace width {trace.pre[l].shape[1]} does not "
                f"match network width {net.weights[l].shape[0]}"
            )
    if trace.x.shape[1] != net.input_dim:
        raise ShapeMismatchError(
            f"layer 1: trace input dim {trace.x.shape[1]} does not match "
            f"network input dim {net.input_dim}"
        )


def backward(net: Network, trace: ForwardTrace, d_out, sensitivity_layers=()):
    """Gradients of ``<d_out, f(x)>`` (summed over the batch) w.r.t. all
    weights, optionally with per-neuron output sensitivities.

    ``d_out`` has the same shape as the trace output. Entries of the
    returned ``a[l]`` are the Jacobian rows df/dg_i at layer ``l``
    (1-based), including every downstream 1/m factor.
    """
    _check_trace(net, trace)
    d_out = np.asarray(d_out, dtype=np.float64)
    d_out = d_out[None, :] if trace.single else d_out
    if d_out.shape != (trace.x.shape[0], net.output_dim):
        raise ShapeMismatchError(
            f"top layer: d_out shape {d_out.shape} does not match output "
            f"shape {(trace.x.shape[0], net.output_dim)}"
        )

    L = net.depth
    m_L = net.top.shape[0]
    d_top = trace.act[-1].T @ d_out / m_L

    d_weights = [None] * L
    # delta[l] = d<d_out, f>/d g_l per sample.
    delta = (d_out @ net.top.T) * _act_deriv(net.activation, trace.pre[-1]) / m_L
    for l in range(L - 1, -1, -1):
        below = trace.act[l - 1] if l > 0 else trace.x
        d_weights[l] = delta.T @ below / below.shape[1]
        if l > 0:
            delta = (delta @ net.weights[l]) * _act_deriv(
                net.activation, trace.pre[l - 1]
            ) / net.weights[l].shape[1]

    grads = Gradients(d_weights, d_top)
    if sensitivity_layers:
        grads.a = sensitivities(net, trace, sensitivity_layers)
    return grads


def sensitivities(net: Network, trace: ForwardTrace, layers=None):
    """Jacobian rows a_i = df(x)/dg_i for the requested layers.

    Returns ``{l: array of shape (n, m_l, K)}`` with 1-based layer keys.
    One reverse sweep computes all requested layers; only those are kept.
    """
    _check_trace(net, trace)
    L = net.depth
    wanted = set(range(1, L + 1) if layers is None else layers)
    if not wanted.issubset(range(1, L + 1)):
        raise ValueError(f"sensitivity layers out of range 1..{L}: {sorted(wanted)}")

    out = {}
    # a carries K columns per neuron; start at the top layer.
    a = _act_deriv(net.activation, trace.pre[-1])[:, :, None] * net.top[None, :, :]
    a = a / net.top.shape[0]
    if L in wanted:
        out[L] = a
    for l in range(L - 1, 0, -1):
        w_up = net.weights[l]  # (m_{l+1}, m_l)
        a = np.einsum("njk,ji->nik", a, w_up, optimize=True)
        a = a * _act_deriv(net.activation, trace.pre[l - 1])[:, :, None]
        a = a / w_up.shape[1]
        if l in wanted:
            out[l] = a
    return out


def loss_and_grad(output, loss: Loss):
    """Loss value and d(loss)/d(output) for a single output vector."""
    f = np.asarray(output, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite network output")
    if loss.kind == "squared":
        y = np.asarray(loss.target, dtype=np.float64)
        if y.shape != f.shape or not np.all(np.isfinite(y)):
            raise ValueError("squared loss needs a finite target of output shape")
        diff = f - y
        return float(diff @ diff), 2.0 * diff
    if loss.kind == "logistic":
        k = f.shape[0]
        if k < 2:
            raise ValueError("logistic loss requires K >= 2 outputs")
        y = loss.label
        if y is None or not 0 <= y < k:
            raise ValueError(f"logistic label {y} out of range [0, {k})")
        fmax = np.max(f)
        z = np.exp(f - fmax)
        lse = fmax + np.log(np.sum(z))
        grad = z / np.sum(z)
        grad[y] -= 1.0
        return float(lse - f[y]), grad
    raise ValueError(f"unknown loss kind {loss.kind!r}")


def batch_loss_and_grad(outputs, targets):
    """Mean squared loss over a batch and its gradient w.r.t. the outputs."""
    diff = outputs - targets
    n = outputs.shape[0]
    with np.errstate(over="ignore"):  # divergence shows up as inf, not a warning
        return float(np.sum(diff * diff) / n), 2.0 * diff / n


def init_network(
    input_dim: int,
    hidden_widths: Sequence[int],
    output_dim: int,
    activation: str = "tanh",
    seed: int = 0,
    gain=1.0,
) -> Network:
    """Random network with w ~ N(0, m_in) per layer and u ~ N(0, m_L).

    The variance equal to the fan-in cancels the mean-field 1/m averaging,
    keeping pre-activations at unit order at any width. ``gain`` scales
    every standard deviation; it may be a scalar or a per-layer sequence
    of length L+1 (hidden layers first, top last).
    """
    if min(hidden_widths) < 1 or input_dim < 1 or output_dim < 1:
        raise ValueError("all widths must be >= 1")
    L = len(hidden_widths)
    gains = [float(gain)] * (L + 1) if np.isscalar(gain) else [float(g) for g in gain]
    if len(gains) != L + 1 or min(gains) <= 0:
        raise ValueError(f"gain needs {L + 1} positive entries (L hidden + top)")
    rng = np.random.default_rng(seed)
    weights = []
    fan_in = input_dim
    for g, m in zip(gains, hidden_widths):
        weights.append(rng.normal(0.0, g * np.sqrt(fan_in), size=(m, fan_in)))
        fan_in = m
    top = rng.normal(0.0, gains[-1] * np.sqrt(fan_in), size=(fan_in, output_dim))
    return Network(weights, top, activation, seed).validate()


def save_checkpoint(net: Network, path):
    """One JSON header line, then little-endian float64 payload:
    W1 row-major, ..., WL row-major, U row-major."""
    header = {
        "magic": CHECKPOINT_MAGIC,
        "L": net.depth,
        "d": net.input_dim,
        "K": net.output_dim,
        "widths": list(net.hidden_widths),
        "activation": net.activation,
        "seed": net.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for w in net.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(net.top, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"bad magic {header.get('magic')!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    for key in ("L", "d", "K", "widths", "activation"):
        if key not in header:
            raise CheckpointError(f"checkpoint header missing field {key!r}")
    widths = list(header["widths"])
    if len(widths) != header["L"]:
        raise CheckpointError(
            f"header declares L={header['L']} but lists {len(widths)} widths"
        )
    shapes = []
    fan_in = header["d"]
    for m in widths:
        shapes.append((m, fan_in))
        fan_in = m
    shapes.append((fan_in, header["K"]))
    expected = sum(r * c for r, c in shapes) * 8
    if len(payload) != expected:
        raise CheckpointError(
            f"payload length mismatch: have {len(payload)} bytes, header "
            f"implies {expected}"
        )
    arrays = []
    offset = 0
    for r, c in shapes:
        n = r * c
        arrays.append(
            np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
            .reshape(r, c)
            .copy()
        )
        offset += n * 8
    net = Network(
        arrays[:-1], arrays[-1], header["activation"], header.get("seed", 0)
    )
    try:
        net.validate()
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint contents: {exc}") from exc
    return net
