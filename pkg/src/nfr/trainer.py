"""Data generation, the optimization loop, repopulation scheduling,
metrics, and checkpoints.

The synthetic task regresses y = 2(2 cos^2 x - 1)^2 - 1 on a uniform
interval. Widths follow the doubling rule m_l = base * 2^(L - l). The
loop minimizes mean squared loss plus the configured regularizer with
SGD or Adam; at scheduled epochs it solves for importance weights and
resamples every hidden layer, then keeps training on the resampled
network (optimizer moments reset, since neuron identities changed).
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:  # fused hot-loop kernels; everything works (slower) without numba
    from . import _fastpath
except ImportError:  # pragma: no cover
    _fastpath = None

from .diagnostics import approx_variance
from .net import (
    Network,
    backward,
    batch_loss_and_grad,
    forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from .regularizers import RegularizerSpec, add_reg_grad_inplace, total_reg
from .repopulation import ProxConfig, resample, solve_weights

__all__ = [
    "TrainConfig",
    "MetricsRecord",
    "TrainResult",
    "TrainingDiverged",
    "SGD",
    "Adam",
    "gen_data",
    "widths_for",
    "dfr_schedule",
    "train",
    "write_metrics_csv",
    "checkpoint_save",
    "checkpoint_load",
]

METRICS_HEADER = ["epoch", "train_rmse", "test_rmse", "reg_value", "variance", "seconds"]
FLOAT_FMT = "%.17g"

checkpoint_save = save_checkpoint
checkpoint_load = load_checkpoint


class TrainingDiverged(RuntimeError):
    """Raised when the train loss goes non-finite; carries the path of the
    checkpoint written for the last finished epoch (if any)."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def gen_data(n, lo, hi, seed):
    """Uniform x on [lo, hi] with y = 2(2 cos^2 x - 1)^2 - 1."""
    if not lo < hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(int(n), 1))
    y = 2.0 * (2.0 * np.cos(x) ** 2 - 1.0) ** 2 - 1.0
    return x, y


def widths_for(base_width, depth):
    """Doubling rule: layer l gets base * 2^(L - l) units."""
    return tuple(base_width * 2 ** (depth - l) for l in range(1, depth + 1))


def dfr_schedule(rule, epochs):
    """Expand a schedule spec into a sorted list of epoch indices.

    ``rule`` may be None (no events), an explicit list, or the string
    "paper": every 10 epochs through epoch 50, then every 100 after.
    """
    if rule is None:
        return []
    if rule == "paper":
        out = [e for e in range(10, min(epochs, 50) + 1, 10)]
        out += [e for e in range(150, epochs + 1, 100)]
        return out
    out = sorted(int(e) for e in rule)
    if out and (out[0] < 1 or out[-1] > epochs):
        raise ValueError(f"schedule epochs {out} outside 1..{epochs}")
    return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g

    def reset(self):
        pass


class Adam:
    """Bias-corrected first/second moment updates, elementwise."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.reset()

    def reset(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            self._scratch = [np.empty_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        root_c2 = math.sqrt(c2)
        for p, g, m, v, s in zip(params, grads, self.m, self.v, self._scratch):
            m *= self.b1
            np.multiply(g, 1.0 - self.b1, out=s)
            m += s
            v *= self.b2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.b2
            v += s
            np.sqrt(v, out=s)
            s /= root_c2
            s += self.eps
            np.divide(m, s, out=s)
            s *= self.lr / c1
            p -= s


class _FusedAdamReg:
    """Adam + regularizer-gradient accumulation fused per weight matrix
    (numba path); the small top layer runs through numpy. Matches the
    reference path (backward + add_reg_grad_inplace + Adam) to rounding."""

    def __init__(self, cfg, spec, net):
        self.lr = cfg.learning_rate
        self.b1, self.b2 = cfg.betas
        self.eps = cfg.epsilon
        self.spec = spec
        self.lams = spec.lambdas(net.depth)
        self.top_opt = Adam(self.lr, cfg.betas, cfg.epsilon)
        self.reset(net)

    def reset(self, net):
        self.t = 0
        self.m = [np.zeros_like(w) for w in net.weights]
        self.v = [np.zeros_like(w) for w in net.weights]
        self.top_opt.reset()

    def step(self, net, grads, scratch):
        spec = self.spec
        o1, o2 = spec.o1, spec.o2
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for l, (W, dW, buf) in enumerate(zip(net.weights, grads.d_weights, scratch)):
            m_out, m_in = W.shape
            lam = self.lams[l]
            if lam != 0.0:
                np.abs(W, out=buf)
                if o1 == 2.0:
                    buf *= buf
                elif o1 != 1.0:
                    np.power(buf, o1, out=buf)
                inner = buf.mean(axis=0)
                if o2 == 1.0:
                    outer = np.ones_like(inner)
                elif o2 == 2.0:
                    outer = inner
                else:
                    outer = np.where(inner > 0, inner ** (o2 - 1.0), 0.0)
                coef = outer * (lam * o1 * o2 / (m_in * m_out))
            else:
                coef = np.zeros(m_in)
            _fastpath.adam_reg_update(
                W, dW, self.m[l], self.v[l], coef, o1,
                self.b1, self.b2, c1, c2, self.lr, self.eps,
            )
        # top layer: tiny arrays, plain numpy
        if spec.lambda_u != 0.0:
            U = net.top
            norms = np.linalg.norm(U, axis=1)
            scale = np.where(norms > 0, norms ** (spec.o3 - 2.0), 0.0)
            grads.d_top += spec.lambda_u * (spec.o3 / U.shape[0]) * scale[:, None] * U
        self.top_opt.step([net.top], [grads.d_top])


@dataclass
class MetricsRecord:
    epoch: int
    train_rmse: float
    test_rmse: float
    reg_value: float
    variance: float
    seconds: float


@dataclass
class TrainConfig:
    depth: int = 3
    base_width: int = 128
    input_dim: int = 1
    output_dim: int = 1
    activation: str = "tanh"
    loss: str = "squared"
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    init_gain: object = 1.0  # scalar or per-layer list (L hidden + top)
    reg_preset: str = "l12"
    lambda_w: object = 1e-4  # scalar or per-layer list
    lambda_u: float = 1e-4
    dfr: object = None  # None | "paper" | list of epochs
    prox_step: float = 0.5
    prox_iters: int = 200
    prox_tol: float = 1e-12
    prox_floor: float = 1e-8
    seed_init: int = 1
    seed_data: int = 2
    seed_resample: int = 3
    n_train: int = 10_000
    n_test: int = 10_000
    lo: float = -2.0 * math.pi
    hi: float = 2.0 * math.pi
    variance_batch: int = 512
    metrics_subsample: Optional[int] = None
    wall_clock_in_csv: bool = False

    def __post_init__(self):
        if min(self.depth, self.base_width, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        dfr_schedule(self.dfr, self.epochs)  # validates range

    @property
    def widths(self):
        return widths_for(self.base_width, self.depth)

    def reg_spec(self):
        return RegularizerSpec.preset(self.reg_preset, self.lambda_w, self.lambda_u)

    def prox_config(self):
        return ProxConfig(
            step=self.prox_step,
            max_iters=self.prox_iters,
            tol=self.prox_tol,
            floor=self.prox_floor,
        )

    def to_json(self):
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        payload["betas"] = list(self.betas)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "betas" in payload:
            payload["betas"] = tuple(payload["betas"])
        return cls(**payload)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class TrainResult:
    net: Network
    metrics: list
    checkpoint_path: Optional[str] = None
    metrics_path: Optional[str] = None
    importance_paths: list = field(default_factory=list)


def _rmse(net, X, Y, batch=8192):
    total = 0.0
    for i in range(0, X.shape[0], batch):
        out = forward(net, X[i : i + batch]).output
        total += float(np.sum((out - Y[i : i + batch]) ** 2))
    return math.sqrt(total / X.shape[0])


def _make_optimizer(cfg):
    if cfg.optimizer == "sgd":
        return SGD(cfg.learning_rate)
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.betas, cfg.epsilon)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def train(cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Run the full loop; deterministic given the three seeds.

    Writes metrics.csv and checkpoint.nfr into ``out_dir`` when given.
    On divergence, the last finished epoch's parameters are checkpointed
    before TrainingDiverged is raised.
    """
    if cfg.loss != "squared":
        raise ValueError("the training loop drives the squared loss only")
    if cfg.input_dim != 1 or cfg.output_dim != 1:
        raise ValueError("the synthetic dataset is scalar-to-scalar")
    spec = cfg.reg_spec()
    net = init_network(
        cfg.input_dim,
        cfg.widths,
        cfg.output_dim,
        cfg.activation,
        seed=cfg.seed_init,
        gain=cfg.init_gain,
    )
    X, Y = gen_data(cfg.n_train, cfg.lo, cfg.hi, cfg.seed_data)
    Xt, Yt = gen_data(cfg.n_test, cfg.lo, cfg.hi, cfg.seed_data + 1)
    # fixed held-out batch for the variance column, comparable across runs
    Xv, _ = gen_data(cfg.variance_batch, cfg.lo, cfg.hi, cfg.seed_data + 2)
    if cfg.metrics_subsample:
        rng_keep = np.random.default_rng(cfg.seed_data + 3)
        keep = rng_keep.permutation(cfg.n_train)[: cfg.metrics_subsample]
        keep_t = rng_keep.permutation(cfg.n_test)[: cfg.metrics_subsample]
    else:
        keep = keep_t = None

    fused = _fastpath is not None and cfg.optimizer == "adam"
    optimizer = _FusedAdamReg(cfg, spec, net) if fused else _make_optimizer(cfg)
    schedule = set(dfr_schedule(cfg.dfr, cfg.epochs))
    metrics = []
    ckpt_path = os.path.join(out_dir, "checkpoint.nfr") if out_dir else None
    n = X.shape[0]
    scratch = [np.empty_like(w) for w in net.weights]
    start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng((cfg.seed_data, epoch)).permutation(n)
        for i in range(0, n, cfg.batch_size):
            sel = order[i : i + cfg.batch_size]
            tr = forward(net, X[sel])
            loss_val, d_out = batch_loss_and_grad(tr.output, Y[sel])
            if not math.isfinite(loss_val):
                if ckpt_path and metrics:
                    save_checkpoint(net_prev, ckpt_path)
                raise TrainingDiverged(
                    f"train loss became {loss_val} at epoch {epoch}",
                    ckpt_path if metrics else None,
                )
            g = backward(net, tr, d_out)
            if fused:
                optimizer.step(net, g, scratch)
            else:
                add_reg_grad_inplace(net, spec, g.d_weights, g.d_top, scratch)
                optimizer.step(net.parameters(), g.d_weights + [g.d_top])

        if epoch in schedule:
            p = solve_weights(net, spec, cfg.prox_config())
            net = resample(net, p, seed=(cfg.seed_resample, epoch))
            scratch = [np.empty_like(w) for w in net.weights]
            optimizer.reset(net) if fused else optimizer.reset()

        train_rmse = _rmse(net, X[keep], Y[keep]) if keep is not None else _rmse(net, X, Y)
        test_rmse = _rmse(net, Xt[keep_t], Yt[keep_t]) if keep_t is not None else _rmse(net, Xt, Yt)
        record = MetricsRecord(
            epoch,
            train_rmse,
            test_rmse,
            total_reg(net, spec),
            approx_variance(net, Xv),
            time.perf_counter() - start,
        )
        metrics.append(record)
        net_prev = net.copy()

    # the final epoch always gets full-set figures, even when sampling
    if metrics and keep is not None:
        metrics[-1].train_rmse = _rmse(net, X, Y)
        metrics[-1].test_rmse = _rmse(net, Xt, Yt)

    result = TrainResult(net, metrics)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.checkpoint_path = save_checkpoint(net, ckpt_path)
        result.metrics_path = write_metrics_csv(
            os.path.join(out_dir, "metrics.csv"),
            metrics,
            wall_clock=cfg.wall_clock_in_csv,
        )
    return result


def write_metrics_csv(path, metrics, wall_clock=False):
    """metrics.csv with the documented header.

    The seconds column is written as 0 unless ``wall_clock`` is set:
    byte-identical reruns are part of the contract, and measured times
    can never reproduce. The in-memory records always carry real timing.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in metrics:
            secs = r.seconds if wall_clock else 0.0
            writer.writerow(
                [
                    r.epoch,
                    FLOAT_FMT % r.train_rmse,
                    FLOAT_FMT % r.test_rmse,
                    FLOAT_FMT % r.reg_value,
                    FLOAT_FMT % r.variance,
                    FLOAT_FMT % secs,
                ]
            )
    return path
