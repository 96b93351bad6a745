"""Monte-Carlo studies of how discrete subsamples approximate a wide
"master" network.

The master plays the role of the infinite-width limit: its hidden units
carry the uniform distribution, so expectations over features become
plain averages over units. ``subsample`` draws a smaller network i.i.d.
from the master; the studies measure how the error shrinks with width,
and ``leading_terms`` evaluates the predicted first-order constants so
that width * mean-squared-error can be checked against their sum.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .net import Network, _act_deriv, forward

__all__ = [
    "MasterSurrogate",
    "StudyResult",
    "LeadingTerms",
    "subsample",
    "consistency_study",
    "variance_study",
    "output_feature_gradients",
    "leading_terms",
    "write_study_csv",
    "write_leading_csv",
    "write_summary_json",
]

# A master surrogate is an ordinary (wide) Network whose units are read as
# an empirical feature measure; nothing extra is stored.
MasterSurrogate = Network

FLOAT_FMT = "%.17g"


@dataclass
class StudyResult:
    widths: list
    mean_l1: np.ndarray
    se_l1: Optional[np.ndarray]
    mean_mse: np.ndarray
    se_mse: Optional[np.ndarray]
    trials: int
    slope: Optional[float] = None
    slope_flag: Optional[str] = None


@dataclass
class LeadingTerms:
    per_layer: np.ndarray  # constants for hidden layers 1..L-1
    top: float

    @property
    def total(self):
        return float(np.sum(self.per_layer) + self.top)


def subsample(master: MasterSurrogate, widths, seed: int) -> Network:
    """Draw a smaller network i.i.d. (with replacement) from the master.

    Per hidden layer, unit indices are drawn uniformly; the new weight
    between drawn units is the master weight between them, and the input
    layer maps through unchanged.
    """
    widths = [int(m) for m in widths]
    if len(widths) != master.depth:
        raise ValueError(
            f"need {master.depth} widths, got {len(widths)}"
        )
    if min(widths) < 1:
        raise ValueError("subsample widths must be >= 1")
    rng = np.random.default_rng(seed)
    idx = [rng.integers(0, m_master, size=m)
           for m_master, m in zip(master.hidden_widths, widths)]
    weights = []
    for l, W in enumerate(master.weights):
        rows = W[idx[l], :]
        weights.append(rows if l == 0 else rows[:, idx[l - 1]])
    top = master.top[idx[-1], :]
    return Network(weights, top, master.activation, master.seed)


def _run_trials(master, widths, trials, X, seed, ref_out):
    """Per-trial batch-mean L1 and squared errors for one target width."""
    l1 = np.empty(trials)
    mse = np.empty(trials)
    for t in range(trials):
        sub = subsample(master, widths, np.random.SeedSequence((seed, widths[0], t)))
        diff = forward(sub, X).output - ref_out
        norms = np.linalg.norm(diff, axis=1)
        l1[t] = float(np.mean(norms))
        mse[t] = float(np.mean(norms**2))
    return l1, mse


def _study(master, width_list, trials, X, seed, workers=None):
    width_list = [int(m) for m in width_list]
    if any(b <= a for a, b in zip(width_list, width_list[1:])):
        raise ValueError("widths must be strictly increasing")
    if trials < 1:
        raise ValueError("need at least one trial")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ref_out = forward(master, X).output

    if workers is None:
        workers = max(1, int(os.environ.get("NFR_THREADS", "1")))

    def job(m):
        return _run_trials(master, [m] * master.depth, trials, X, seed, ref_out)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, width_list))
    else:
        results = [job(m) for m in width_list]

    mean_l1 = np.array([r[0].mean() for r in results])
    mean_mse = np.array([r[1].mean() for r in results])
    if trials >= 2:
        se_l1 = np.array([r[0].std(ddof=1) / np.sqrt(trials) for r in results])
        se_mse = np.array([r[1].std(ddof=1) / np.sqrt(trials) for r in results])
    else:
        se_l1 = se_mse = None
    return StudyResult(width_list, mean_l1, se_l1, mean_mse, se_mse, trials)


def consistency_study(master, width_list, trials, x_batch, seed=0, workers=None):
    """Mean output error against the master for each subsample width."""
    return _study(master, width_list, trials, x_batch, seed, workers)


def variance_study(master, width_list, trials, x_batch, seed=0, workers=None):
    """As consistency_study, plus the log-log slope of MSE against width."""
    res = _study(master, width_list, trials, x_batch, seed, workers)
    if len(res.widths) < 2:
        res.slope_flag = "need at least two widths for a slope"
        return res
    if np.any(res.mean_mse <= 0):
        res.slope_flag = "zero error at some width, slope undefined"
        return res
    logm = np.log(np.asarray(res.widths, dtype=np.float64))
    loge = np.log(res.mean_mse)
    res.slope = float(np.polyfit(logm, loge, 1)[0])
    return res


def output_feature_gradients(net: Network, x_batch):
    """The output's derivative with respect to each unit's feature value,
    evaluated by backward accumulation under the uniform unit measure.

    Layer L carries the top rows; below that,
    b_i = mean over upper units j of [ w_ji * h'(g_j) * b_j ].
    Returns one (n, m_l, K) array per hidden layer, index 0 = layer 1.
    """
    X = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    tr = forward(net, X)
    n = X.shape[0]
    L = net.depth
    out = [None] * L
    b = np.broadcast_to(net.top[None, :, :], (n,) + net.top.shape).copy()
    out[L - 1] = b
    for l in range(L - 1, 0, -1):
        W = net.weights[l]  # (m_{l+1}, m_l)
        d = _act_deriv(net.activation, tr.pre[l])  # (n, m_{l+1})
        b = np.einsum("njk,ji->nik", d[:, :, None] * b, W, optimize=True)
        b = b / W.shape[0]
        out[l - 1] = b
    return out


def leading_terms(master: MasterSurrogate, x_batch) -> LeadingTerms:
    """First-order constants of the width expansion of the subsampling MSE.

    For hidden layer l < L the constant averages, over units of layer l,
    the squared mean over upper units of
    h'(g_i) * b_i * (f_j w_ij - g_i); the top constant averages
    ||u_j f_j - f||^2. Dividing each by its layer width and summing gives
    the predicted mean squared error of a subsample.
    """
    X = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    tr = forward(master, X)
    b = output_feature_gradients(master, X)
    L = master.depth
    n = X.shape[0]

    per_layer = np.zeros(max(L - 1, 0))
    for l in range(1, L):  # constant attached to sampling hidden layer l
        W = master.weights[l]  # (m_{l+1}, m_l)
        m_up, m_lo = W.shape
        # D_i = h'(g_i) b_i at the upper layer, shape (n, m_up, K)
        D = _act_deriv(master.activation, tr.pre[l])[:, :, None] * b[l]
        c = np.einsum("nik,ij->njk", D, W, optimize=True)  # (n, m_lo, K)
        offs = np.einsum("nik,ni->nk", D, tr.pre[l], optimize=True)
        s = (tr.act[l - 1][:, :, None] * c - offs[:, None, :]) / m_up
        per_layer[l - 1] = float(np.sum(s * s)) / m_lo / n

    s_top = tr.act[-1][:, :, None] * master.top[None, :, :] - tr.output[:, None, :]
    top = float(np.sum(s_top * s_top)) / master.top.shape[0] / n
    return LeadingTerms(per_layer, top)


# ----------------------------------------------------------- CSV emission


def _f(x):
    return FLOAT_FMT % x


def write_study_csv(path, result: StudyResult):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "mean_l1", "se_l1", "mean_mse", "se_mse"])
        for i, m in enumerate(result.widths):
            se1 = _f(result.se_l1[i]) if result.se_l1 is not None else ""
            se2 = _f(result.se_mse[i]) if result.se_mse is not None else ""
            writer.writerow(
                [m, _f(result.mean_l1[i]), se1, _f(result.mean_mse[i]), se2]
            )
    return path


def write_leading_csv(path, terms: LeadingTerms):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "C_value"])
        for l, c in enumerate(terms.per_layer, start=1):
            writer.writerow([l, _f(c)])
        writer.writerow(["top", _f(terms.top)])
    return path


def write_summary_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
