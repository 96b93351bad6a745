"""Render the five figure kinds from pipeline CSV outputs.

Every figure reads only the documented CSV headers and writes one image.
Kinds: training-curves (metrics.csv), kkt-scatter (kkt_layer<l>.csv),
sparsity-cdf (sparsity_layer<l>.csv, one curve per file), feature-grid
(features_layer<l>.csv, one panel per file), study-loglog (study.csv).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "render", "read_csv", "KINDS"]

KINDS = ("training-curves", "kkt-scatter", "sparsity-cdf", "feature-grid", "study-loglog")


class FigureError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    title: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r}, have {KINDS}")
        if not self.inputs:
            raise FigureError("no input files given")


def read_csv(path, required=None):
    """Columns as float arrays keyed by header name; non-numeric cells
    read as NaN. Raises naming the offending column or file."""
    if not os.path.exists(path):
        raise FigureError(f"input file missing: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureError(f"{path}: empty file, no header") from None
        rows = list(reader)
    if not rows:
        raise FigureError(f"{path}: no rows")
    if required:
        missing = [c for c in required if c not in header]
        if missing:
            raise FigureError(f"{path}: missing column {missing[0]!r}")
    cols = {name: np.empty(len(rows)) for name in header}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise FigureError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for name, cell in zip(header, row):
            try:
                cols[name][i] = float(cell) if cell != "" else math.nan
            except ValueError:
                raise FigureError(f"{path}: column {name!r} has non-numeric value {cell!r}") from None
    return cols


def _fit_line(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    return slope, intercept


def render(spec: FigureSpec) -> str:
    """Draw the figure and write it to spec.output; returns the path."""
    fig = _RENDERERS[spec.kind](spec)
    if spec.title:
        fig.suptitle(spec.title)
    fig.savefig(spec.output, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return spec.output


def _render_training_curves(spec):
    cols = read_csv(spec.inputs[0], required=["epoch", "train_rmse", "test_rmse", "reg_value", "variance"])
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    ep = cols["epoch"]
    axes[0].plot(ep, cols["variance"])
    axes[0].set_yscale("log")
    axes[0].set_title("approximation variance")
    axes[1].plot(ep, cols["reg_value"])
    axes[1].set_yscale("log")
    axes[1].set_title("regularizer value")
    axes[2].plot(ep, cols["train_rmse"], label="train")
    axes[2].plot(ep, cols["test_rmse"], label="test")
    axes[2].set_yscale("log")
    axes[2].set_title("RMSE")
    axes[2].legend()
    for ax in axes:
        ax.set_xlabel("epoch")
    return fig


def _render_kkt_scatter(spec):
    fig, axes = plt.subplots(1, len(spec.inputs), figsize=(4.2 * len(spec.inputs), 3.8), squeeze=False)
    for ax, path in zip(axes[0], spec.inputs):
        cols = read_csv(path, required=["neuron", "u_val", "v_val"])
        u, v = cols["u_val"], cols["v_val"]
        ax.scatter(u, v, s=8, alpha=0.6)
        if np.ptp(u) > 0:
            slope, intercept = _fit_line(u, v)
            xs = np.linspace(u.min(), u.max(), 50)
            ax.plot(xs, slope * xs + intercept, "r-", lw=1)
            if np.std(u) > 0 and np.std(v) > 0:
                r = float(np.corrcoef(u, v)[0, 1])
            else:
                r = 1.0
        else:
            r = 1.0
        ax.annotate(f"r = {r:.3f}", xy=(0.05, 0.9), xycoords="axes fraction")
        ax.set_xlabel("u estimate")
        ax.set_ylabel("v estimate")
        ax.set_title(os.path.basename(path))
    return fig


def _render_sparsity_cdf(spec):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for path in spec.inputs:
        cols = read_csv(path, required=["threshold", "fraction"])
        label = os.path.splitext(os.path.basename(path))[0]
        ax.plot(cols["threshold"], cols["fraction"], label=label)
    ax.set_xlabel("|w| threshold")
    ax.set_ylabel("fraction of weights")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    return fig


def _render_feature_grid(spec):
    n = len(spec.inputs)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.4), squeeze=False)
    for ax, path in zip(axes[0], spec.inputs):
        cols = read_csv(path, required=["x"])
        feat_cols = [c for c in cols if c.startswith("f_")]
        if not feat_cols:
            raise FigureError(f"{path}: missing column 'f_*'")
        for c in feat_cols:
            ax.plot(cols["x"], cols[c], lw=0.8)
        ax.set_ylim(-1.5, 1.5)  # matches the target's range
        ax.set_xlabel("x")
        ax.set_title(os.path.basename(path))
    return fig


def _render_study_loglog(spec):
    cols = read_csv(spec.inputs[0], required=["m", "mean_mse"])
    m = cols["m"]
    mse = cols["mean_mse"]
    if np.any(mse <= 0) or len(m) < 2:
        raise FigureError("study-loglog needs >= 2 widths with positive MSE")
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    se = cols.get("se_mse")
    if se is not None and np.all(np.isfinite(se)):
        ax.errorbar(m, mse, yerr=se, fmt="o-", capsize=3)
    else:
        ax.plot(m, mse, "o-")
    slope, intercept = _fit_line(np.log(m), np.log(mse))
    xs = np.linspace(np.log(m.min()), np.log(m.max()), 50)
    ax.plot(np.exp(xs), np.exp(intercept + slope * xs), "r--", lw=1)
    ax.annotate(f"slope = {slope:.3f}", xy=(0.05, 0.08), xycoords="axes fraction")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("width m")
    ax.set_ylabel("mean squared error")
    return fig


_RENDERERS = {
    "training-curves": _render_training_curves,
    "kkt-scatter": _render_kkt_scatter,
    "sparsity-cdf": _render_sparsity_cdf,
    "feature-grid": _render_feature_grid,
    "study-loglog": _render_study_loglog,
}
