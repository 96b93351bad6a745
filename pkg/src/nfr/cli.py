"""Command-line surface.

Subcommands: gen-data, train, repopulate, diagnose, study,
export-features. Every command takes --seed and --out-dir; existing
output files are only overwritten with --force. Exit codes: 0 success,
1 usage error (bad flags, missing inputs, refusing to overwrite),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import diagnostics, sampling
from .net import CheckpointError, load_checkpoint, save_checkpoint
from .regularizers import RegularizerSpec
from .repopulation import ProxConfig, export_weights_csv, resample, solve_weights
from .trainer import TrainConfig, TrainingDiverged, gen_data, train

FLOAT_FMT = "%.17g"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is 1
        raise UsageError(f"{message}\n{self.format_usage()}")


def _add_common(p, seed_default=0):
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser():
    parser = _Parser(prog="nfr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lo", type=float, default=-2 * math.pi)
    p.add_argument("--hi", type=float, default=2 * math.pi)
    _add_common(p)

    p = sub.add_parser("train", help="run the training loop from a JSON config")
    p.add_argument("--config", required=True)
    # seeds normally come from the config; an explicit --seed rederives them
    _add_common(p, seed_default=None)

    p = sub.add_parser("repopulate", help="solve importance weights and resample")
    p.add_argument("--checkpoint", required=True)
    _add_reg_flags(p)
    p.add_argument("--prox-step", type=float, default=0.5)
    p.add_argument("--prox-iters", type=int, default=200)
    p.add_argument("--prox-tol", type=float, default=1e-12)
    p.add_argument("--prox-floor", type=float, default=1e-8)
    _add_common(p)

    p = sub.add_parser("diagnose", help="variance, stationarity, and sparsity CSVs")
    p.add_argument("--checkpoint", required=True)
    _add_reg_flags(p)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lo", type=float, default=-2 * math.pi)
    p.add_argument("--hi", type=float, default=2 * math.pi)
    _add_common(p)

    p = sub.add_parser("study", help="subsampling error statistics for a master")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--widths", default="64,128,256,512")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lo", type=float, default=-2 * math.pi)
    p.add_argument("--hi", type=float, default=2 * math.pi)
    _add_common(p)

    p = sub.add_parser("export-features", help="per-neuron feature function CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layers", default="", help="comma list, default all")
    p.add_argument("--neurons", default="", help="comma list, default a sample")
    p.add_argument("--sample", type=int, default=20, help="neurons per layer if --neurons empty")
    p.add_argument("--grid-n", type=int, default=201)
    p.add_argument("--lo", type=float, default=-2 * math.pi)
    p.add_argument("--hi", type=float, default=2 * math.pi)
    _add_common(p)

    return parser


def _add_reg_flags(p):
    p.add_argument("--preset", default="l12", choices=["l12", "l21", "l_half_4"])
    p.add_argument("--lambda-w", type=float, default=1e-4)
    p.add_argument("--lambda-u", type=float, default=1e-4)


def _ensure_out(args, *names):
    os.makedirs(args.out_dir, exist_ok=True)
    paths = [os.path.join(args.out_dir, n) for n in names]
    if not args.force:
        for path in paths:
            if os.path.exists(path):
                raise UsageError(f"refusing to overwrite {path} without --force")
    return paths if len(paths) > 1 else paths[0]


def _load_net(path):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _spec(args):
    return RegularizerSpec.preset(args.preset, args.lambda_w, args.lambda_u)


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    path = _ensure_out(args, "dataset.csv")
    x, y = gen_data(args.n, args.lo, args.hi, args.seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for xi, yi in zip(x[:, 0], y[:, 0]):
            writer.writerow([FLOAT_FMT % xi, FLOAT_FMT % yi])
    print(f"wrote {path}")


def cmd_train(args):
    if not os.path.exists(args.config):
        raise UsageError(f"config not found: {args.config}")
    cfg = TrainConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed_init, cfg.seed_data, cfg.seed_resample = (
            args.seed,
            args.seed + 1,
            args.seed + 2,
        )
    _ensure_out(args, "metrics.csv", "checkpoint.nfr")
    result = train(cfg, out_dir=args.out_dir)
    last = result.metrics[-1] if result.metrics else None
    if last:
        print(
            f"epoch {last.epoch}: train_rmse={last.train_rmse:.6g} "
            f"test_rmse={last.test_rmse:.6g} reg={last.reg_value:.6g}"
        )
    print(f"wrote {result.metrics_path} and {result.checkpoint_path}")


def cmd_repopulate(args):
    net = _load_net(args.checkpoint)
    names = ["repopulated.nfr"] + [
        f"p_layer{l}.csv" for l in range(1, net.depth + 1)
    ]
    paths = _ensure_out(args, *names)
    cfg = ProxConfig(
        step=args.prox_step,
        max_iters=args.prox_iters,
        tol=args.prox_tol,
        floor=args.prox_floor,
    )
    p = solve_weights(net, _spec(args), cfg)
    new_net = resample(net, p, seed=args.seed)
    save_checkpoint(new_net, paths[0])
    export_weights_csv(p, args.out_dir)
    print(f"wrote {', '.join(paths)}")


def cmd_diagnose(args):
    net = _load_net(args.checkpoint)
    layers = range(1, net.depth + 1)
    names = (
        ["variance.csv"]
        + [f"kkt_layer{l}.csv" for l in layers]
        + [f"sparsity_layer{l}.csv" for l in layers]
    )
    _ensure_out(args, *names)
    x, _ = gen_data(args.batch, args.lo, args.hi, args.seed)
    v = diagnostics.approx_variance(net, x)
    diagnostics.write_variance_csv(os.path.join(args.out_dir, "variance.csv"), [(0, v)])
    spec = _spec(args)
    for l in layers:
        diagnostics.write_kkt_csv(args.out_dir, diagnostics.kkt_pairs(net, spec, l))
        W = net.weights[l - 1]
        ts = np.linspace(0.0, float(np.max(np.abs(W))) or 1.0, 65)
        diagnostics.write_sparsity_csv(
            args.out_dir, l, ts, diagnostics.sparsity_cdf(W, ts)
        )
    print(f"V={v:.6g}; wrote {len(names)} files to {args.out_dir}")


def cmd_study(args):
    master = _load_net(args.checkpoint)
    paths = _ensure_out(args, "study.csv", "leading_terms.csv", "summary.json")
    widths = _int_list(args.widths)
    x, _ = gen_data(args.batch, args.lo, args.hi, args.seed)
    res = sampling.variance_study(master, widths, args.trials, x, seed=args.seed)
    terms = sampling.leading_terms(master, x)
    sampling.write_study_csv(paths[0], res)
    sampling.write_leading_csv(paths[1], terms)
    summary = {
        "widths": res.widths,
        "trials": res.trials,
        "slope": res.slope,
        "slope_flag": res.slope_flag,
        "sum_leading_terms": terms.total,
        "m_times_mse_at_largest": float(res.widths[-1] * res.mean_mse[-1]),
    }
    sampling.write_summary_json(paths[2], summary)
    print(f"slope={res.slope}; wrote {', '.join(paths)}")


def cmd_export_features(args):
    net = _load_net(args.checkpoint)
    layers = _int_list(args.layers) or list(range(1, net.depth + 1))
    grid = np.linspace(args.lo, args.hi, args.grid_n)
    if net.input_dim != 1:
        raise UsageError("feature export draws 1-d feature functions only")
    names = [f"features_layer{l}.csv" for l in layers]
    _ensure_out(args, *names)
    rng = np.random.default_rng(args.seed)
    for l in layers:
        m = net.hidden_widths[l - 1]
        if args.neurons:
            ids = _int_list(args.neurons)
        else:
            ids = sorted(rng.choice(m, size=min(args.sample, m), replace=False).tolist())
        vals = diagnostics.feature_functions(net, l, grid[:, None], ids)
        diagnostics.write_features_csv(args.out_dir, l, grid, ids, vals)
    print(f"wrote {', '.join(names)} to {args.out_dir}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "repopulate": cmd_repopulate,
    "diagnose": cmd_diagnose,
    "study": cmd_study,
    "export-features": cmd_export_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, TrainingDiverged, ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
