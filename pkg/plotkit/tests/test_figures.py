import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from plotkit import FigureError, FigureSpec, read_csv, render
from plotkit.cli import main as cli_main


def write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def metrics_csv(tmp_path):
    rows = ["epoch,train_rmse,test_rmse,reg_value,variance,seconds"]
    for e in range(1, 6):
        rows.append(f"{e},{1.0/e},{1.2/e},{0.1/e},{0.01/e},0")
    return write(tmp_path / "metrics.csv", rows)


@pytest.fixture
def kkt_csv(tmp_path):
    rows = ["neuron,u_val,v_val"] + [f"{j},{j*0.1},{j*0.2+0.05}" for j in range(30)]
    return write(tmp_path / "kkt_layer1.csv", rows)


@pytest.fixture
def sparsity_csv(tmp_path):
    rows = ["threshold,fraction"] + [f"{t/10},{min(1.0, t/8)}" for t in range(9)]
    return write(tmp_path / "sparsity_layer1.csv", rows)


@pytest.fixture
def features_csv(tmp_path):
    rows = ["x,f_j0,f_j3"]
    for x in np.linspace(-3, 3, 21):
        rows.append(f"{x},{np.tanh(x)},{np.tanh(2*x)}")
    return write(tmp_path / "features_layer1.csv", rows)


@pytest.fixture
def study_csv(tmp_path):
    rows = ["m,mean_l1,se_l1,mean_mse,se_mse"]
    for m in (16, 32, 64, 128):
        rows.append(f"{m},{(1.0/m)**0.5},{0.01},{1.0/m},{0.001}")
    return write(tmp_path / "study.csv", rows)


def test_all_five_kinds_render(tmp_path, metrics_csv, kkt_csv, sparsity_csv, features_csv, study_csv):
    specs = [
        FigureSpec("training-curves", [metrics_csv], str(tmp_path / "a.png")),
        FigureSpec("kkt-scatter", [kkt_csv], str(tmp_path / "b.png")),
        FigureSpec("sparsity-cdf", [sparsity_csv], str(tmp_path / "c.png")),
        FigureSpec("feature-grid", [features_csv], str(tmp_path / "d.png")),
        FigureSpec("study-loglog", [study_csv], str(tmp_path / "e.png")),
    ]
    for spec in specs:
        out = render(spec)
        assert os.path.getsize(out) > 0


def test_header_only_metrics_is_no_rows_error(tmp_path):
    p = write(tmp_path / "metrics.csv", ["epoch,train_rmse,test_rmse,reg_value,variance,seconds"])
    with pytest.raises(FigureError, match="no rows"):
        render(FigureSpec("training-curves", [p], str(tmp_path / "x.png")))


def test_missing_column_named(tmp_path):
    p = write(tmp_path / "bad.csv", ["epoch,train_rmse", "1,0.5"])
    with pytest.raises(FigureError, match="'test_rmse'"):
        render(FigureSpec("training-curves", [p], str(tmp_path / "x.png")))


def test_non_numeric_cell_names_column(tmp_path):
    p = write(tmp_path / "bad.csv", ["m,mean_l1,se_l1,mean_mse,se_mse", "16,ok,0,0.1,0"])
    with pytest.raises(FigureError, match="'mean_l1'"):
        render(FigureSpec("study-loglog", [p], str(tmp_path / "x.png")))


def test_collinear_kkt_annotates_r_one(tmp_path):
    rows = ["neuron,u_val,v_val"] + [f"{j},{j*1.0},{2.0*j+1.0}" for j in range(10)]
    p = write(tmp_path / "kkt.csv", rows)
    out = render(FigureSpec("kkt-scatter", [p], str(tmp_path / "k.png")))
    assert os.path.getsize(out) > 0
    cols = read_csv(p)
    assert np.corrcoef(cols["u_val"], cols["v_val"])[0, 1] == pytest.approx(1.0)


def test_sparsity_multiple_inputs_one_curve_each(tmp_path, sparsity_csv):
    p2 = write(tmp_path / "sparsity_layer2.csv",
               ["threshold,fraction", "0,0", "0.5,0.9", "1,1"])
    out = render(FigureSpec("sparsity-cdf", [sparsity_csv, p2], str(tmp_path / "s.png")))
    assert os.path.getsize(out) > 0


def test_repeat_render_same_data_identical_series(tmp_path, study_csv):
    a = render(FigureSpec("study-loglog", [study_csv], str(tmp_path / "r1.png")))
    b = render(FigureSpec("study-loglog", [study_csv], str(tmp_path / "r2.png")))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_unknown_kind_rejected(tmp_path, study_csv):
    with pytest.raises(FigureError, match="unknown figure kind"):
        FigureSpec("pie", [study_csv], str(tmp_path / "x.png"))


def test_cli_end_to_end(tmp_path, study_csv, capsys):
    out = str(tmp_path / "cli.png")
    assert cli_main(["--kind", "study-loglog", "--input", study_csv, "--output", out]) == 0
    assert os.path.getsize(out) > 0
    assert cli_main(["--kind", "study-loglog", "--input", str(tmp_path / "nope.csv"), "--output", out]) == 1


@pytest.mark.skipif(shutil.which("nfr") is None, reason="primary pipeline not installed")
def test_renders_from_real_pipeline_outputs(tmp_path):
    """Drive the primary CLI end to end and render every figure kind from
    its real artifacts."""
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        '{"depth": 2, "base_width": 8, "batch_size": 32, "epochs": 3,'
        ' "n_train": 256, "n_test": 64, "variance_batch": 32,'
        ' "learning_rate": 0.001, "lambda_w": 0.001, "lambda_u": 0.001}'
    )
    run_dir = tmp_path / "run"

    def nfr(*args):
        proc = subprocess.run(["nfr", *args], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    nfr("train", "--config", str(cfg), "--out-dir", str(run_dir))
    nfr("diagnose", "--checkpoint", str(run_dir / "checkpoint.nfr"),
        "--out-dir", str(run_dir), "--batch", "64")
    nfr("study", "--checkpoint", str(run_dir / "checkpoint.nfr"),
        "--widths", "4,8,16", "--trials", "30", "--batch", "16",
        "--out-dir", str(run_dir))
    nfr("export-features", "--checkpoint", str(run_dir / "checkpoint.nfr"),
        "--out-dir", str(run_dir), "--grid-n", "41", "--sample", "5")

    figures = [
        ("training-curves", [run_dir / "metrics.csv"]),
        ("kkt-scatter", [run_dir / "kkt_layer1.csv", run_dir / "kkt_layer2.csv"]),
        ("sparsity-cdf", [run_dir / "sparsity_layer1.csv", run_dir / "sparsity_layer2.csv"]),
        ("feature-grid", [run_dir / "features_layer1.csv", run_dir / "features_layer2.csv"]),
        ("study-loglog", [run_dir / "study.csv"]),
    ]
    for kind, inputs in figures:
        out = render(FigureSpec(kind, [str(p) for p in inputs], str(tmp_path / f"{kind}.png")))
        assert os.path.getsize(out) > 0
