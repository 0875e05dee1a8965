"""Command-line round trips, config files, exit codes and report rendering."""

import json
import os

import numpy as np
import pytest

from refpinn import cli
from refpinn.config import parse_config, parse_value, write_config


def run_cli(*argv):
    return cli.main(list(argv))


def test_config_parse_and_types(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("""
# experiment
mapping.lambda = 10
mapping.epochs = 2000
pinn.mode = hard
pinn.rff = true
sweep.lambda = 1,2,5
geometry.shape = s
""")
    cfg = parse_config(p)
    assert cfg["mapping.lambda"] == 10
    assert cfg["pinn.mode"] == "hard"
    assert cfg["pinn.rff"] is True
    assert cfg["sweep.lambda"] == [1, 2, 5]
    assert parse_value("3.5e-4") == pytest.approx(3.5e-4)


def test_config_write_roundtrip(tmp_path):
    p = tmp_path / "w.cfg"
    write_config(p, {"a.b": 1, "c.d": [1, 2], "e.f": "hard"})
    cfg = parse_config(p)
    assert cfg == {"a.b": 1, "c.d": [1, 2], "e.f": "hard"}


def test_config_syntax_error(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("this is not a key value line\n")
    assert run_cli("gen", "--shape", "s", "--config", str(p)) == 2


def test_gen_writes_pair_csv(tmp_path):
    out = tmp_path / "o"
    rc = run_cli("gen", "--shape", "s", "--spacing", "0.3", "--out", str(out))
    assert rc == 0
    path = out / "pairs_s_shape.csv"
    with open(path) as fh:
        assert fh.readline().strip() == "x,y,xi,eta,is_boundary,nx,ny"
    raw = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert raw.shape[1] == 7
    assert np.isfinite(raw[:, 2]).all()


def test_gen_strongly_perturbed_falls_back_to_cloud(tmp_path):
    out = tmp_path / "o"
    rc = run_cli("gen", "--shape", "perturbed", "--A", "0.25", "--omega", "11",
                 "--spacing", "0.1", "--out", str(out))
    assert rc == 0
    raw = np.genfromtxt(out / "pairs_perturbed_square.csv", delimiter=",",
                        skip_header=1)
    assert np.isnan(raw[:, 2]).all()   # no reference coordinates available


def test_gen_unknown_shape_exit_code():
    assert run_cli("gen", "--shape", "heptagon") == 2


def test_roundtrip_gen_train_map_solve(tmp_path):
    out = tmp_path / "o"
    rc = run_cli("gen", "--shape", "s", "--spacing", "0.3", "--out", str(out))
    assert rc == 0
    rc = run_cli("train-map", "--pairs", str(out / "pairs_s_shape.csv"),
                 "--epochs", "300", "--out", str(out), "--force")
    assert rc == 0
    ckpt = out / "map_pairs_s_shape.csv.bin"
    assert ckpt.exists() and (str(ckpt) + ".json" or True)
    assert (out / "map_metrics.csv").exists()
    with open(out / "map_metrics.csv") as fh:
        assert fh.readline().strip() == "case,rmse_in,rmse_bd,e_max,det_ratio,seconds"
    rc = run_cli("solve", "--shape", "s", "--pde", "poisson", "--mode", "hard",
                 "--map", str(ckpt), "--epochs", "40", "--spacing", "0.3",
                 "--out", str(out), "--seed", "1", "--force")
    assert rc == 0
    run_dir = out / "run_poisson-s_shape_hard_seed1"
    rep = json.load(open(run_dir / "report.json"))
    assert rep["mode"] == "hard"
    assert "l2_rel" in rep["final"]
    trace = np.genfromtxt(run_dir / "trace.csv", delimiter=",", names=True)
    assert "L_u" in trace.dtype.names
    field = np.genfromtxt(run_dir / "field.csv", delimiter=",", skip_header=1)
    assert field.shape[1] == 3


def test_solve_missing_map_exit_code(tmp_path):
    rc = run_cli("solve", "--shape", "s", "--pde", "poisson", "--mode", "hard",
                 "--epochs", "5", "--spacing", "0.4", "--out", str(tmp_path))
    assert rc == 2


def test_solve_gate_failure_exit_code(tmp_path):
    out = tmp_path / "o"
    run_cli("gen", "--shape", "s", "--spacing", "0.35", "--out", str(out))
    run_cli("train-map", "--pairs", str(out / "pairs_s_shape.csv"),
            "--epochs", "30", "--out", str(out), "--force")
    rc = run_cli("solve", "--shape", "s", "--pde", "poisson", "--mode", "hard",
                 "--map", str(out / "map_pairs_s_shape.csv.bin"),
                 "--epochs", "5", "--spacing", "0.35", "--out", str(out))
    assert rc == 3   # an undertrained mapping cannot pass the gate


def test_solve_deterministic_traces_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        rc = run_cli("solve", "--shape", "square", "--pde", "poisson",
                     "--mode", "baseline", "--epochs", "30", "--spacing", "0.25",
                     "--out", str(out), "--seed", "7", "--deterministic")
        assert rc == 0
    t1 = open(out1 / "run_poisson-unit_square_baseline_seed7/trace.csv", "rb").read()
    t2 = open(out2 / "run_poisson-unit_square_baseline_seed7/trace.csv", "rb").read()
    assert t1 == t2


def test_solve_exact_map_and_modes(tmp_path):
    for mode in ("transform", "chainrule", "jacobinet"):
        rc = run_cli("solve", "--shape", "s", "--pde", "poisson", "--mode", mode,
                     "--exact-map", "--epochs", "20", "--spacing", "0.35",
                     "--out", str(tmp_path), "--seed", "0")
        assert rc == 0


def test_report_merges_and_renders(tmp_path):
    out = tmp_path / "o"
    for seed in (0, 1):
        run_cli("solve", "--shape", "square", "--pde", "poisson",
                "--mode", "baseline", "--epochs", "25", "--spacing", "0.3",
                "--out", str(out), "--seed", str(seed))
    rc = run_cli("report", "--dir", str(out), "--out", str(out))
    assert rc == 0
    assert (out / "summary.csv").exists()
    assert (out / "loss_curves.svg").exists()
    assert (out / "ratio_curves.svg").exists()
    rows = open(out / "summary.csv").read().strip().splitlines()
    assert rows[0].startswith("run,case,mode,seed,l2_rel")
    assert len(rows) == 3


def test_csv_outputs_roundtrip_losslessly(tmp_path):
    out = tmp_path / "o"
    run_cli("solve", "--shape", "square", "--pde", "poisson", "--mode", "baseline",
            "--epochs", "25", "--spacing", "0.3", "--out", str(out), "--seed", "3")
    run_dir = out / "run_poisson-unit_square_baseline_seed3"
    with open(run_dir / "trace.csv") as fh:
        header = fh.readline().strip().split(",")
        row = fh.readline().strip().split(",")
    # text -> float -> text reproduces the exact token
    for tok in row[1:]:
        assert repr(float(tok)) == tok or tok in ("inf", "nan")
