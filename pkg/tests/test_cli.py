"""End-to-end tests of the command-line interface.

Commands run in-process through main(argv) so exit codes and output
can be asserted directly; one subprocess test covers the real entry
point.
"""

import configparser
import csv
import subprocess
import sys

import numpy as np
import pytest

from funcmean import (
    Grid,
    NetworkParams,
    load_params,
    mean_function,
    read_dataset,
    save_params,
)
from funcmean.cli import main
from funcmean.network import Architecture


def run_cli(*argv):
    return main(list(argv))


def zero_params_2d(width=4):
    return NetworkParams(
        weights=[np.zeros((width, 2)), np.zeros((1, width))],
        shifts=[np.zeros(width)],
    )


def simulate_tiny(tmp_path, name="data.fmds", n=3, dims="5,5", sigma="1.0",
                  seed="0", kernel="none"):
    out = tmp_path / name
    code = run_cli("simulate", "--mean", "case2-2d", "--dims", dims,
                   "--n", str(n), "--sigma", sigma, "--seed", seed,
                   "--kernel", kernel, "--out", str(out))
    assert code == 0
    return out


# ---------------------------------------------------------------- simulate

def test_simulate_writes_dataset_and_echo(tmp_path, capsys):
    out = simulate_tiny(tmp_path)
    dataset = read_dataset(out)
    assert dataset.grid.dims == (5, 5)
    assert dataset.n_subjects == 3
    assert dataset.meta["mean"] == "case2-2d"
    stdout = capsys.readouterr().out
    assert "n=3 N=25" in stdout
    echo = configparser.ConfigParser()
    echo.read(f"{out}.config.ini")
    assert echo.has_section("simulate")
    assert echo.get("simulate", "sigma") == "1.0"
    assert echo.get("simulate", "seed") == "0"


def test_simulate_byte_reproducible(tmp_path):
    a = simulate_tiny(tmp_path, "a.fmds", seed="7")
    b = simulate_tiny(tmp_path, "b.fmds", seed="7")
    c = simulate_tiny(tmp_path, "c.fmds", seed="8")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_simulate_zero_noise_zero_kernel_rows_equal_truth(tmp_path):
    out = simulate_tiny(tmp_path, sigma="0.0", kernel="none")
    dataset = read_dataset(out)
    f0 = mean_function("case2-2d").evaluate(dataset.grid)
    for row in dataset.values:
        np.testing.assert_array_equal(row, f0)


def test_simulate_3d_preset_dims(tmp_path):
    out = tmp_path / "vol.fmds"
    code = run_cli("simulate", "--preset", "case3d", "--dims", "20,15,10",
                   "--n", "2", "--sigma", "1.0", "--out", str(out))
    assert code == 0
    dataset = read_dataset(out)
    assert dataset.grid.n_points == 3000
    assert dataset.meta["mean"] == "case3d"


def test_simulate_missing_required_flag_exits_2(tmp_path, capsys):
    code = run_cli("simulate", "--mean", "case2-2d", "--n", "3",
                   "--sigma", "1.0", "--out", str(tmp_path / "x.fmds"))
    assert code == 2
    assert "--dims" in capsys.readouterr().err


def test_simulate_bad_dims_exits_2(tmp_path, capsys):
    code = run_cli("simulate", "--mean", "case2-2d", "--dims", "a,b",
                   "--n", "3", "--sigma", "1.0",
                   "--out", str(tmp_path / "x.fmds"))
    assert code == 2
    assert "dims" in capsys.readouterr().err


def test_option_layering_flag_beats_config_beats_default(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[simulate]\nsigma = 2.0\nseed = 5\n")
    out = tmp_path / "layered.fmds"
    code = run_cli("simulate", "--config", str(cfg), "--mean", "case2-2d",
                   "--dims", "4,4", "--n", "2", "--sigma", "1.5",
                   "--out", str(out))
    assert code == 0
    echo = configparser.ConfigParser()
    echo.read(f"{out}.config.ini")
    # flag wins over config file
    assert echo.get("simulate", "sigma") == "1.5"
    # config file wins over default
    assert echo.get("simulate", "seed") == "5"
    # default used when neither is given
    assert echo.get("simulate", "kernel") == "cosine"
    assert read_dataset(out).meta["seed"] == "5"


def test_outdir_env_var_redirects_relative_paths(tmp_path, monkeypatch):
    outdir = tmp_path / "results"
    monkeypatch.setenv("FUNCMEAN_OUTDIR", str(outdir))
    code = run_cli("simulate", "--mean", "case2-2d", "--dims", "4,4",
                   "--n", "2", "--sigma", "1.0", "--kernel", "none",
                   "--out", "sub/data.fmds")
    assert code == 0
    assert (outdir / "sub" / "data.fmds").exists()


# ------------------------------------------------------------------- train

def test_train_fit_save_load_deterministic(tmp_path):
    data = simulate_tiny(tmp_path)
    p1, p2 = tmp_path / "fit1.fmnp", tmp_path / "fit2.fmnp"
    for out in (p1, p2):
        code = run_cli("train", "--data", str(data), "--out", str(out),
                       "--width", "4", "--epochs", "3", "--seed", "3",
                       "--report", str(out) + ".csv")
        assert code == 0
    assert p1.read_bytes() == p2.read_bytes()
    params, arch = load_params(p1)
    assert arch.widths == (2, 4, 4, 4, 1)
    assert (tmp_path / "fit1.fmnp.csv").exists()
    assert (tmp_path / "fit1.fmnp.config.ini").exists()


def test_train_theory_mode_echoes_derived_widths(tmp_path, capsys):
    # n=100 subjects on a 625-point grid sizes the depth-7 width-10 net
    data = tmp_path / "big.fmds"
    assert run_cli("simulate", "--mean", "case2-2d", "--dims", "25,25",
                   "--n", "100", "--sigma", "1.0", "--kernel", "none",
                   "--out", str(data)) == 0
    out = tmp_path / "theory.fmnp"
    code = run_cli("train", "--data", str(data), "--out", str(out),
                   "--mode", "theory", "--epochs", "1")
    assert code == 0
    stdout = capsys.readouterr().out
    assert "widths=2,10,10,10,10,10,10,10,1" in stdout
    _, arch = load_params(out)
    assert arch.n_hidden == 7
    assert arch.sparsity is not None
    assert arch.f_bound is not None


def test_train_theory_mode_rejects_width_flag(tmp_path, capsys):
    data = simulate_tiny(tmp_path)
    code = run_cli("train", "--data", str(data),
                   "--out", str(tmp_path / "x.fmnp"),
                   "--mode", "theory", "--width", "8")
    assert code == 2
    assert "theory mode" in capsys.readouterr().err


def test_train_divergence_exits_4_and_keeps_report(tmp_path, capsys):
    data = simulate_tiny(tmp_path)
    report = tmp_path / "diverged.csv"
    code = run_cli("train", "--data", str(data),
                   "--out", str(tmp_path / "x.fmnp"),
                   "--width", "4", "--epochs", "5", "--lr", "1e9",
                   "--report", str(report))
    assert code == 4
    assert "diverg" in capsys.readouterr().err
    assert report.exists()
    assert not (tmp_path / "x.fmnp").exists()


def test_train_missing_dataset_exits_3(tmp_path, capsys):
    code = run_cli("train", "--data", str(tmp_path / "absent.fmds"),
                   "--out", str(tmp_path / "x.fmnp"), "--epochs", "1")
    assert code == 3
    assert "error" in capsys.readouterr().err


# -------------------------------------------------------------------- eval

def test_eval_zero_network_risk_is_mean_square_of_truth(tmp_path, capsys):
    data = tmp_path / "case1.fmds"
    assert run_cli("simulate", "--mean", "case1-2d", "--dims", "5,5",
                   "--n", "2", "--sigma", "0.5", "--kernel", "none",
                   "--out", str(data)) == 0
    params_path = tmp_path / "zero.fmnp"
    arch = Architecture(n_hidden=1, widths=(2, 4, 1))
    save_params(params_path, zero_params_2d(), arch)
    capsys.readouterr()
    code = run_cli("eval", "--data", str(data), "--params", str(params_path))
    assert code == 0
    first_line = capsys.readouterr().out.splitlines()[0]
    risk = float(first_line)
    grid = Grid(dims=(5, 5))
    f0 = mean_function("case1-2d").evaluate(grid)
    assert risk == pytest.approx(float(np.mean(f0 ** 2)), rel=1e-12)


def test_eval_dump_columns(tmp_path, capsys):
    data = simulate_tiny(tmp_path)
    params_path = tmp_path / "zero.fmnp"
    save_params(params_path, zero_params_2d(),
                Architecture(n_hidden=1, widths=(2, 4, 1)))
    dump = tmp_path / "points.csv"
    code = run_cli("eval", "--data", str(data), "--params", str(params_path),
                   "--dump", str(dump))
    assert code == 0
    with open(dump, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "x1", "x2", "prediction", "truth", "sq_error"]
    assert len(rows) == 1 + 25
    assert rows[1][0] == "1"  # indices are 1-based
    assert float(rows[1][3]) == 0.0


def test_eval_without_usable_truth_exits_2(tmp_path, capsys):
    raw = tmp_path / "payload.raw"
    raw.write_bytes(np.zeros(16, dtype="<f8").tobytes())
    data = tmp_path / "ingested.fmds"
    assert run_cli("ingest", "--raw", str(raw), "--dims", "4,4", "--n", "1",
                   "--out", str(data)) == 0
    params_path = tmp_path / "zero.fmnp"
    save_params(params_path, zero_params_2d(),
                Architecture(n_hidden=1, widths=(2, 4, 1)))
    code = run_cli("eval", "--data", str(data), "--params", str(params_path))
    assert code == 2
    assert "--mean" in capsys.readouterr().err


def test_eval_dimension_mismatch_exits_2(tmp_path, capsys):
    data = simulate_tiny(tmp_path)  # d=2 dataset
    params_path = tmp_path / "p3.fmnp"
    params3 = NetworkParams(weights=[np.zeros((2, 3)), np.zeros((1, 2))],
                            shifts=[np.zeros(2)])
    save_params(params_path, params3, Architecture(n_hidden=1, widths=(3, 2, 1)))
    code = run_cli("eval", "--data", str(data), "--params", str(params_path))
    assert code == 2
    assert "d=3" in capsys.readouterr().err


# ---------------------------------------------------------------- spectrum

def test_spectrum_cosine_constant_column(tmp_path, capsys):
    out = tmp_path / "spec.csv"
    code = run_cli("spectrum", "--kernel", "cosine", "--d", "1",
                   "--sizes", "4,8,16,32", "--out", str(out))
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["kernel", "varrho", "d", "N", "lambda1", "method"]
    data_rows = [r for r in rows[1:] if r and not r[0].startswith("#")]
    assert len(data_rows) == 4
    for row in data_rows:
        assert float(row[4]) == pytest.approx(0.5, abs=1e-9)
    text = out.read_text()
    assert "# rho_hat=" in text
    assert "lambda1=0.5" in capsys.readouterr().out


def test_spectrum_bernoulli_recovers_decay(tmp_path, capsys):
    code = run_cli("spectrum", "--kernel", "bernoulli", "--varrho", "2.0",
                   "--d", "1", "--sizes", "8,16,32,64")
    assert code == 0
    stdout = capsys.readouterr().out
    line = [l for l in stdout.splitlines() if "rho_hat=" in l][0]
    rho_hat = float(line.split("rho_hat=")[1].split()[0])
    assert 1.85 < rho_hat < 2.15


def test_spectrum_single_size_reports_unavailable(capsys):
    code = run_cli("spectrum", "--kernel", "cosine", "--sizes", "8")
    assert code == 0
    assert "rho_hat=unavailable" in capsys.readouterr().out


def test_spectrum_bernoulli_needs_valid_varrho(capsys):
    code = run_cli("spectrum", "--kernel", "bernoulli", "--sizes", "8,16,32")
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_spectrum_rejects_unknown_kernel():
    with pytest.raises(SystemExit) as exc_info:
        run_cli("spectrum", "--kernel", "matern", "--sizes", "8,16")
    assert exc_info.value.code == 2


# -------------------------------------------------------------- experiment

def preset_ini(tmp_path, **overrides):
    fields = dict(
        mean="case2-2d",
        dims="5,5",
        sigmas="1.0",
        n="3, 4, 5",
        kernel="none",
        epochs="2",
        reps="1",
    )
    fields.update(overrides)
    path = tmp_path / "tiny-preset.ini"
    path.write_text(
        "[preset]\n" + "".join(f"{k} = {v}\n" for k, v in fields.items())
    )
    return path


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sigma", "N", "n", "rep", "seed", "risk", "seconds"]
    return rows[1:]


def test_experiment_writes_records_tables_rate(tmp_path, capsys):
    preset = preset_ini(tmp_path)
    outdir = tmp_path / "study"
    code = run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(outdir))
    assert code == 0
    records = read_records_csv(outdir / "records.csv")
    assert len(records) == 3  # 1 sigma x 1 dims x 3 n x 1 rep
    with open(outdir / "tables.csv", newline="") as fh:
        table_rows = list(csv.reader(fh))
    assert table_rows[0] == ["sigma", "N", "n", "reps", "mean_risk", "sd_risk"]
    assert len(table_rows) == 4
    rate_text = (outdir / "rate.csv").read_text()
    assert rate_text.startswith("#")
    assert "log factor" in rate_text
    rate_rows = [l for l in rate_text.splitlines()
                 if l and not l.startswith("#")]
    assert rate_rows[0] == "sigma,N,slope,stderr,target,cells"
    assert len(rate_rows) == 2  # header + one (sigma, N) group
    assert (outdir / "experiment.config.ini").exists()
    assert "mean_risk" in capsys.readouterr().out


def test_experiment_twelve_row_sweep(tmp_path):
    preset = preset_ini(tmp_path, dims="4,4; 5,5", sigmas="1.0, 2.0",
                        n="2, 3, 4", epochs="1")
    outdir = tmp_path / "sweep"
    assert run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(outdir)) == 0
    with open(outdir / "tables.csv", newline="") as fh:
        table_rows = list(csv.reader(fh))
    assert len(table_rows) == 1 + 12  # 2 sigma x 2 N x 3 n


def test_experiment_resume_recomputes_only_missing(tmp_path, capsys):
    preset = preset_ini(tmp_path)
    outdir = tmp_path / "resume"
    assert run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(outdir)) == 0
    first = read_records_csv(outdir / "records.csv")
    # drop the middle record and rerun
    removed = first[1]
    kept = [first[0], first[2]]
    with open(outdir / "records.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "N", "n", "rep", "seed", "risk", "seconds"])
        writer.writerows(kept)
    capsys.readouterr()
    assert run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(outdir)) == 0
    assert "resuming: 2 records already present" in capsys.readouterr().err
    second = read_records_csv(outdir / "records.csv")
    # identical except the recomputed row's wall time
    assert [r[:6] for r in second] == [r[:6] for r in first]
    assert [r for r in second if r[:6] == kept[0][:6]][0] == kept[0]
    assert [r for r in second if r[:6] == removed[:6]][0][:6] == removed[:6]


def test_experiment_jobs_do_not_change_results(tmp_path):
    preset = preset_ini(tmp_path, n="3, 4")
    out1, out2 = tmp_path / "serial", tmp_path / "parallel"
    assert run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(out1), "--jobs", "1") == 0
    assert run_cli("experiment", "--preset", str(preset),
                   "--outdir", str(out2), "--jobs", "2") == 0
    serial = [r[:6] for r in read_records_csv(out1 / "records.csv")]
    parallel = [r[:6] for r in read_records_csv(out2 / "records.csv")]
    assert serial == parallel


def test_experiment_unknown_preset_exits_2(tmp_path, capsys):
    code = run_cli("experiment", "--preset", "case9",
                   "--outdir", str(tmp_path / "x"))
    assert code == 2
    assert "preset" in capsys.readouterr().err


# ------------------------------------------------------------------ ingest

def test_ingest_roundtrip_cli(tmp_path, capsys):
    values = np.arange(32, dtype="<f8").reshape(2, 16)
    raw = tmp_path / "stack.raw"
    raw.write_bytes(values.tobytes())
    out = tmp_path / "stack.fmds"
    code = run_cli("ingest", "--raw", str(raw), "--dims", "4,4", "--n", "2",
                   "--meta", "mean=case2-2d", "--out", str(out))
    assert code == 0
    back = read_dataset(out)
    np.testing.assert_array_equal(back.values, values)
    assert back.meta["mean"] == "case2-2d"
    assert back.meta["source"] == "ingest"


def test_ingest_large_voxel_grid_streams(tmp_path):
    dims = (79, 95, 69)
    n_points = 79 * 95 * 69
    raw = tmp_path / "scan.raw"
    with open(raw, "wb") as fh:
        fh.seek(8 * n_points - 1)
        fh.write(b"\x00")
    out = tmp_path / "scan.fmds"
    code = run_cli("ingest", "--raw", str(raw), "--dims", "79,95,69",
                   "--n", "1", "--out", str(out))
    assert code == 0
    dataset = read_dataset(out)
    assert dataset.grid.n_points == 517845
    assert dataset.values.shape == (1, 517845)


def test_ingest_truncated_payload_exits_2(tmp_path, capsys):
    raw = tmp_path / "short.raw"
    raw.write_bytes(b"\x00" * 100)
    code = run_cli("ingest", "--raw", str(raw), "--dims", "4,4", "--n", "2",
                   "--out", str(tmp_path / "x.fmds"))
    assert code == 2
    err = capsys.readouterr().err
    assert "100 bytes" in err and "256" in err


# ----------------------------------------------------------------- predict

def test_predict_matches_eval_dump_exactly(tmp_path):
    data = simulate_tiny(tmp_path)
    params_path = tmp_path / "fit.fmnp"
    assert run_cli("train", "--data", str(data), "--out", str(params_path),
                   "--width", "4", "--epochs", "2", "--seed", "1") == 0
    dump = tmp_path / "eval.csv"
    assert run_cli("eval", "--data", str(data), "--params", str(params_path),
                   "--dump", str(dump)) == 0
    pred_csv = tmp_path / "pred.csv"
    assert run_cli("predict", "--params", str(params_path), "--dims", "5,5",
                   "--out", str(pred_csv)) == 0
    with open(dump, newline="") as fh:
        eval_rows = list(csv.reader(fh))[1:]
    with open(pred_csv, newline="") as fh:
        pred_rows = list(csv.reader(fh))[1:]
    assert [r[3] for r in eval_rows] == [r[3] for r in pred_rows]
    assert [r[:3] for r in eval_rows] == [r[:3] for r in pred_rows]


def test_predict_hires_raw_and_pgm(tmp_path):
    params_path = tmp_path / "net.fmnp"
    save_params(params_path, zero_params_2d(),
                Architecture(n_hidden=1, widths=(2, 4, 1)))
    raw_out = tmp_path / "hires.raw"
    assert run_cli("predict", "--params", str(params_path),
                   "--dims", "128,128", "--format", "raw",
                   "--out", str(raw_out)) == 0
    assert raw_out.stat().st_size == 8 * 16384
    pgm_out = tmp_path / "hires.pgm"
    assert run_cli("predict", "--params", str(params_path),
                   "--dims", "128,128", "--format", "pgm",
                   "--out", str(pgm_out)) == 0
    blob = pgm_out.read_bytes()
    assert blob.startswith(b"P5 128 128 255\n")
    assert len(blob) == len(b"P5 128 128 255\n") + 16384
    assert (tmp_path / "hires.scale.txt").exists()


def test_predict_dimension_mismatch_exits_2(tmp_path, capsys):
    params_path = tmp_path / "net.fmnp"
    save_params(params_path, zero_params_2d(),
                Architecture(n_hidden=1, widths=(2, 4, 1)))
    code = run_cli("predict", "--params", str(params_path), "--dims", "4,4,4",
                   "--out", str(tmp_path / "x.csv"))
    assert code == 2
    assert "d=2" in capsys.readouterr().err


# ------------------------------------------------------------------- shell

def test_no_command_prints_help_exits_2(capsys):
    assert run_cli() == 2
    assert "simulate" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    out = tmp_path / "cli.fmds"
    proc = subprocess.run(
        [sys.executable, "-m", "funcmean", "simulate", "--mean", "case2-2d",
         "--dims", "4,4", "--n", "2", "--sigma", "1.0", "--kernel", "none",
         "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
