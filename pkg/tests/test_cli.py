"""Experiment configuration and command-line harness."""

import csv
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from ddmhe.analysis import BoundReport, amse
from ddmhe.cli import CELL_HEADER, main
from ddmhe.errors import InvalidInputError, ParseError
from ddmhe.experiments import (
    ExperimentConfig,
    coerce_value,
    config_to_text,
    load_config,
    parse_config_text,
    sea_system,
)
from ddmhe.lti import check_observability
from ddmhe.offline import load_dataset, save_dataset
from helpers import n_sweep

GOLDEN = Path(__file__).parent / "golden"


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# configuration


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.N, cfg.L, cfg.alpha, cfg.collection_mode) == (500, 10, "1", "restart")
    assert cfg.tuning(cfg.noise()) == (0.002, 0.002)


def test_tuning_falls_back_for_noiseless_data():
    cfg = ExperimentConfig(sigma_w=0, sigma_v=0)
    assert cfg.tuning(cfg.noise()) == (0.002, 0.002)


def test_config_text_round_trip(tmp_path):
    cfg = ExperimentConfig(N=123, alpha="auto", sweep_N=[50, 100], sweep_sigma=[0.01], sigma_w=0.05)
    path = tmp_path / "c.txt"
    path.write_text(config_to_text(cfg))
    assert load_config(path) == cfg


def test_config_comments_and_overrides(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\nN = 80  # short run\n\nL = 5\n")
    cfg = load_config(path, {"L": 6})
    assert (cfg.N, cfg.L) == (80, 6)


@pytest.mark.parametrize("text", ["N 80", "bogus = 1", "N = abc", "sigma_w = x"])
def test_config_parse_errors(text):
    with pytest.raises(ParseError):
        parse_config_text(text)


def test_coerce_lists():
    assert coerce_value("sweep_N", "50, 100,150") == [50, 100, 150]
    assert coerce_value("sweep_sigma", "0.002,0.05") == [0.002, 0.05]


@pytest.mark.parametrize("kw", [
    {"trials": 0}, {"horizon_T": 5}, {"sweep_N": [0]}, {"sweep_sigma": [-1.0]},
    {"alpha": "0"}, {"alpha": "fast"}, {"excitation": "chirp"},
])
def test_config_invariants(kw):
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**kw)


def test_unknown_system():
    with pytest.raises(InvalidInputError):
        ExperimentConfig(system="pendulum").build_system()


def test_system_file(tmp_path):
    path = tmp_path / "sys.txt"
    path.write_text("A\n0.5\nB\n1\nC\n2\n")
    sys_ = ExperimentConfig(system=f"file:{path}").build_system()
    assert sys_.A[0, 0] == 0.5 and sys_.C[0, 0] == 2.0


def test_system_file_missing_block(tmp_path):
    path = tmp_path / "sys.txt"
    path.write_text("A\n0.5\nB\n1\n")
    with pytest.raises(ParseError):
        ExperimentConfig(system=f"file:{path}").build_system()


def test_sea_plant_values():
    sea = sea_system()
    assert sea.A.shape == (4, 4) and sea.B.shape == (4, 2) and sea.C.shape == (2, 4)
    assert sea.A[0, 0] == 0.997 and sea.A[2, 2] == 0.951
    assert sea.B[0, 0] == 0.033 and sea.B[2, 1] == 0.049
    assert check_observability(sea)


# ---------------------------------------------------------------------------
# collect


def test_collect_writes_full_rank_dataset(tmp_path, capsys):
    code, out, _ = run(capsys, "collect", "--out", tmp_path)
    assert code == 0
    ds = load_dataset(tmp_path / "dataset.txt")
    assert ds.N == 500 and ds.Up.shape == (20, 500) and ds.Yp.shape == (22, 500)
    assert "persistent excitation: True (rank 24 of 24)" in out


def test_collect_too_few_segments(tmp_path, capsys):
    code, _, err = run(capsys, "collect", "--N", 10, "--out", tmp_path)
    assert code == 2
    assert "persistent excitation" in err


def test_collect_short_horizon(tmp_path, capsys):
    code, _, _ = run(capsys, "collect", "--L", 2, "--out", tmp_path)
    assert code == 2


def test_collect_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "collect", "--seed", 3, "--N", 60, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a/dataset.txt").read_bytes() == (tmp_path / "b/dataset.txt").read_bytes()
    run(capsys, "collect", "--seed", 4, "--N", 60, "--out", tmp_path / "c")
    assert (tmp_path / "a/dataset.txt").read_bytes() != (tmp_path / "c/dataset.txt").read_bytes()


def test_config_file_and_flag(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("N = 70\nL = 4\n")
    assert run(capsys, "collect", "--config", cfg, "--L", 5, "--out", tmp_path)[0] == 0
    ds = load_dataset(tmp_path / "dataset.txt")
    assert (ds.N, ds.L) == (70, 5)


def test_bad_flag_value_is_parse_error(tmp_path, capsys):
    assert run(capsys, "collect", "--N", "many", "--out", tmp_path)[0] == 1


# ---------------------------------------------------------------------------
# estimate


@pytest.fixture
def noiseless_run(tmp_path, capsys):
    flags = ["--sigma_w", 0, "--sigma_v", 0, "--sigma_chi", 0, "--N", 50, "--out", tmp_path]
    assert run(capsys, "collect", *flags)[0] == 0
    assert run(capsys, "estimate", *flags)[0] == 0
    return tmp_path


def test_estimate_noiseless(noiseless_run):
    header, body = read_csv(noiseless_run / "estimates.csv")
    assert header[:2] == ["t", "k"] and header[-2:] == ["err_ddmhe", "err_mbmhe"]
    assert len(body) == 91
    data = np.array(body, dtype=float)
    late = data[data[:, 0] >= 20]
    assert late[:, -2].max() <= 1e-6
    dd, mb = data[:, 6:10], data[:, 10:14]
    assert np.abs(dd - mb).max() <= 1e-8
    assert np.all(data[:, 0] - data[:, 1] == 10)


def test_estimate_writes_artifacts(noiseless_run):
    for name in ("trajectory.csv", "params.txt"):
        assert (noiseless_run / name).stat().st_size > 0


@pytest.mark.parametrize("blocks,code", [(("Yp",), 3), (("X0bar", "Up"), 2)])
def test_estimate_degenerate_dataset(tmp_path, capsys, blocks, code):
    assert run(capsys, "collect", "--N", 60, "--out", tmp_path)[0] == 0
    ds = load_dataset(tmp_path / "dataset.txt")
    for b in blocks:
        getattr(ds, b)[:] = 0.0
    save_dataset(ds, tmp_path / "dataset.txt")
    assert run(capsys, "estimate", "--N", 60, "--out", tmp_path)[0] == code


def test_estimate_missing_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "estimate", "--out", tmp_path)
    assert code == 1 and "dataset.txt" in err


# ---------------------------------------------------------------------------
# sweep


def test_sweep_single_cell(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--sweep_N", 100, "--sweep_sigma", 0.002,
                       "--trials", 1, "--out", tmp_path)
    assert code == 0
    header, body = read_csv(tmp_path / "results.csv")
    assert len(body) == 2 and {r[0] for r in body} == {"ddmhe", "mbmhe"}
    header, cells = read_csv(tmp_path / "cells.csv")
    assert tuple(header) == CELL_HEADER and len(cells) == 1
    assert "slope=none" in (tmp_path / "decay_fit.txt").read_text()


def test_sweep_row_count(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep_N", "100,200", "--sweep_sigma", "0.002,0.01",
                     "--trials", 3, "--out", tmp_path)
    assert code == 0
    _, body = read_csv(tmp_path / "results.csv")
    assert len(body) == 2 * 2 * 3 * 2
    assert all(float(r[5]) >= 0 for r in body)


def test_sweep_amse_falls_with_N():
    rows, cells, _ = n_sweep()
    rho = spearmanr([c.N for c in cells], [c.amse_dd for c in cells]).statistic
    assert rho < 0
    # cell summaries agree with the raw rows
    c = cells[0]
    raw = [r.mse for r in rows if r.method == "ddmhe" and r.N == c.N]
    assert math.isclose(amse(raw), c.amse_dd, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# bounds


def test_bounds_auto_alpha_contracts(tmp_path, capsys):
    assert run(capsys, "collect", "--out", tmp_path)[0] == 0
    code, out, _ = run(capsys, "bounds", "--alpha", "auto", "--pi_trials", 10, "--out", tmp_path)
    assert code == 0
    rep = BoundReport.from_text((tmp_path / "bounds.txt").read_text())
    assert rep.c1 < 1 and rep.ultimate_bound is not None and rep.ultimate_bound > 0
    assert rep.source == "model" and rep.N == 500


def test_bounds_noiseless_c2_zero(tmp_path, capsys):
    flags = ["--sigma_w", 0, "--sigma_v", 0, "--sigma_chi", 0, "--pi_trials", 5, "--out", tmp_path]
    assert run(capsys, "collect", *flags)[0] == 0
    assert run(capsys, "bounds", *flags)[0] == 0
    rep = BoundReport.from_text((tmp_path / "bounds.txt").read_text())
    assert rep.c2 == 0.0


def test_bounds_report_keys_match_golden(tmp_path, capsys):
    assert run(capsys, "collect", "--N", 60, "--out", tmp_path)[0] == 0
    assert run(capsys, "bounds", "--N", 60, "--pi_trials", 5, "--out", tmp_path)[0] == 0
    keys = [line.split("=", 1)[0] for line in (tmp_path / "bounds.txt").read_text().splitlines()]
    assert keys == (GOLDEN / "bound_report_keys.txt").read_text().split()


def test_bounds_eps_out_of_domain(tmp_path, capsys):
    assert run(capsys, "collect", "--N", 60, "--out", tmp_path)[0] == 0
    code, _, err = run(capsys, "bounds", "--N", 60, "--eps", 5, "--pi_trials", 5, "--out", tmp_path)
    assert code == 4 and err.startswith("error:")


# ---------------------------------------------------------------------------
# plotdata


def test_plotdata_header_only(tmp_path, capsys):
    (tmp_path / "results.csv").write_text("method,trial,N,sigma_w,sigma_v,mse\n")
    (tmp_path / "cells.csv").write_text(",".join(CELL_HEADER) + "\n")
    assert run(capsys, "plotdata", "--out", tmp_path)[0] == 0
    for name in ("plot_amse_vs_N.csv", "plot_gap_vs_N.csv"):
        header, body = read_csv(tmp_path / name)
        assert header and body == []


def test_plotdata_traces(noiseless_run, capsys):
    assert run(capsys, "plotdata", "--out", noiseless_run)[0] == 0
    traces = sorted(p.name for p in noiseless_run.glob("plot_trace_x*.csv"))
    assert traces == [f"plot_trace_x{i}.csv" for i in range(1, 5)]
    header, body = read_csv(noiseless_run / "plot_trace_x1.csv")
    assert header == ["t", "k", "truth", "ddmhe", "mbmhe"] and len(body) == 91


def test_plotdata_power_law_overlay(tmp_path, capsys):
    Ns = [100, 200, 400, 800]
    gaps = [0.3, 0.2, 0.15, 0.1]
    with open(tmp_path / "cells.csv", "w") as fh:
        fh.write(",".join(CELL_HEADER) + "\n")
        for N_, g in zip(Ns, gaps):
            fh.write(f"{N_},0.002,5,1.0,1.0,{g},0.1,0.1,0.1\n")
    assert run(capsys, "plotdata", "--out", tmp_path)[0] == 0
    _, body = read_csv(tmp_path / "plot_gap_vs_N.csv")
    slope, intercept = np.polyfit(np.log(Ns), np.log(gaps), 1)
    expected = np.exp(intercept) * np.asarray(Ns, float) ** slope
    assert np.allclose([float(r[3]) for r in body], expected, rtol=1e-10)


def test_plotdata_amse_groups(tmp_path, capsys):
    (tmp_path / "results.csv").write_text(
        "method,trial,N,sigma_w,sigma_v,mse\n"
        "ddmhe,0,100,0.002,0.002,1.0\nddmhe,1,100,0.002,0.002,3.0\nmbmhe,0,100,0.002,0.002,2.0\n"
    )
    assert run(capsys, "plotdata", "--out", tmp_path)[0] == 0
    _, body = read_csv(tmp_path / "plot_amse_vs_N.csv")
    assert [(r[2], float(r[3]), int(r[4])) for r in body] == [("ddmhe", 2.0, 2), ("mbmhe", 2.0, 1)]


@pytest.mark.parametrize("name,text", [
    ("results.csv", "method,trial\nddmhe,0\n"),
    ("results.csv", "method,trial,N,sigma_w,sigma_v,mse\nddmhe,zero,100,0.1,0.1,1.0\n"),
    ("cells.csv", "N,sigma\n100,0.1\n"),
    ("cells.csv", ",".join(CELL_HEADER) + "\n100,abc,5,1,1,0.1,0.1,0.1,0.1\n"),
    ("estimates.csv", "t,k,x_1,ddmhe_1\n1,0,0.5,0.5\n"),
])
def test_plotdata_malformed(tmp_path, capsys, name, text):
    (tmp_path / name).write_text(text)
    code, _, err = run(capsys, "plotdata", "--out", tmp_path)
    assert code == 1 and err.startswith("error:")


def test_plotdata_empty_file(tmp_path, capsys):
    (tmp_path / "cells.csv").write_text("")
    assert run(capsys, "plotdata", "--out", tmp_path)[0] == 1


def test_subcommand_required(capsys):
    with pytest.raises(SystemExit):
        main([])
