"""Command-line entry point: ``ddmhe <subcommand> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 2 assumption violation, 3 numerical degeneracy,
4 bound-domain error, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from ddmhe import analysis
from ddmhe.errors import DdmheError, ParseError, exit_code_for
from ddmhe.estimators import fit_ddmhe, fit_mbmhe, run_estimation, save_params
from ddmhe.experiments import (
    SWEEP_N,
    SWEEP_SIGMA,
    ExperimentConfig,
    bound_report,
    coerce_value,
    config_to_text,
    load_config,
    online_trajectory,
    resolve_alpha,
    run_sweep,
    with_overrides,
)
from ddmhe.lti import save_trajectory
from ddmhe.offline import (
    check_persistent_excitation,
    collect_offline,
    load_dataset,
    save_dataset,
)
from ddmhe.numerics import rank

CELL_HEADER = ("N", "sigma", "trials", "amse_ddmhe", "amse_mbmhe", "mean_gap",
               "median_delta_G", "median_delta_H", "median_delta_Phi")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([_fmt(v) for v in r])


def cmd_collect(cfg: ExperimentConfig, out: Path) -> int:
    sys_ = cfg.build_system()
    ds = collect_offline(sys_, cfg.N, cfg.L, cfg.noise(), gap=cfg.gap or None,
                         seed=cfg.seed, mode=cfg.collection_mode)
    save_dataset(ds, out / "dataset.txt")
    r = rank(ds.regressor)
    pe = check_persistent_excitation(ds)
    print(f"persistent excitation: {pe} (rank {r} of {ds.n + ds.L * ds.m})")
    return 0


def cmd_estimate(cfg: ExperimentConfig, dataset: Path, out: Path) -> int:
    sys_ = cfg.build_system()
    ds = load_dataset(dataset)
    tuning = cfg.tuning(ds.noise)
    alpha = resolve_alpha(cfg, ds, tuning)
    dd = fit_ddmhe(ds, alpha, *tuning)
    mb = fit_mbmhe(sys_, ds.L, alpha, *tuning)
    traj = online_trajectory(cfg, sys_, cfg.noise(), trial=0)
    times, est_dd = run_estimation(dd, traj)
    _, est_mb = run_estimation(mb, traj)
    truth = traj.states[times - ds.L]
    n = sys_.n
    header = (["t", "k"] + [f"x_{i + 1}" for i in range(n)]
              + [f"ddmhe_{i + 1}" for i in range(n)] + [f"mbmhe_{i + 1}" for i in range(n)]
              + ["err_ddmhe", "err_mbmhe"])
    rows = []
    for j, t in enumerate(times):
        rows.append([int(t), int(t - ds.L), *truth[j], *est_dd[j], *est_mb[j],
                     np.linalg.norm(est_dd[j] - truth[j]), np.linalg.norm(est_mb[j] - truth[j])])
    _write_csv(out / "estimates.csv", header, rows)
    save_trajectory(traj, out / "trajectory.csv")
    save_params(dd, out / "params.txt")
    print(f"alpha={alpha!r} estimates={len(rows)}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    rows, cells = run_sweep(cfg)
    analysis.write_metric_rows(rows, out / "results.csv")
    _write_csv(out / "cells.csv", CELL_HEADER,
               [[c.N, c.sigma, c.trials, c.amse_dd, c.amse_mb, c.mean_gap,
                 c.median_delta_G, c.median_delta_H, c.median_delta_Phi] for c in cells])
    lines = []
    for sigma in sorted({c.sigma for c in cells}):
        group = [c for c in cells if c.sigma == sigma]
        if len(group) >= 3 and all(c.mean_gap > 0 for c in group):
            fit = analysis.decay_rate_fit([c.N for c in group], [c.mean_gap for c in group])
            lines.append(f"sigma={sigma!r} slope={fit.slope!r} intercept={fit.intercept!r} "
                         f"r_squared={fit.r_squared!r}")
        else:
            lines.append(f"sigma={sigma!r} slope=none intercept=none r_squared=none")
    (out / "decay_fit.txt").write_text("\n".join(lines) + "\n")
    print(f"cells={len(cells)} rows={len(rows)}")
    return 0


def cmd_bounds(cfg: ExperimentConfig, dataset: Path, out: Path) -> int:
    ds = load_dataset(dataset)
    sys_ = cfg.build_system()
    report = bound_report(cfg, sys_, ds)
    (out / "bounds.txt").write_text(report.to_text())
    print(f"c1={report.c1!r} c2={report.c2!r} N0={report.N0!r} meets_N0={report.meets_N0}")
    return 0


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: missing header")
        return header, [r for r in reader if r]


def cmd_plotdata(src: Path, out: Path) -> int:
    """Turn harness outputs in ``src`` into tidy plot-ready CSV files."""
    written = 0
    est_path = src / "estimates.csv"
    if est_path.exists():
        header, body = _read_table(est_path)
        n = sum(h.startswith("x_") for h in header)
        for i in range(n):
            try:
                cols = [header.index(c) for c in ("t", "k", f"x_{i + 1}", f"ddmhe_{i + 1}", f"mbmhe_{i + 1}")]
                rows = [[r[c] for c in cols] for r in body]
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{est_path}: {exc}") from None
            _write_csv(out / f"plot_trace_x{i + 1}.csv", ("t", "k", "truth", "ddmhe", "mbmhe"), rows)
            written += 1

    results_path = src / "results.csv"
    if results_path.exists():
        groups: dict[tuple, list[float]] = {}
        for r in analysis.read_metric_rows(results_path):
            groups.setdefault((r.sigma_w, r.N, r.method), []).append(r.mse)
        _write_csv(out / "plot_amse_vs_N.csv", ("sigma", "N", "method", "amse", "trials"),
                   [[s_, N_, meth, analysis.amse(v), len(v)]
                    for (s_, N_, meth), v in sorted(groups.items())])
        written += 1

    cells_path = src / "cells.csv"
    if cells_path.exists():
        header, body = _read_table(cells_path)
        if tuple(header) != CELL_HEADER:
            raise ParseError(f"{cells_path}: unexpected header")
        idx = {h: i for i, h in enumerate(header)}
        gap_rows = []
        try:
            sigmas = sorted({float(r[idx["sigma"]]) for r in body})
            for sigma in sigmas:
                group = [r for r in body if float(r[idx["sigma"]]) == sigma]
                Ns = [int(r[idx["N"]]) for r in group]
                gaps = [float(r[idx["mean_gap"]]) for r in group]
                fit = None
                if len(group) >= 3 and all(g > 0 for g in gaps):
                    fit = analysis.decay_rate_fit(Ns, gaps)
                for N_, g in zip(Ns, gaps):
                    overlay = float(fit.predict(N_)) if fit else ""
                    gap_rows.append([sigma, N_, g, overlay])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{cells_path}: {exc}") from None
        _write_csv(out / "plot_gap_vs_N.csv", ("sigma", "N", "gap", "power_law"), gap_rows)
        written += 1
    print(f"plot files written: {written}")
    return 0


def cmd_bench_sea(cfg: ExperimentConfig, out: Path) -> int:
    """Full SEA pipeline: collect, estimate, bounds, N/noise sweep, plot data."""
    cmd_collect(cfg, out)
    cmd_estimate(cfg, out / "dataset.txt", out)
    cmd_bounds(cfg, out / "dataset.txt", out)
    sweep_cfg = cfg
    if not cfg.sweep_N and not cfg.sweep_sigma:
        sweep_cfg = with_overrides(cfg, sweep_N=list(SWEEP_N), sweep_sigma=list(SWEEP_SIGMA))
    cmd_sweep(sweep_cfg, out)
    cmd_plotdata(out, out)
    (out / "config.txt").write_text(config_to_text(sweep_cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    for f in fields(ExperimentConfig):
        # raw strings; coerced with the config-file rules so flags and files agree
        common.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="VALUE", default=None)

    parser = argparse.ArgumentParser(prog="ddmhe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="generate the offline dataset")
    p = sub.add_parser("estimate", parents=[common], help="run DDMHE and MBMHE on one online run")
    p.add_argument("--dataset", type=Path, default=None)
    sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over N and noise level")
    p = sub.add_parser("bounds", parents=[common], help="evaluate the error-bound constants")
    p.add_argument("--dataset", type=Path, default=None)
    p = sub.add_parser("plotdata", parents=[common], help="emit plot-ready CSV files")
    p.add_argument("--results", type=Path, default=None, help="directory holding harness outputs")
    sub.add_parser("bench-sea", parents=[common], help="full SEA benchmark pipeline")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for f in fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is not None:
            overrides[f.name] = coerce_value(f.name, raw)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        out: Path = args.out
        os.makedirs(out, exist_ok=True)
        if args.command == "collect":
            return cmd_collect(cfg, out)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.dataset or out / "dataset.txt", out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out)
        if args.command == "bounds":
            return cmd_bounds(cfg, args.dataset or out / "dataset.txt", out)
        if args.command == "plotdata":
            return cmd_plotdata(args.results or out, out)
        if args.command == "bench-sea":
            return cmd_bench_sea(cfg, out)
    except DdmheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
