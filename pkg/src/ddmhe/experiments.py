"""Experiment configuration and the Monte Carlo trial loop behind the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from ddmhe import analysis
from ddmhe.errors import InvalidInputError, ParseError
from ddmhe.estimators import DdmheParams, fit_ddmhe, fit_mbmhe, run_estimation
from ddmhe.lti import LtiSystem, NoiseSpec, Trajectory, role_rng, simulate
from ddmhe.numerics import parse_matrix_lines
from ddmhe.offline import OfflineDataset, collect_offline

# default sweep grid
SWEEP_N = tuple(range(50, 1000, 50))
SWEEP_SIGMA = (0.002, 0.01, 0.05)


def sea_system() -> LtiSystem:
    """Discretized series-elastic-actuator robot joint (T_s = 0.01 s)."""
    A = np.array([
        [0.997, -0.033, 0.0, 0.033],
        [0.010, 1.000, 0.0, 0.0],
        [0.0, 0.049, 0.951, -0.049],
        [0.0, 0.0, 0.010, 1.000],
    ])
    B = np.array([[0.033, 0.0], [0.0, 0.0], [0.0, 0.049], [0.0, 0.0]])
    C = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    return LtiSystem(A, B, C)


def scalar_system() -> LtiSystem:
    return LtiSystem(np.array([[0.9]]), np.array([[1.0]]), np.array([[1.0]]))


def load_system_file(path) -> LtiSystem:
    """Read labeled ``A``, ``B``, ``C`` CSV blocks from one text file."""
    blocks: dict[str, list] = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text in ("A", "B", "C"):
                current = text
                blocks[current] = []
            elif current is not None:
                blocks[current].append((lineno, raw))
    missing = [k for k in "ABC" if k not in blocks]
    if missing:
        raise ParseError(f"{path}: missing system blocks {missing}")
    return LtiSystem(*(parse_matrix_lines(blocks[k], label=k) for k in "ABC"))


@dataclass
class ExperimentConfig:
    system: str = "sea"
    N: int = 500
    L: int = 10
    alpha: str = "1"
    alpha_safety: float = 0.5
    noise_kind: str = "gaussian"
    sigma_w: float = 0.002
    sigma_v: float = 0.002
    sigma_chi: float = 0.01
    sigma_u: float = 10.0
    sigma_x0: float = 1.0
    tune_sigma_w: float = 0.0
    tune_sigma_v: float = 0.0
    collection_mode: str = "restart"
    gap: int = 0
    excitation: str = "sinusoid"
    sin_amp: float = 5.0
    sin_freq: float = 0.2
    online_sigma_u: float = 1.0
    online_sigma_x0: float = 1.0
    trials: int = 50
    horizon_T: int = 100
    k_lo: int = 11
    k_hi: int = 100
    seed: int = 0
    sweep_N: list = field(default_factory=list)
    sweep_sigma: list = field(default_factory=list)
    eps: float = 0.0
    theta: float = 0.05
    pi_trials: int = 100

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.horizon_T < self.L + 1:
            raise InvalidInputError("horizon_T must be >= L + 1")
        if any(v <= 0 for v in list(self.sweep_N) + list(self.sweep_sigma)):
            raise InvalidInputError("sweep values must be positive")
        if self.alpha != "auto":
            try:
                ok = float(self.alpha) > 0
            except ValueError:
                ok = False
            if not ok:
                raise InvalidInputError(f"alpha must be a positive number or 'auto', got {self.alpha!r}")
        if self.excitation not in ("sinusoid", "gaussian"):
            raise InvalidInputError(f"unknown excitation {self.excitation!r}")

    def noise(self, sigma: float | None = None) -> NoiseSpec:
        sw = self.sigma_w if sigma is None else sigma
        sv = self.sigma_v if sigma is None else sigma
        return NoiseSpec(kind=self.noise_kind, sigma_w=sw, sigma_v=sv,
                         sigma_chi=self.sigma_chi, sigma_u=self.sigma_u,
                         sigma_x0=self.sigma_x0)

    def tuning(self, noise: NoiseSpec) -> tuple[float, float]:
        """Estimator-side (sigma_w, sigma_v); falls back to 0.002 for noiseless data."""
        sw = self.tune_sigma_w or noise.sigma_w or 0.002
        sv = self.tune_sigma_v or noise.sigma_v or 0.002
        return sw, sv

    def build_system(self) -> LtiSystem:
        if self.system == "sea":
            return sea_system()
        if self.system == "scalar":
            return scalar_system()
        if self.system.startswith("file:"):
            return load_system_file(self.system[len("file:"):])
        raise InvalidInputError(f"unknown system {self.system!r}")


_LIST_KEYS = {"sweep_N": int, "sweep_sigma": float}


def config_types() -> dict[str, type]:
    types = {}
    for f in fields(ExperimentConfig):
        default = ExperimentConfig.__dataclass_fields__[f.name].default
        types[f.name] = type(default) if f.name not in _LIST_KEYS else list
    return types


def coerce_value(key: str, text: str) -> Any:
    types = config_types()
    if key not in types:
        raise ParseError(f"unknown config key {key!r}")
    text = text.strip()
    if key in _LIST_KEYS:
        return [_LIST_KEYS[key](tok) for tok in text.replace(" ", "").split(",") if tok]
    try:
        return types[key](text)
    except ValueError:
        raise ParseError(f"config key {key!r}: cannot parse {text!r}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"config line {lineno}: expected key = value")
        values[key.strip()] = coerce_value(key.strip(), val)
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    values.update(overrides or {})
    return ExperimentConfig(**values)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, list):
            val = ",".join(repr(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# seeds and trajectories


def collection_seed(cfg: ExperimentConfig, trial: int) -> int:
    return cfg.seed + 1000 * trial


def online_seed(cfg: ExperimentConfig, trial: int) -> int:
    return cfg.seed + 1000 * trial + 500


def online_inputs(cfg: ExperimentConfig, m: int, seed: int) -> np.ndarray:
    k = np.arange(cfg.horizon_T)[:, None]
    if cfg.excitation == "sinusoid":
        phase = (math.pi / 2) * np.arange(m)[None, :]
        return cfg.sin_amp * np.sin(cfg.sin_freq * k + phase)
    return role_rng(seed, "u").normal(0.0, cfg.online_sigma_u, size=(cfg.horizon_T, m))


def online_trajectory(cfg: ExperimentConfig, sys: LtiSystem, noise: NoiseSpec,
                      trial: int) -> Trajectory:
    seed = online_seed(cfg, trial)
    x0 = role_rng(seed, "x0").normal(0.0, cfg.online_sigma_x0, size=sys.n)
    online_noise = NoiseSpec(kind=noise.kind, sigma_w=noise.sigma_w, sigma_v=noise.sigma_v)
    return simulate(sys, x0, online_inputs(cfg, sys.m, seed), online_noise, seed)


def collect(cfg: ExperimentConfig, sys: LtiSystem, noise: NoiseSpec, N: int,
            trial: int) -> OfflineDataset:
    return collect_offline(sys, N, cfg.L, noise, gap=cfg.gap or None,
                           seed=collection_seed(cfg, trial), mode=cfg.collection_mode)


def resolve_alpha(cfg: ExperimentConfig, ds: OfflineDataset, tuning: tuple[float, float]) -> float:
    if cfg.alpha != "auto":
        return float(cfg.alpha)
    # Gamma* and Lambda*'s alpha-free part only need G*, F*: fit once with alpha=1.
    probe = fit_ddmhe(ds, 1.0, *tuning)
    return analysis.choose_alpha(probe.Gstar, probe.Fstar, cfg.L, *tuning, cfg.alpha_safety)


@dataclass
class TrialResult:
    trial: int
    N: int
    sigma: float
    alpha: float
    mse_dd: float
    mse_mb: float
    gap: float
    delta_G: float
    delta_H: float
    delta_Phi: float
    times: np.ndarray
    truth: np.ndarray
    est_dd: np.ndarray
    est_mb: np.ndarray


def run_trial(cfg: ExperimentConfig, sys: LtiSystem, N: int, sigma: float,
              trial: int) -> TrialResult:
    """Fresh dataset and online run; both estimators see identical data."""
    noise = cfg.noise(sigma)
    tuning = cfg.tuning(noise)
    ds = collect(cfg, sys, noise, N, trial)
    alpha = resolve_alpha(cfg, ds, tuning)
    dd = fit_ddmhe(ds, alpha, *tuning)
    mb = fit_mbmhe(sys, cfg.L, alpha, *tuning)
    traj = online_trajectory(cfg, sys, noise, trial)
    times, est_dd = run_estimation(dd, traj)
    _, est_mb = run_estimation(mb, traj)
    truth = traj.states[times - cfg.L]
    start = cfg.L
    lo, hi = cfg.k_lo - start, cfg.k_hi - start
    gap = float(np.mean(np.linalg.norm(est_dd[lo : hi + 1] - est_mb[lo : hi + 1], axis=1)))
    d_phi, d_g, d_h = analysis.learning_errors(dd, sys)
    return TrialResult(
        trial=trial, N=N, sigma=sigma, alpha=alpha,
        mse_dd=analysis.mse(truth, est_dd, cfg.k_lo, cfg.k_hi, start=start),
        mse_mb=analysis.mse(truth, est_mb, cfg.k_lo, cfg.k_hi, start=start),
        gap=gap, delta_G=d_g, delta_H=d_h, delta_Phi=d_phi,
        times=times, truth=truth, est_dd=est_dd, est_mb=est_mb,
    )


@dataclass
class CellSummary:
    N: int
    sigma: float
    trials: int
    amse_dd: float
    amse_mb: float
    mean_gap: float
    median_delta_G: float
    median_delta_H: float
    median_delta_Phi: float


def summarize_cell(results: list[TrialResult]) -> CellSummary:
    return CellSummary(
        N=results[0].N,
        sigma=results[0].sigma,
        trials=len(results),
        amse_dd=analysis.amse([r.mse_dd for r in results]),
        amse_mb=analysis.amse([r.mse_mb for r in results]),
        mean_gap=float(np.mean([r.gap for r in results])),
        median_delta_G=float(np.median([r.delta_G for r in results])),
        median_delta_H=float(np.median([r.delta_H for r in results])),
        median_delta_Phi=float(np.median([r.delta_Phi for r in results])),
    )


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[int, float]]:
    Ns = cfg.sweep_N or [cfg.N]
    sigmas = cfg.sweep_sigma or [cfg.sigma_w]
    return [(N, s) for s in sigmas for N in Ns]


def run_sweep(cfg: ExperimentConfig, sys: LtiSystem | None = None):
    """Run every (N, sigma) cell; returns (metric rows, cell summaries)."""
    sys = sys or cfg.build_system()
    rows: list[analysis.MetricRow] = []
    cells: list[CellSummary] = []
    for N, sigma in sweep_cells(cfg):
        results = [run_trial(cfg, sys, N, sigma, j) for j in range(cfg.trials)]
        for r in results:
            rows.append(analysis.MetricRow("ddmhe", r.trial, N, sigma, sigma, r.mse_dd))
            rows.append(analysis.MetricRow("mbmhe", r.trial, N, sigma, sigma, r.mse_mb))
        cells.append(summarize_cell(results))
    return rows, cells


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)


def pi_estimates(cfg: ExperimentConfig, sys: LtiSystem, noise: NoiseSpec) -> tuple[float, float]:
    trajs = [online_trajectory(cfg, sys, noise, j) for j in range(cfg.pi_trials)]
    return analysis.estimate_pi_bounds(trajs)


def bound_report(cfg: ExperimentConfig, sys: LtiSystem | None, ds: OfflineDataset) -> analysis.BoundReport:
    """Assemble every closed-form constant for one dataset.

    With ``sys`` given, truth-dependent norms use the plant and learning
    errors are measured; otherwise learned surrogates are used.
    """
    noise = ds.noise
    tuning = cfg.tuning(noise)
    alpha = resolve_alpha(cfg, ds, tuning)
    params = fit_ddmhe(ds, alpha, *tuning)
    if sys is not None:
        from ddmhe.lti import build_stacked_operators

        G = build_stacked_operators(sys, ds.L).G
        eps0 = analysis.epsilon0(G, ds.L, ds.p, ds.n)
    else:
        eps0 = analysis.epsilon0_from_phi1(params.Phi1)
    eps = cfg.eps if cfg.eps > 0 else eps0 / 2
    if sys is not None:
        sc = analysis.sample_complexity_n0(eps, cfg.theta, sys, ds.L, noise)
        mb = fit_mbmhe(sys, ds.L, alpha, *tuning)
        c1m = analysis.c1_model_based(mb)
        d_phi, d_g, d_h = analysis.learning_errors(params, sys)
        pi1, pi2 = pi_estimates(cfg, sys, noise)
        source = "model"
    else:
        sc = analysis.sample_complexity_n0_surrogate(eps, cfg.theta, params, noise)
        c1m = float("nan")
        d_phi = d_g = d_h = None
        pi1 = pi2 = float("nan")
        source = "surrogate"
    noiseless = noise.sigma_w == 0 and noise.sigma_v == 0 and noise.sigma_chi == 0
    # Noiseless data make the fit exact, so the learning-error certificate is 0.
    eps_c2 = 0.0 if noiseless else eps
    sigma_noise = max(noise.sigma_w, noise.sigma_v, noise.sigma_chi)
    consts = analysis.error_bound_constants(
        params, eps_c2, pi1 if math.isfinite(pi1) else 0.0, pi2 if math.isfinite(pi2) else 0.0,
        sigma_noise, sigma_w_true=noise.sigma_w,
    )
    return analysis.BoundReport(
        eps=eps, theta=cfg.theta, eps0=sc.eps0, N0=sc.N0, M0=sc.M0, M1=sc.M1,
        sigma_max=sc.sigma_max, sigma_min=sc.sigma_min,
        c1=consts.c1, c2=consts.c2, c1m=c1m, eps_bound=eps_c2, ultimate_bound=consts.ultimate_bound,
        contraction=consts.contraction, delta_G=d_g, delta_H=d_h, delta_Phi=d_phi,
        pi1=pi1, pi2=pi2, alpha=alpha, N=ds.N, meets_N0=ds.N >= sc.N0, source=source,
    )


__all__ = [
    "ExperimentConfig",
    "DdmheParams",
    "SWEEP_N",
    "SWEEP_SIGMA",
    "bound_report",
    "load_config",
    "run_sweep",
    "run_trial",
    "scalar_system",
    "sea_system",
]
