"""Shared fixtures-by-import for the slow Monte Carlo runs."""

import time
from functools import lru_cache

import numpy as np

from ddmhe.estimators import fit_ddmhe
from ddmhe.experiments import SWEEP_N, SWEEP_SIGMA, ExperimentConfig, run_sweep, sea_system
from ddmhe.lti import LtiSystem, NoiseSpec
from ddmhe.offline import collect_offline

# lines printed in the terminal summary, one per acceptance criterion
ACCEPTANCE_LINES: list[str] = []

NOISY = NoiseSpec(sigma_w=0.01, sigma_v=0.01, sigma_chi=0.01, sigma_u=10.0, sigma_x0=1.0)


def random_fitted_instance(seed):
    """Random stable plant (n <= 3, L <= 4) and a DDMHE fitted on noisy data."""
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 4))
    m = int(g.integers(1, 3))
    p = int(g.integers(1, 3))
    L = int(g.integers(max(n, m, p), 5))
    A = g.normal(size=(n, n))
    A *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    sys = LtiSystem(A, g.normal(size=(n, m)), g.normal(size=(p, n)))
    ds = collect_offline(sys, 10 * (n + L * m), L, NOISY, seed=seed, mode="restart")
    return sys, fit_ddmhe(ds, alpha=float(g.uniform(0.1, 10.0))), g


@lru_cache(maxsize=None)
def n_sweep():
    """Default grid over N at sigma = 0.002 with 50 trials per cell: (rows, cells, seconds)."""
    cfg = ExperimentConfig(sweep_N=list(SWEEP_N), sweep_sigma=[0.002], trials=50)
    t0 = time.perf_counter()
    rows, cells = run_sweep(cfg, sea_system())
    return rows, cells, time.perf_counter() - t0


@lru_cache(maxsize=None)
def noise_sweep():
    """N = 500 at the three default noise levels, 50 trials each: (rows, cells, seconds)."""
    cfg = ExperimentConfig(N=500, sweep_N=[500], sweep_sigma=list(SWEEP_SIGMA), trials=50)
    t0 = time.perf_counter()
    rows, cells = run_sweep(cfg, sea_system())
    return rows, cells, time.perf_counter() - t0
