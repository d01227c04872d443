"""Finite-sample constants, error bounds and evaluation metrics.

Everything here is a closed-form evaluation or a Monte Carlo frequency
check; nothing feeds back into the estimators themselves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from ddmhe.errors import DegeneracyError, DomainError, InvalidInputError, ParseError
from ddmhe.estimators import DdmheParams, MbmheParams, mhe_gains
from ddmhe.lti import LtiSystem, NoiseSpec, build_stacked_operators
from ddmhe.numerics import block, min_eig_sym, pinv, rank, spectral_norm


@dataclass
class BoundReport:
    """Computable constants of the finite-sample analysis.

    ``source`` says whether truth-dependent norms came from the true plant
    (``"model"``) or from learned surrogates (``"surrogate"``).
    """

    eps: float
    theta: float
    eps0: float
    N0: float
    M0: float
    M1: float
    sigma_max: float
    sigma_min: float
    c1: float
    c2: float
    c1m: float
    eps_bound: float
    ultimate_bound: float | None
    contraction: bool
    delta_G: float | None
    delta_H: float | None
    delta_Phi: float | None
    pi1: float
    pi2: float
    alpha: float
    N: int
    meets_N0: bool
    source: str = "model"

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, float):
                val = repr(val)
            elif val is None:
                val = "none"
            lines.append(f"{f.name}={val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BoundReport":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ParseError(f"line {lineno}: expected key=value")
            raw[key] = val
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                raise ParseError(f"missing key {f.name!r}")
            val = raw[f.name]
            if val == "none":
                kwargs[f.name] = None
            elif val in ("True", "False"):
                kwargs[f.name] = val == "True"
            elif f.name in ("N",):
                kwargs[f.name] = int(val)
            elif f.name == "source":
                kwargs[f.name] = val
            else:
                kwargs[f.name] = float(val)
        return cls(**kwargs)


@dataclass(frozen=True)
class MetricRow:
    method: str
    trial: int
    N: int
    sigma_w: float
    sigma_v: float
    mse: float

    def __post_init__(self):
        if not self.mse >= 0:
            raise InvalidInputError(f"mse must be nonnegative, got {self.mse}")


METRIC_HEADER = ("method", "trial", "N", "sigma_w", "sigma_v", "mse")


def write_metric_rows(rows: Iterable[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_HEADER)
        for r in rows:
            writer.writerow([r.method, r.trial, r.N, repr(r.sigma_w), repr(r.sigma_v), repr(r.mse)])


def read_metric_rows(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[: len(METRIC_HEADER)]) != METRIC_HEADER:
            raise ParseError(f"{path}: expected header {','.join(METRIC_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(MetricRow(rec[0], int(rec[1]), int(rec[2]),
                                      float(rec[3]), float(rec[4]), float(rec[5])))
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return rows


# ---------------------------------------------------------------------------
# sample complexity


def _phi1(G: np.ndarray, L: int, p: int, n: int) -> np.ndarray:
    return block(G, 1, L * p, 1, n)


def epsilon0_from_phi1(Phi1) -> float:
    Phi1 = np.atleast_2d(np.asarray(Phi1, dtype=float))
    if rank(Phi1) < Phi1.shape[1]:
        raise DegeneracyError("Phi1 is not of full column rank")
    a = spectral_norm(Phi1)
    lam = min_eig_sym(Phi1.T @ Phi1)
    return math.sqrt(a * a + lam) - a


def epsilon0(G, L: int, p: int, n: int) -> float:
    """Largest learning accuracy for which the sample-complexity bound is defined."""
    return epsilon0_from_phi1(_phi1(np.asarray(G, dtype=float), L, p, n))


def n0_formula(eps: float, theta: float, L: int, M0: float, M1: float) -> float:
    return 16 * L**2 + (16 * L**2 + (M1**2 + 1) * M0**2 / eps**2) * math.log(324 / theta)


@dataclass(frozen=True)
class SampleComplexity:
    N0: float
    M0: float
    M1: float
    sigma_max: float
    sigma_min: float
    eps0: float


def noise_extremes(noise: NoiseSpec) -> tuple[float, float]:
    """(sigma_max, sigma_min) over the collection noise levels."""
    smax = max(noise.sigma_w, noise.sigma_v, noise.sigma_u, noise.sigma_x0, noise.sigma_chi)
    smin = min(noise.sigma_u, noise.sigma_x0)
    return smax, smin


def _n0_core(eps, theta, L, norm_F, norm_G, norm_AB, Phi1, noise) -> SampleComplexity:
    if not 0 < theta < 1:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    e0 = epsilon0_from_phi1(Phi1)
    if not 0 < eps < e0:
        raise DomainError(f"eps={eps} must lie in (0, eps0={e0})")
    smax, smin = noise_extremes(noise)
    if smin <= 0:
        raise DomainError("sigma_min = min(sigma_u, sigma_x0) must be positive")
    a = spectral_norm(Phi1)
    lam = min_eig_sym(Phi1.T @ Phi1)
    M0 = 48 * L * smax**2 / smin**2 * (norm_F + norm_G + 1)
    M1 = (norm_AB + 2) / math.sqrt(lam - eps**2 - 2 * eps * a)
    return SampleComplexity(n0_formula(eps, theta, L, M0, M1), M0, M1, smax, smin, e0)


def sample_complexity_n0(eps: float, theta: float, sys: LtiSystem, L: int,
                         noise: NoiseSpec) -> SampleComplexity:
    """Sufficient offline sample count N0(eps, theta) from the true plant."""
    ops = build_stacked_operators(sys, L)
    return _n0_core(
        eps, theta, L,
        norm_F=spectral_norm(ops.F),
        norm_G=spectral_norm(ops.G),
        norm_AB=spectral_norm(sys.A) + spectral_norm(sys.B),
        Phi1=_phi1(ops.G, L, sys.p, sys.n),
        noise=noise,
    )


def sample_complexity_n0_surrogate(eps: float, theta: float, params: DdmheParams,
                                   noise: NoiseSpec) -> SampleComplexity:
    """Same bound with learned quantities in place of the unknown plant norms."""
    L = params.L
    return _n0_core(
        eps, theta, L,
        norm_F=spectral_norm(params.Fstar) + math.sqrt(L) * eps,
        norm_G=spectral_norm(params.Gstar) + eps,
        norm_AB=spectral_norm(np.hstack([params.Astar, params.Bstar])) + eps,
        Phi1=params.Phi1,
        noise=noise,
    )


def n0_decreasing_limit(G, L: int, p: int, n: int) -> float:
    """Accuracy below which N0 is guaranteed to decrease as eps grows.

    N0 depends on eps through (M1^2 + 1) / eps^2 with
    M1^2 proportional to 1 / (lam - eps^2 - 2 a eps), which blows up at eps0.
    The product eps^2 (lam - eps^2 - 2 a eps) increases up to the root of
    2 eps^2 + 3 a eps = lam, so N0 is strictly decreasing at least there.
    """
    Phi1 = _phi1(np.asarray(G, dtype=float), L, p, n)
    a = spectral_norm(Phi1)
    lam = min_eig_sym(Phi1.T @ Phi1)
    return (-3 * a + math.sqrt(9 * a * a + 8 * lam)) / 4


def learning_errors(params: DdmheParams, sys: LtiSystem, L: int | None = None):
    """Spectral norms (delta_Phi, delta_G, delta_H) against the true plant."""
    L = params.L if L is None else L
    ops = build_stacked_operators(sys, L)
    if params.Gstar.shape != ops.G.shape or params.Hstar.shape != ops.H.shape:
        raise InvalidInputError("learned and true operators have different shapes")
    d_phi = spectral_norm(np.hstack([params.Astar - sys.A, params.Bstar - sys.B]))
    return d_phi, spectral_norm(params.Gstar - ops.G), spectral_norm(params.Hstar - ops.H)


# ---------------------------------------------------------------------------
# error bound constants


@dataclass(frozen=True)
class BoundConstants:
    c1: float
    c2: float
    ultimate_bound: float | None

    @property
    def contraction(self) -> bool:
        return self.c1 < 1


def contraction_factor(alpha1: float, Lam, A_prior) -> float:
    return alpha1 * spectral_norm(np.asarray(Lam) @ np.asarray(A_prior))


def error_bound_constants(params: DdmheParams, eps: float, pi1: float, pi2: float,
                          sigma_max: float, sigma_w_true: float | None = None) -> BoundConstants:
    """c1, c2 and the ultimate bound c2 / (1 - c1) on E||e||.

    ``sigma_w_true`` is the actual process noise level (defaults to the
    tuning value stored in ``params``). When c1 >= 1 no bound is returned.
    """
    n, p, L = params.n, params.p, params.L
    sw = params.sigma_w if sigma_w_true is None else sigma_w_true
    Lam = params.Lambda_star
    c1 = contraction_factor(params.alpha1, Lam, pinv(params.Phi1) @ params.Phi2)
    fnorm = spectral_norm(params.Fstar)
    noise_term = sigma_max * math.sqrt((math.sqrt(L) * eps + fnorm) ** 2 * L * n + 2 * (L + 1) * p)
    model_term = eps * (params.alpha1 + spectral_norm(params.Gamma_star)) * (
        math.sqrt(pi1) + math.sqrt(pi2)
    )
    c2 = (params.alpha1 * sw * math.sqrt(n) + noise_term + model_term) * spectral_norm(Lam)
    bound = c2 / (1 - c1) if c1 < 1 else None
    return BoundConstants(c1=c1, c2=c2, ultimate_bound=bound)


def c1_model_based(mb: MbmheParams) -> float:
    return contraction_factor(mb.alpha1, mb.Lambda, mb.A)


def alpha_rule(norm_P: float, lam_min: float, sigma_v: float, safety: float) -> float:
    """alpha = safety * lam_min / ((norm_P - 1) sigma_v^2), or 1 when norm_P <= 1."""
    if not 0 < safety < 1:
        raise InvalidInputError("safety must lie in (0, 1)")
    if norm_P <= 1:
        return 1.0
    if lam_min <= 0:
        raise DegeneracyError(
            "no contraction guarantee: lambda_min(Gamma* G*) <= 0 while ||Phi1^+ Phi2|| > 1"
        )
    return safety * lam_min / ((norm_P - 1) * sigma_v**2)


def choose_alpha(Gstar, Fstar, L: int, sigma_w: float, sigma_v: float,
                 safety: float = 0.5) -> float:
    """Prior weight alpha that guarantees c1 < 1.

    Uses ||Lambda* P|| <= ||P|| / (alpha1 + lambda_min(Gamma* G*)) with
    P = Phi1^+ Phi2; Gamma* does not depend on alpha.
    """
    Gstar = np.asarray(Gstar, dtype=float)
    n = Gstar.shape[1]
    p = Gstar.shape[0] // (L + 1)
    alpha2 = sigma_v**2 / sigma_w**2
    Gamma, _ = mhe_gains(Gstar, np.asarray(Fstar, dtype=float), 1.0, alpha2)
    GG = Gamma @ Gstar
    lam = min_eig_sym(0.5 * (GG + GG.T))
    P = pinv(block(Gstar, 1, L * p, 1, n)) @ block(Gstar, p + 1, L * p + p, 1, n)
    return alpha_rule(spectral_norm(P), lam, sigma_v, safety)


# ---------------------------------------------------------------------------
# metrics


def mse(truth, est, k_lo: int = 11, k_hi: int = 100, start: int = 0) -> float:
    """Mean of ||truth_k - est_k||^2 for k in [k_lo, k_hi].

    Row j of ``truth`` and ``est`` corresponds to k = start + j.
    """
    X = np.asarray(truth, dtype=float)
    Xh = np.asarray(est, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Xh.ndim == 1:
        Xh = Xh[:, None]
    if k_lo > k_hi:
        raise InvalidInputError(f"empty window [{k_lo}, {k_hi}]")
    lo, hi = k_lo - start, k_hi - start
    if lo < 0 or hi >= min(X.shape[0], Xh.shape[0]):
        raise InvalidInputError(
            f"window [{k_lo}, {k_hi}] not covered by data for k in "
            f"[{start}, {start + min(X.shape[0], Xh.shape[0]) - 1}]"
        )
    diff = X[lo : hi + 1] - Xh[lo : hi + 1]
    return float(np.mean(np.sum(diff**2, axis=1)))


def amse(rows: Sequence[MetricRow] | Sequence[float]) -> float:
    vals = [r.mse if isinstance(r, MetricRow) else float(r) for r in rows]
    if not vals:
        raise InvalidInputError("amse needs at least one row")
    return float(np.mean(vals))


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float

    def predict(self, N) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(N, dtype=float) ** self.slope


def decay_rate_fit(N, gap) -> PowerLawFit:
    """Least-squares fit of log(gap) = intercept + slope * log(N)."""
    N = np.asarray(N, dtype=float)
    gap = np.asarray(gap, dtype=float)
    if N.size < 3 or N.size != gap.size:
        raise InvalidInputError("decay_rate_fit needs at least 3 matched points")
    if np.any(gap <= 0) or np.any(N <= 0):
        raise InvalidInputError("N and gap values must be positive")
    x, y = np.log(N), np.log(gap)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    # flat data: the total variance is pure rounding
    flat = (1e-12 * max(1.0, float(np.max(np.abs(y))))) ** 2 * y.size
    if ss_tot <= flat:
        r2 = 1.0 if ss_res <= flat else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return PowerLawFit(float(slope), float(intercept), r2)


def estimate_pi_bounds(trajectories) -> tuple[float, float]:
    """Empirical (pi1, pi2): max over k of the mean squared state / input norm."""
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidInputError("estimate_pi_bounds needs at least one trajectory")

    def peak_mean(arrays):
        K = max(a.shape[0] for a in arrays)
        sums = np.zeros(K)
        counts = np.zeros(K)
        for a in arrays:
            sq = np.sum(np.asarray(a, dtype=float) ** 2, axis=1)
            sums[: sq.size] += sq
            counts[: sq.size] += 1
        return float(np.max(sums[counts > 0] / counts[counts > 0]))

    return (peak_mean([t.states for t in trajectories]),
            peak_mean([t.inputs for t in trajectories]))


# ---------------------------------------------------------------------------
# concentration inequalities


def cross_product_bound(m1: int, m2: int, N: int, sigma_phi: float, sigma_psi: float,
                        theta: float) -> float:
    return 4 * sigma_phi * sigma_psi * math.sqrt(N * (m1 + m2) * math.log(9 / theta))


def min_singular_value_bound(m: int, N: int, sigma_phi: float, theta: float) -> float:
    return sigma_phi * (math.sqrt(N) - math.sqrt(m) - math.sqrt(2 * math.log(1 / theta)))


def concentration_check(m1: int, m2: int, N: int, sigma_phi: float, sigma_psi: float,
                        theta: float, trials: int, seed: int = 0) -> float:
    """Empirical rate at which ||Phi Psi^T||_2 exceeds the cross-product bound."""
    if not 0 < theta < 1:
        raise DomainError("theta must lie in (0, 1)")
    if N < 2 * (m1 + m2) * math.log(1 / theta):
        raise DomainError(f"N={N} is below 2 (m1 + m2) log(1/theta)")
    rng = np.random.default_rng(seed)
    bound = cross_product_bound(m1, m2, N, sigma_phi, sigma_psi, theta)
    Phi = rng.normal(0.0, 1.0, size=(trials, m1, N)) * sigma_phi
    Psi = rng.normal(0.0, 1.0, size=(trials, m2, N)) * sigma_psi
    norms = np.linalg.norm(Phi @ np.swapaxes(Psi, 1, 2), ord=2, axis=(1, 2))
    return float(np.mean(norms > bound))


def concentration_check_min_sv(m: int, N: int, sigma_phi: float, theta: float,
                               trials: int, seed: int = 0) -> float:
    """Empirical rate at which lambda_min(Phi Phi^T)^{1/2} falls below its bound."""
    if not 0 < theta < 1:
        raise DomainError("theta must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    bound = min_singular_value_bound(m, N, sigma_phi, theta)
    Phi = rng.normal(0.0, 1.0, size=(trials, m, N)) * sigma_phi
    lam = np.linalg.eigvalsh(Phi @ np.swapaxes(Phi, 1, 2))[:, 0]
    return float(np.mean(np.sqrt(np.clip(lam, 0.0, None)) < bound))


def report_dict(report: BoundReport) -> dict:
    return asdict(report)
