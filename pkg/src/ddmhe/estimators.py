"""Data-driven MHE (learned from an offline dataset) and the model-based MHE.

Both estimators share one recursion. At time t the window holds
u_[t-L, t-1] and y_[t-L, t]; the posterior estimate of x_{t-L} is

    xhat = Lambda (alpha1 * xbar + Gamma (y_win - H u_win))

with Gamma = alpha2 G^T (alpha2 I + F F^T)^{-1}, Lambda = (alpha1 I + Gamma G)^{-1},
alpha1 = alpha sigma_v^2 and alpha2 = sigma_v^2 / sigma_w^2. The prior for the
next step is xbar' = A xhat + B u_{t-L}.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from ddmhe.errors import (
    AssumptionViolation,
    DegeneracyError,
    InvalidInputError,
    ParseError,
    StateError,
)
from ddmhe.lti import LtiSystem, Trajectory, build_stacked_operators, check_observability
from ddmhe.numerics import block, format_row, parse_matrix_lines, pinv, rank
from ddmhe.offline import OfflineDataset, check_persistent_excitation


@dataclass(frozen=True)
class DdmheParams:
    Gstar: np.ndarray
    Hstar: np.ndarray
    Fstar: np.ndarray
    Phi1: np.ndarray
    Phi2: np.ndarray
    Phi3: np.ndarray
    Gamma_star: np.ndarray
    Lambda_star: np.ndarray
    Astar: np.ndarray
    Bstar: np.ndarray
    Cstar: np.ndarray
    alpha: float
    alpha1: float
    alpha2: float
    sigma_w: float
    sigma_v: float
    L: int

    @property
    def n(self) -> int:
        return self.Gstar.shape[1]

    @property
    def m(self) -> int:
        return self.Hstar.shape[1] // self.L

    @property
    def p(self) -> int:
        return self.Gstar.shape[0] // (self.L + 1)


@dataclass(frozen=True)
class MbmheParams:
    G: np.ndarray
    H: np.ndarray
    F: np.ndarray
    Gamma: np.ndarray
    Lambda: np.ndarray
    A: np.ndarray
    B: np.ndarray
    alpha: float
    alpha1: float
    alpha2: float
    sigma_w: float
    sigma_v: float
    L: int

    @property
    def n(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class EstimatorState:
    """Prior estimate plus the sliding input/output windows.

    ``u_window`` has one input per row (at most L rows), ``y_window`` one
    output per row (at most L+1 rows). ``t`` is the time index of the newest
    output in the window.
    """

    xbar: np.ndarray
    u_window: np.ndarray
    y_window: np.ndarray
    t: int
    L: int

    @classmethod
    def start(cls, xbar, inputs, outputs, L: int) -> "EstimatorState":
        """State primed with u_0..u_{L-2} and y_0..y_{L-1}.

        The first ``step`` then pushes u_{L-1}, y_L and estimates x_0.
        """
        U = np.asarray(inputs, dtype=float)
        Y = np.asarray(outputs, dtype=float)
        return cls(
            xbar=np.asarray(xbar, dtype=float).ravel(),
            u_window=U[: L - 1].copy(),
            y_window=Y[:L].copy(),
            t=L - 1,
            L=L,
        )

    def push(self, y_t, u_prev) -> "EstimatorState":
        u = np.asarray(u_prev, dtype=float).reshape(1, -1)
        y = np.asarray(y_t, dtype=float).reshape(1, -1)
        U = np.vstack([self.u_window, u]) if self.u_window.size else u
        Y = np.vstack([self.y_window, y]) if self.y_window.size else y
        return replace(self, u_window=U[-self.L :], y_window=Y[-(self.L + 1) :], t=self.t + 1)

    @property
    def full(self) -> bool:
        return self.u_window.shape[0] == self.L and self.y_window.shape[0] == self.L + 1


def mhe_gains(G: np.ndarray, F: np.ndarray, alpha1: float, alpha2: float):
    """Return (Gamma, Lambda) without forming explicit inverses of the SPD factors."""
    rows = F.shape[0]
    try:
        K = sla.cho_factor(alpha2 * np.eye(rows) + F @ F.T)
        # K is symmetric, so G^T K^{-1} = (K^{-1} G)^T
        Gamma = alpha2 * sla.cho_solve(K, G).T
        GG = Gamma @ G
        GG = 0.5 * (GG + GG.T)
        n = G.shape[1]
        Lam = sla.cho_solve(sla.cho_factor(alpha1 * np.eye(n) + GG), np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(f"MHE gain factorization failed: {exc}") from None
    return Gamma, 0.5 * (Lam + Lam.T)


def assemble_fstar(Gstar: np.ndarray, n: int, p: int, L: int) -> np.ndarray:
    """Lower block-Toeplitz F built from the learned Markov blocks in G*."""
    Fstar = np.zeros(((L + 1) * p, L * n))
    for h in range(1, L + 1):
        Fstar[h * p : (L + 1) * p, (h - 1) * n : h * n] = block(
            Gstar, 1, L * p - h * p + p, 1, n
        )
    return Fstar


def _tuning_sigmas(sigma_w, sigma_v, ds: OfflineDataset | None = None):
    sw = ds.noise.sigma_w if sigma_w is None and ds is not None else sigma_w
    sv = ds.noise.sigma_v if sigma_v is None and ds is not None else sigma_v
    if sw is None or sv is None or not (sw > 0 and sv > 0):
        raise InvalidInputError(
            "estimator tuning needs sigma_w > 0 and sigma_v > 0 "
            f"(got sigma_w={sw}, sigma_v={sv})"
        )
    return float(sw), float(sv)


def fit_ddmhe(
    ds: OfflineDataset,
    alpha: float,
    sigma_w: float | None = None,
    sigma_v: float | None = None,
) -> DdmheParams:
    """Learn the DDMHE matrices from an offline dataset.

    ``sigma_w``/``sigma_v`` are tuning values; they default to the levels
    recorded in the dataset.
    """
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    sw, sv = _tuning_sigmas(sigma_w, sigma_v, ds)
    if not check_persistent_excitation(ds):
        raise AssumptionViolation(
            "persistent excitation fails: rank [X0bar; Up] < n + L m"
        )
    n, m, p, L = ds.n, ds.m, ds.p, ds.L
    GH = ds.Yp @ pinv(ds.regressor)
    Gstar, Hstar = GH[:, :n], GH[:, n:]
    Fstar = assemble_fstar(Gstar, n, p, L)

    Phi1 = block(Gstar, 1, L * p, 1, n)
    Phi2 = block(Gstar, p + 1, L * p + p, 1, n)
    Phi3 = block(Hstar, p + 1, L * p + p, 1, m)
    if rank(Phi1) < n:
        raise DegeneracyError("learned Phi1 = G*(1:Lp; 1:n) is not of full column rank")
    AB = pinv(Phi1) @ np.hstack([Phi2, Phi3])

    alpha1 = alpha * sv**2
    alpha2 = sv**2 / sw**2
    Gamma, Lam = mhe_gains(Gstar, Fstar, alpha1, alpha2)
    return DdmheParams(
        Gstar=Gstar,
        Hstar=Hstar,
        Fstar=Fstar,
        Phi1=Phi1,
        Phi2=Phi2,
        Phi3=Phi3,
        Gamma_star=Gamma,
        Lambda_star=Lam,
        Astar=AB[:, :n],
        Bstar=AB[:, n:],
        Cstar=block(Gstar, 1, p, 1, n).copy(),
        alpha=float(alpha),
        alpha1=alpha1,
        alpha2=alpha2,
        sigma_w=sw,
        sigma_v=sv,
        L=L,
    )


def fit_mbmhe(sys: LtiSystem, L: int, alpha: float, sigma_w: float, sigma_v: float) -> MbmheParams:
    """Model-based MHE using the true plant matrices."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    sw, sv = _tuning_sigmas(sigma_w, sigma_v)
    if not check_observability(sys):
        raise AssumptionViolation("(C, A) is not observable")
    if L < sys.n:
        raise AssumptionViolation(f"model-based MHE needs L >= n = {sys.n}, got L={L}")
    ops = build_stacked_operators(sys, L)
    alpha1 = alpha * sv**2
    alpha2 = sv**2 / sw**2
    Gamma, Lam = mhe_gains(ops.G, ops.F, alpha1, alpha2)
    return MbmheParams(
        G=ops.G, H=ops.H, F=ops.F, Gamma=Gamma, Lambda=Lam, A=sys.A, B=sys.B,
        alpha=float(alpha), alpha1=alpha1, alpha2=alpha2, sigma_w=sw, sigma_v=sv, L=L,
    )


def _operators(params):
    if isinstance(params, DdmheParams):
        return (params.Hstar, params.Gamma_star, params.Lambda_star,
                params.Astar, params.Bstar, params.alpha1)
    if isinstance(params, MbmheParams):
        return params.H, params.Gamma, params.Lambda, params.A, params.B, params.alpha1
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def _step(params, state: EstimatorState, y_t, u_prev):
    H, Gamma, Lam, A, B, alpha1 = _operators(params)
    L = params.L
    y_t = np.asarray(y_t, dtype=float).ravel()
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    if y_t.size * (L + 1) != H.shape[0] or u_prev.size * L != H.shape[1]:
        raise InvalidInputError(
            f"step got y of size {y_t.size} and u of size {u_prev.size}, "
            f"expected {H.shape[0] // (L + 1)} and {H.shape[1] // L}"
        )
    new = state.push(y_t, u_prev)
    if not new.full:
        raise StateError(
            f"window underfull at t={new.t}: have {new.u_window.shape[0]} inputs and "
            f"{new.y_window.shape[0]} outputs, need {state.L} and {state.L + 1}"
        )
    z = new.y_window.ravel()
    u = new.u_window.ravel()
    xhat = Lam @ (alpha1 * new.xbar + Gamma @ (z - H @ u))
    xbar_next = A @ xhat + B @ new.u_window[0]
    return xhat, replace(new, xbar=xbar_next)


def ddmhe_step(params: DdmheParams, state: EstimatorState, y_t, u_prev):
    """Push (u_{t-1}, y_t), return (xhat_{t-L|t}, next state)."""
    return _step(params, state, y_t, u_prev)


def mbmhe_step(params: MbmheParams, state: EstimatorState, y_t, u_prev):
    """Model-based counterpart of :func:`ddmhe_step`."""
    return _step(params, state, y_t, u_prev)


def oracle_online_solve(Gx, Hx, Fx, xbar, u_window, y_window, alpha, sigma_w, sigma_v):
    """Minimize the online MHE cost directly as one regularized least squares.

    Decision vector is (xhat, w_window); the measurement residual
    y - G xhat - H u - F w plays the role of the eliminated v_window. The
    normal equations of the stacked weighted system are solved densely.
    """
    G = np.asarray(Gx, dtype=float)
    H = np.asarray(Hx, dtype=float)
    F = np.asarray(Fx, dtype=float)
    xbar = np.asarray(xbar, dtype=float).ravel()
    y = np.asarray(y_window, dtype=float).ravel()
    u = np.asarray(u_window, dtype=float).ravel()
    n, nw = G.shape[1], F.shape[1]
    if y.size != G.shape[0] or u.size != H.shape[1] or xbar.size != n:
        raise InvalidInputError("oracle inputs have inconsistent dimensions")
    r = y - H @ u
    sa = np.sqrt(alpha)
    D = np.block([
        [sa * np.eye(n), np.zeros((n, nw))],
        [np.zeros((nw, n)), np.eye(nw) / sigma_w],
        [G / sigma_v, F / sigma_v],
    ])
    b = np.concatenate([sa * xbar, np.zeros(nw), r / sigma_v])
    normal = D.T @ D
    try:
        z = np.linalg.solve(normal, D.T @ b)
    except np.linalg.LinAlgError:
        raise DegeneracyError("singular normal matrix in online least squares") from None
    return z[:n]


def run_estimation(params, traj: Trajectory, xbar_init=None):
    """Run the estimator over a trajectory.

    Returns ``(times, estimates)``: ``times`` = L..T and row j of
    ``estimates`` is xhat_{t-L|t} for ``t = times[j]``.
    """
    L = params.L
    n = params.n
    if traj.T < L:
        raise InvalidInputError(f"trajectory has {traj.T + 1} samples, need at least L+1={L + 1}")
    xbar = np.zeros(n) if xbar_init is None else xbar_init
    state = EstimatorState.start(xbar, traj.inputs, traj.outputs, L)
    times = np.arange(L, traj.T + 1)
    est = np.empty((times.size, n))
    for j, t in enumerate(times):
        est[j], state = _step(params, state, traj.outputs[t], traj.inputs[t - 1])
    return times, est


_PARAM_BLOCKS = {
    "GSTAR": "Gstar",
    "HSTAR": "Hstar",
    "FSTAR": "Fstar",
    "GAMMA": "Gamma_star",
    "LAMBDA": "Lambda_star",
    "ASTAR": "Astar",
    "BSTAR": "Bstar",
    "CSTAR": "Cstar",
}
_PARAM_SCALARS = ("alpha", "alpha1", "alpha2", "sigma_w", "sigma_v", "L")


def save_params(params: DdmheParams, path) -> None:
    with open(path, "w") as fh:
        for key in _PARAM_SCALARS:
            val = getattr(params, key)
            fh.write(f"{key}={val if key == 'L' else repr(float(val))}\n")
        fh.write("\n")
        for label, attr in _PARAM_BLOCKS.items():
            fh.write(label + "\n")
            for row in getattr(params, attr):
                fh.write(format_row(row) + "\n")


def load_params(path) -> DdmheParams:
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = {}
    idx = 0
    while idx < len(lines) and lines[idx].strip():
        key, sep, val = lines[idx].partition("=")
        if not sep:
            raise ParseError(f"line {idx + 1}: expected key=value, got {lines[idx]!r}")
        header[key.strip()] = val.strip()
        idx += 1
    missing = [k for k in _PARAM_SCALARS if k not in header]
    if missing:
        raise ParseError(f"{path}: missing header fields {missing}")
    blocks: dict[str, list] = {}
    current = None
    for lineno, raw in enumerate(lines[idx:], start=idx + 1):
        if raw.strip() in _PARAM_BLOCKS:
            current = raw.strip()
            blocks[current] = []
        elif current is not None:
            blocks[current].append((lineno, raw))
    mats = {}
    for label, attr in _PARAM_BLOCKS.items():
        if label not in blocks:
            raise ParseError(f"{path}: missing block {label}")
        mats[attr] = parse_matrix_lines(blocks[label], label=label)
    L = int(header["L"])
    n = mats["Gstar"].shape[1]
    p = mats["Gstar"].shape[0] // (L + 1)
    m = mats["Hstar"].shape[1] // L
    return DdmheParams(
        Phi1=block(mats["Gstar"], 1, L * p, 1, n),
        Phi2=block(mats["Gstar"], p + 1, L * p + p, 1, n),
        Phi3=block(mats["Hstar"], p + 1, L * p + p, 1, m),
        alpha=float(header["alpha"]),
        alpha1=float(header["alpha1"]),
        alpha2=float(header["alpha2"]),
        sigma_w=float(header["sigma_w"]),
        sigma_v=float(header["sigma_v"]),
        L=L,
        **mats,
    )
