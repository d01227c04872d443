"""Linear time-invariant plant, stacked horizon operators and noise sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ddmhe.errors import InvalidInputError, ParseError
from ddmhe.numerics import as_matrix, rank

NOISE_KINDS = ("gaussian", "uniform", "laplace", "bernoulli-symmetric")

# Fixed tags so that every noise source gets its own generator stream.
ROLE_TAGS = {"w": 1, "v": 2, "chi": 3, "u": 4, "x0": 5}


@dataclass(frozen=True)
class LtiSystem:
    """x_{k+1} = A x_k + B u_k + w_k,  y_k = C x_k + v_k."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise InvalidInputError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise InvalidInputError(f"C has {C.shape[1]} columns, expected {n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise levels used when generating data.

    Every ``sigma_*`` is the sub-Gaussian scale of its source; for the
    gaussian kind this is the standard deviation.
    """

    kind: str = "gaussian"
    sigma_w: float = 0.0
    sigma_v: float = 0.0
    sigma_chi: float = 0.0
    sigma_u: float = 0.0
    sigma_x0: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidInputError(f"unknown noise kind {self.kind!r}")
        for name in ("sigma_w", "sigma_v", "sigma_chi", "sigma_u", "sigma_x0"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise InvalidInputError(f"{name} must be a finite nonnegative number")


@dataclass(frozen=True)
class StackedOperators:
    G: np.ndarray
    H: np.ndarray
    F: np.ndarray
    L: int


@dataclass(frozen=True)
class Trajectory:
    """States and outputs at k = 0..T, inputs at k = 0..T-1 (row per step)."""

    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        T = self.inputs.shape[0]
        if self.states.shape[0] != T + 1 or self.outputs.shape[0] != T + 1:
            raise InvalidInputError(
                "trajectory needs T+1 states/outputs for T inputs, got "
                f"{self.states.shape[0]}/{self.outputs.shape[0]} for {T}"
            )

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


def role_rng(seed: int, role: str) -> np.random.Generator:
    """Generator for one noise source, independent of the other roles."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(ROLE_TAGS[role],))
    return np.random.default_rng(ss)


def sample_noise(kind: str, sigma: float, dim, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean draw with sub-Gaussian scale ``sigma``.

    ``dim`` is an int or a shape tuple. Uniform noise lives on
    ``(-sqrt(3) sigma, sqrt(3) sigma]`` so its variance is ``sigma**2``;
    laplace and symmetric bernoulli are scaled to the same variance.
    """
    if kind not in NOISE_KINDS:
        raise InvalidInputError(f"unknown noise kind {kind!r}")
    if not np.isfinite(sigma) or sigma < 0:
        raise InvalidInputError("sigma must be a finite nonnegative number")
    if sigma == 0:
        return np.zeros(dim)
    if kind == "gaussian":
        return rng.normal(0.0, sigma, size=dim)
    if kind == "uniform":
        half = np.sqrt(3.0) * sigma
        # negating a draw on [-h, h) gives the half-open interval (-h, h]
        return -rng.uniform(-half, half, size=dim)
    if kind == "laplace":
        return rng.laplace(0.0, sigma / np.sqrt(2.0), size=dim)
    return sigma * (2.0 * rng.integers(0, 2, size=dim) - 1.0)


def build_stacked_operators(sys: LtiSystem, L: int) -> StackedOperators:
    """Stack the horizon map y_[k-L,k] = G x + H u + F w + v."""
    if L < 1:
        raise InvalidInputError("horizon L must be >= 1")
    A, B, C = sys.A, sys.B, sys.C
    n, m, p = sys.n, sys.m, sys.p
    # markov[i] = C A^i
    markov = [C]
    for _ in range(L):
        markov.append(markov[-1] @ A)
    G = np.vstack(markov)
    F = np.zeros(((L + 1) * p, L * n))
    for i in range(1, L + 1):
        for j in range(i):
            F[i * p : (i + 1) * p, j * n : (j + 1) * n] = markov[i - j - 1]
    H = F @ np.kron(np.eye(L), B)
    return StackedOperators(G=G, H=H, F=F, L=L)


def observability_matrix(sys: LtiSystem) -> np.ndarray:
    return build_stacked_operators(sys, max(sys.n - 1, 1)).G[: sys.n * sys.p]


def check_observability(sys: LtiSystem) -> bool:
    return rank(observability_matrix(sys)) == sys.n


def simulate(
    sys: LtiSystem,
    x0,
    inputs,
    noise: NoiseSpec | None = None,
    seed: int = 0,
) -> Trajectory:
    """Run the plant forward over the given input sequence.

    Process and measurement noise come from separate streams derived from
    ``seed``; with zero sigmas the result is deterministic.
    """
    noise = noise or NoiseSpec()
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, sys.m)
    T = U.shape[0]
    if T < 1 or U.shape[1] != sys.m:
        raise InvalidInputError(f"inputs must have shape (T>=1, {sys.m}), got {U.shape}")
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    W = sample_noise(noise.kind, noise.sigma_w, (T, sys.n), role_rng(seed, "w"))
    V = sample_noise(noise.kind, noise.sigma_v, (T + 1, sys.p), role_rng(seed, "v"))
    X = np.empty((T + 1, sys.n))
    X[0] = x
    for k in range(T):
        X[k + 1] = sys.A @ X[k] + sys.B @ U[k] + W[k]
    Y = X @ sys.C.T + V
    return Trajectory(states=X, inputs=U, outputs=Y)


def horizon_output(ops: StackedOperators, x_start, u_window, w_window, v_window) -> np.ndarray:
    """Evaluate G x + H u + F w + v on stacked window vectors."""
    x = np.asarray(x_start, dtype=float).ravel()
    u = np.asarray(u_window, dtype=float).ravel()
    w = np.asarray(w_window, dtype=float).ravel()
    v = np.asarray(v_window, dtype=float).ravel()
    expected = (ops.G.shape[1], ops.H.shape[1], ops.F.shape[1], ops.G.shape[0])
    got = (x.size, u.size, w.size, v.size)
    if got != expected:
        raise InvalidInputError(f"window sizes {got} do not match operators {expected}")
    return ops.G @ x + ops.H @ u + ops.F @ w + v


def save_trajectory(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    p = traj.outputs.shape[1]
    header = (
        ["k"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"u_{i + 1}" for i in range(m)]
        + [f"y_{i + 1}" for i in range(p)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(traj.T + 1):
            u = [repr(float(v)) for v in traj.inputs[k]] if k < traj.T else [""] * m
            writer.writerow(
                [k]
                + [repr(float(v)) for v in traj.states[k]]
                + u
                + [repr(float(v)) for v in traj.outputs[k]]
            )


def load_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ParseError(f"{path}: trajectory file needs a header and at least one row")
    header, body = rows[0], rows[1:]
    n = sum(h.startswith("x_") for h in header)
    m = sum(h.startswith("u_") for h in header)
    X = np.array([[float(v) for v in r[1 : 1 + n]] for r in body])
    U = np.array([[float(v) for v in r[1 + n : 1 + n + m]] for r in body[:-1]])
    Y = np.array([[float(v) for v in r[1 + n + m :]] for r in body])
    return Trajectory(states=X, inputs=U.reshape(len(body) - 1, m), outputs=Y)
