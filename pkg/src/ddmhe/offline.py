"""Offline dataset: N horizon-L segments with one noisy state sample each.

Two collection regimes are available. ``continuous`` cuts the segments out of
one long simulated trajectory, ``restart`` draws every segment's initial
state independently from N(0, sigma_x0^2 I).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ddmhe.errors import (
    AssumptionViolation,
    BoundsError,
    IntegrityError,
    InvalidInputError,
    ParseError,
)
from ddmhe.lti import LtiSystem, NoiseSpec, role_rng, sample_noise
from ddmhe.numerics import format_row, parse_matrix_lines, rank

COLLECTION_MODES = ("continuous", "restart")

_INT_KEYS = ("n", "m", "p", "L", "N")
_FLOAT_KEYS = ("sigma_w", "sigma_v", "sigma_chi", "sigma_u", "sigma_x0")
_BLOCKS = ("X0BAR", "UP", "YP")


@dataclass(frozen=True)
class OfflineDataset:
    """Column i of each matrix belongs to segment i."""

    X0bar: np.ndarray
    Up: np.ndarray
    Yp: np.ndarray
    n: int
    m: int
    p: int
    L: int
    N: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    mode: str = "continuous"

    def __post_init__(self):
        expected = {
            "X0bar": (self.n, self.N),
            "Up": (self.L * self.m, self.N),
            "Yp": ((self.L + 1) * self.p, self.N),
        }
        for name, shape in expected.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise InvalidInputError(f"{name} has shape {got}, expected {shape}")
        if self.N < self.n + self.L * self.m:
            raise AssumptionViolation(
                f"persistent excitation needs N >= n + L*m = {self.n + self.L * self.m}, got N={self.N}"
            )

    @property
    def regressor(self) -> np.ndarray:
        """Stacked [X0bar; Up], shape (n + L m, N)."""
        return np.vstack([self.X0bar, self.Up])


def collect_offline(
    sys: LtiSystem,
    N: int,
    L: int,
    noise: NoiseSpec,
    gap: int | None = None,
    seed: int = 0,
    mode: str = "continuous",
) -> OfflineDataset:
    """Simulate the plant under Gaussian excitation and cut N segments.

    In ``continuous`` mode segment i starts at ``h_i = i * gap`` (the first
    ``gap`` steps are warm-up from the zero state). Each segment records L
    inputs, L+1 outputs and the state at ``h_i`` corrupted by ``chi_i``.
    """
    n, m, p = sys.n, sys.m, sys.p
    gap = L + 1 if gap is None else gap
    if mode not in COLLECTION_MODES:
        raise InvalidInputError(f"unknown collection mode {mode!r}")
    if L < max(n, m, p):
        raise AssumptionViolation(f"horizon needs L >= max(n, m, p) = {max(n, m, p)}, got L={L}")
    if gap < L:
        raise AssumptionViolation(f"segment spacing gap={gap} must be >= L={L}")
    if N < n + L * m:
        raise AssumptionViolation(
            f"persistent excitation needs N >= n + L*m = {n + L * m}, got N={N}"
        )

    chi = sample_noise(noise.kind, noise.sigma_chi, (N, n), role_rng(seed, "chi"))

    if mode == "restart":
        X0 = sample_noise("gaussian", noise.sigma_x0, (N, n), role_rng(seed, "x0"))
        U = sample_noise("gaussian", noise.sigma_u, (N, L, m), role_rng(seed, "u"))
        W = sample_noise(noise.kind, noise.sigma_w, (N, L, n), role_rng(seed, "w"))
        V = sample_noise(noise.kind, noise.sigma_v, (N, L + 1, p), role_rng(seed, "v"))
        Y = np.empty((N, L + 1, p))
        x = X0.copy()
        for h in range(L + 1):
            Y[:, h] = x @ sys.C.T + V[:, h]
            if h < L:
                x = x @ sys.A.T + U[:, h] @ sys.B.T + W[:, h]
    else:
        T = gap * N + L
        u_all = sample_noise("gaussian", noise.sigma_u, (T, m), role_rng(seed, "u"))
        w_all = sample_noise(noise.kind, noise.sigma_w, (T, n), role_rng(seed, "w"))
        v_all = sample_noise(noise.kind, noise.sigma_v, (T + 1, p), role_rng(seed, "v"))
        x_all = np.empty((T + 1, n))
        x_all[0] = 0.0
        for k in range(T):
            x_all[k + 1] = sys.A @ x_all[k] + sys.B @ u_all[k] + w_all[k]
        y_all = x_all @ sys.C.T + v_all
        starts = gap * np.arange(1, N + 1)
        X0 = x_all[starts]
        U = np.stack([u_all[h : h + L] for h in starts])
        Y = np.stack([y_all[h : h + L + 1] for h in starts])

    return OfflineDataset(
        X0bar=(X0 + chi).T.copy(),
        Up=U.reshape(N, L * m).T.copy(),
        Yp=Y.reshape(N, (L + 1) * p).T.copy(),
        n=n,
        m=m,
        p=p,
        L=L,
        N=N,
        noise=noise,
        mode=mode,
    )


def check_persistent_excitation(ds: OfflineDataset, tol: float | None = None) -> bool:
    """True iff [X0bar; Up] has full row rank n + L m."""
    return rank(ds.regressor, tol) == ds.n + ds.L * ds.m


def segment_view(ds: OfflineDataset, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x0bar_i, u_i, y_i) for the 1-based segment index ``i``."""
    if not 1 <= i <= ds.N:
        raise BoundsError(f"segment index {i} outside 1..{ds.N}")
    return ds.X0bar[:, i - 1], ds.Up[:, i - 1], ds.Yp[:, i - 1]


def save_dataset(ds: OfflineDataset, path) -> None:
    with open(path, "w") as fh:
        for key in _INT_KEYS:
            fh.write(f"{key}={getattr(ds, key)}\n")
        for key in _FLOAT_KEYS:
            fh.write(f"{key}={getattr(ds.noise, key)!r}\n")
        fh.write(f"kind={ds.noise.kind}\n")
        fh.write(f"mode={ds.mode}\n")
        fh.write("\n")
        for label, M in zip(_BLOCKS, (ds.X0bar, ds.Up, ds.Yp)):
            fh.write(label + "\n")
            for row in M:
                fh.write(format_row(row) + "\n")


def load_dataset(path) -> OfflineDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not any(line.strip() for line in lines):
        raise ParseError(f"{path}: empty dataset file")

    header: dict[str, str] = {}
    idx = 0
    while idx < len(lines) and lines[idx].strip():
        text = lines[idx].strip()
        if not text.startswith("%"):
            key, sep, value = text.partition("=")
            if not sep:
                raise ParseError(f"line {idx + 1}: header entry {text!r} is not key=value")
            header[key.strip()] = value.strip()
        idx += 1

    meta: dict[str, object] = {}
    for key in _INT_KEYS + _FLOAT_KEYS + ("kind",):
        if key not in header:
            raise ParseError(f"{path}: header is missing field {key!r}")
    for key in _INT_KEYS:
        try:
            meta[key] = int(header[key])
        except ValueError:
            raise ParseError(f"{path}: field {key!r} is not an integer: {header[key]!r}") from None
    for key in _FLOAT_KEYS:
        try:
            meta[key] = float(header[key])
        except ValueError:
            raise ParseError(f"{path}: field {key!r} is not a number: {header[key]!r}") from None

    blocks: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(lines[idx:], start=idx + 1):
        text = raw.strip()
        if text in _BLOCKS:
            current = text
            blocks[current] = []
        elif current is not None:
            blocks[current].append((lineno, raw))
        elif text and not text.startswith("%"):
            raise ParseError(f"line {lineno}: data before any block label")
    for label in _BLOCKS:
        if label not in blocks:
            raise ParseError(f"{path}: missing block {label}")
    X0bar, Up, Yp = (parse_matrix_lines(blocks[b], label=b) for b in _BLOCKS)

    n, m, p, L, N = (meta[k] for k in _INT_KEYS)
    expected = {"X0BAR": (n, N), "UP": (L * m, N), "YP": ((L + 1) * p, N)}
    for label, M in zip(_BLOCKS, (X0bar, Up, Yp)):
        if M.shape != expected[label]:
            raise IntegrityError(
                f"{path}: block {label} is {M.shape[0]}x{M.shape[1]}, header implies "
                f"{expected[label][0]}x{expected[label][1]}"
            )
    noise = NoiseSpec(kind=header["kind"], **{k: meta[k] for k in _FLOAT_KEYS})
    return OfflineDataset(
        X0bar=X0bar, Up=Up, Yp=Yp, n=n, m=m, p=p, L=L, N=N,
        noise=noise, mode=header.get("mode", "continuous"),
    )
