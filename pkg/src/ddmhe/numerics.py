"""Dense matrix helpers.

All routines take and return plain ``numpy.ndarray`` objects. ``block`` uses
1-based inclusive indices, the convention used for the stacked operators
throughout the package.
"""

from __future__ import annotations

from typing import Iterable, TextIO

import numpy as np

from ddmhe.errors import BoundsError, InvalidInputError, ParseError

SYM_RTOL = 1e-10


def as_matrix(M, name: str = "M") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array, promoting vectors to columns."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def default_tol(M: np.ndarray) -> float:
    return max(M.shape) * np.finfo(float).eps


def pinv(M, tol: float = 0.0) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values at or below ``tol * s_max`` are treated as zero. ``tol=0``
    selects ``max(rows, cols) * eps``.
    """
    A = as_matrix(M)
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    rtol = tol if tol > 0 else default_tol(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[1], A.shape[0]))
    keep = s > rtol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def rank(M, tol: float | None = None) -> int:
    """Count singular values above ``tol * s_max`` (default tol as in ``pinv``)."""
    A = as_matrix(M)
    if tol is not None and tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    rtol = default_tol(A) if not tol else tol
    return int(np.count_nonzero(s > rtol * s[0]))


def min_eig_sym(M) -> float:
    """Smallest eigenvalue of the symmetrized matrix ``(M + M.T) / 2``."""
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"matrix must be square, got {A.shape}")
    scale = np.max(np.abs(A))
    if scale > 0 and np.max(np.abs(A - A.T)) > SYM_RTOL * scale:
        raise InvalidInputError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def spectral_norm(M) -> float:
    A = as_matrix(M)
    return float(np.linalg.svd(A, compute_uv=False)[0])


def block(M, p1: int, p2: int, q1: int, q2: int) -> np.ndarray:
    """Submatrix ``M(p1:p2; q1:q2)`` with 1-based inclusive bounds."""
    A = np.asarray(M)
    rows, cols = A.shape
    if not (1 <= p1 <= p2 <= rows and 1 <= q1 <= q2 <= cols):
        raise BoundsError(
            f"block ({p1}:{p2}; {q1}:{q2}) out of range for {rows}x{cols} matrix"
        )
    return A[p1 - 1 : p2, q1 - 1 : q2]


def format_row(values: Iterable[float]) -> str:
    # repr() gives the shortest string that round-trips exactly
    return ",".join(repr(float(v)) for v in values)


def write_matrix_csv(fh: TextIO, M) -> None:
    A = np.atleast_2d(np.asarray(M, dtype=float))
    for row in A:
        fh.write(format_row(row) + "\n")


def parse_matrix_lines(lines: Iterable[tuple[int, str]], label: str = "matrix") -> np.ndarray:
    """Parse ``(line_number, text)`` pairs of CSV rows into a matrix.

    Blank lines and ``%`` comment lines are skipped.
    """
    rows = []
    width = None
    for lineno, raw in lines:
        text = raw.strip()
        if not text or text.startswith("%"):
            continue
        try:
            row = [float(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad number in {label}: {exc}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(
                f"line {lineno}: {label} row has {len(row)} entries, expected {width}"
            )
        rows.append(row)
    if not rows:
        raise ParseError(f"{label}: no rows")
    return np.array(rows, dtype=float)


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix_lines(enumerate(fh, start=1), label=str(path))
