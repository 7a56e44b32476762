"""Dense linear-algebra helpers for the skew-symmetric least-squares solvers.

Matrices are plain ``numpy`` float64 arrays. Vectorization is column-major
(``vec(A) = A.ravel(order="F")``) and the half-vectorization of a skew matrix
stacks its strictly-lower-triangular entries column by column.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import SingularMatrixError, UnsupportedDimensionError

SKEW_TOL = 1e-12
SYMMETRY_TOL = 1e-10
# condition number above which a block is treated as singular
COND_LIMIT = 1e12


def _check_dim(d):
    if d not in (2, 3):
        raise UnsupportedDimensionError(f"dimension must be 2 or 3, got {d}")


def skew_size(d: int) -> int:
    return d * (d - 1) // 2


@lru_cache(maxsize=8)
def _lower_pairs(d):
    return tuple((i, j) for j in range(d) for i in range(j + 1, d))


@lru_cache(maxsize=8)
def _lower_index(d):
    pairs = _lower_pairs(d)
    return np.array([p[0] for p in pairs], dtype=int), np.array([p[1] for p in pairs], dtype=int)


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=float).ravel(order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape((d, d), order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; ``out[i*p + k, j*q + l] = a[i, j] * b[k, l]``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return np.einsum("ij,kl->ikjl", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])


def vech_skew(a: np.ndarray) -> np.ndarray:
    """Half-vectorize an antisymmetric matrix.

    Raises ``ValueError`` when ``a + a.T`` exceeds ``SKEW_TOL`` anywhere.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a + a.T), initial=0.0) > SKEW_TOL:
        raise ValueError("matrix is not antisymmetric")
    rows, cols = _lower_index(a.shape[0])
    return a[rows, cols].copy()


def unvech_skew(v: np.ndarray, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != skew_size(d):
        raise ValueError(f"expected {skew_size(d)} entries for d={d}, got {v.size}")
    rows, cols = _lower_index(d)
    a = np.zeros((d, d))
    a[rows, cols] = v
    a[cols, rows] = -v
    return a


def duplication_skew(d: int) -> np.ndarray:
    """Matrix ``D`` with ``D @ vech_skew(A) == vec(A)`` for antisymmetric ``A``."""
    _check_dim(d)
    dup = np.zeros((d * d, skew_size(d)))
    for col, (i, j) in enumerate(_lower_pairs(d)):
        dup[i + j * d, col] = 1.0
        dup[j + i * d, col] = -1.0
    return dup


def left_inverse_dup(dup: np.ndarray) -> np.ndarray:
    """Moore-Penrose left inverse ``(D^T D)^{-1} D^T`` of a duplication matrix."""
    dup = np.asarray(dup, dtype=float)
    return np.linalg.solve(dup.T @ dup, dup.T)


def default_ridge(a: np.ndarray) -> float:
    return 1e-10 * (1.0 + abs(np.trace(a)))


def _validate_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def solve_spd(a: np.ndarray, rhs: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(a + ridge I) x = rhs`` for symmetric ``a``.

    Cholesky is used when the shifted matrix is comfortably positive definite;
    otherwise a pivoted QR least-squares solve returns the minimum-norm
    minimizer of ``||(a + ridge I) x - rhs||``.
    """
    a = _validate_square(a)
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("right-hand side has non-finite entries")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    scale = max(1.0, np.max(np.abs(a), initial=0.0))
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    m = a + ridge * np.eye(a.shape[0])
    try:
        factor = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() ** 2 > diag.max() ** 2 / COND_LIMIT:
            return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    x, *_ = scipy.linalg.lstsq(m, rhs, lapack_driver="gelsy", check_finite=False)
    return x


def safe_inverse(m: np.ndarray) -> np.ndarray:
    """Invert ``m``, retrying once with ``default_ridge`` added to the diagonal."""
    m = _validate_square(m)
    cond = np.linalg.cond(m) if m.size else 1.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        m = m + default_ridge(m) * np.eye(m.shape[0])
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e3 * COND_LIMIT:
            raise SingularMatrixError("matrix is singular after ridge fallback", cond)
    return np.linalg.inv(m)


def block_inverse(q, r, s, t) -> np.ndarray:
    """Inverse of ``[[q, r], [s, t]]`` through the Schur complement of ``t``.

    With ``U = (q - r t^{-1} s)^{-1}``::

        [[ U,            -U r t^{-1}                 ],
         [ -t^{-1} s U,   t^{-1} + t^{-1} s U r t^{-1} ]]
    """
    q, r, s, t = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (q, r, s, t))
    t_inv = safe_inverse(t)
    u = safe_inverse(q - r @ t_inv @ s)
    upper_right = -u @ r @ t_inv
    lower_left = -t_inv @ s @ u
    lower_right = t_inv + t_inv @ s @ u @ r @ t_inv
    return np.block([[u, upper_right], [lower_left, lower_right]])


@dataclass(frozen=True)
class SkewParams:
    """Rigid velocity field ``x -> A x + b`` with ``A`` stored as ``vech_a``."""

    dim: int
    vech_a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        _check_dim(self.dim)
        object.__setattr__(self, "vech_a", np.asarray(self.vech_a, dtype=float).reshape(skew_size(self.dim)))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(self.dim))

    @property
    def a(self) -> np.ndarray:
        return unvech_skew(self.vech_a, self.dim)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.a.T + self.b

    def flat(self) -> np.ndarray:
        return np.concatenate([self.vech_a, self.b])

    @classmethod
    def from_flat(cls, dim: int, p: np.ndarray) -> "SkewParams":
        m = skew_size(dim)
        return cls(dim, p[:m], p[m:])
