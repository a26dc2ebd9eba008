"""Dense linear algebra on top of the thin SVD: projectors and minimum-norm solves.

Everything downstream (spectral transforms, anchor regression, TSLS) is built
on these few functions. All of them are pure and work on plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidInputError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


def as_matrix(M: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    """Return ``M`` as a finite 2-d float array (vectors become one column)."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 1- or 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def default_rank_tol(shape: tuple[int, ...]) -> float:
    """Relative rank tolerance ``1e-10 * max(n, p)``."""
    return 1e-10 * max(shape)


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``M = U diag(d) V^T`` with ``m = min(n, p)`` components."""

    U: NDArray[np.float64]
    d: NDArray[np.float64]
    V: NDArray[np.float64]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def reconstruct(self) -> NDArray[np.float64]:
        return (self.U * self.d) @ self.V.T


def svd(M: ArrayLike) -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive (first such entry on ties); the matching right singular vector
    is flipped with it.
    """
    X = as_matrix(M, "M")
    U, d, Vt = np.linalg.svd(X, full_matrices=False)
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = Vt.T * signs
    return SvdFactors(U=np.ascontiguousarray(U), d=d, V=np.ascontiguousarray(V))


@dataclass(frozen=True)
class Projector:
    """Orthogonal projection onto the column space of some matrix ``A``."""

    basis: NDArray[np.float64]
    rank: int
    rank_tolerance: float

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def matrix(self) -> NDArray[np.float64]:
        """Dense ``n x n`` projection matrix (for tests and small problems)."""
        return self.basis @ self.basis.T


def projector_from(A: ArrayLike, tol: float | None = None) -> Projector:
    """Projector onto ``col(A)``.

    The rank is the number of singular values of ``A`` above ``tol * d_1``.
    An all-zero ``A`` gives the rank-0 projector.
    """
    A = as_matrix(A, "A")
    if tol is None:
        tol = default_rank_tol(A.shape)
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    U, d, _ = np.linalg.svd(A, full_matrices=False)
    if d.size == 0 or d[0] == 0.0:
        k = 0
    else:
        k = int(np.sum(d > tol * d[0]))
    return Projector(basis=np.ascontiguousarray(U[:, :k]), rank=k, rank_tolerance=float(tol))


def _check_rows(P: Projector, M: NDArray[np.float64]) -> None:
    if M.shape[0] != P.n:
        raise InvalidInputError(f"row mismatch: projector has n={P.n}, matrix has {M.shape[0]} rows")


def apply_proj(P: Projector, M: ArrayLike) -> NDArray[np.float64]:
    """``Pi M``. A 1-d ``M`` returns a 1-d result."""
    arr = np.asarray(M, dtype=np.float64)
    vec = arr.ndim == 1
    M2 = as_matrix(arr, "M")
    _check_rows(P, M2)
    out = P.basis @ (P.basis.T @ M2)
    return out[:, 0] if vec else out


def residualize(P: Projector, M: ArrayLike) -> NDArray[np.float64]:
    """``(I - Pi) M``."""
    arr = np.asarray(M, dtype=np.float64)
    vec = arr.ndim == 1
    M2 = as_matrix(arr, "M")
    _check_rows(P, M2)
    out = M2 - P.basis @ (P.basis.T @ M2)
    return out[:, 0] if vec else out


def pseudo_solve(M: ArrayLike, b: ArrayLike, tol: float | None = None) -> NDArray[np.float64]:
    """Minimum-norm least-squares solution of ``M x = b``.

    Singular values below ``tol * d_1`` are treated as zero. A 1-d ``b``
    returns a 1-d solution.
    """
    M = as_matrix(M, "M")
    b_arr = np.asarray(b, dtype=np.float64)
    vec = b_arr.ndim == 1
    B = as_matrix(b_arr, "b")
    if B.shape[0] != M.shape[0]:
        raise InvalidInputError(f"shape mismatch: M is {M.shape}, b has {B.shape[0]} rows")
    if tol is None:
        tol = default_rank_tol(M.shape)
    U, d, Vt = np.linalg.svd(M, full_matrices=False)
    if d.size == 0 or d[0] == 0.0:
        x = np.zeros((M.shape[1], B.shape[1]))
    else:
        keep = d > tol * d[0]
        x = Vt[keep].T @ ((U[:, keep].T @ B) / d[keep, None])
    return x[:, 0] if vec else x


def null_space(M: ArrayLike, tol: float | None = None) -> NDArray[np.float64]:
    """Orthonormal basis (columns) of the numerical null space of ``M``."""
    M = as_matrix(M, "M")
    if tol is None:
        tol = default_rank_tol(M.shape)
    _, d, Vt = np.linalg.svd(M, full_matrices=True)
    if d.size == 0 or d[0] == 0.0:
        return np.eye(M.shape[1])
    rank = int(np.sum(d > tol * d[0]))
    return np.ascontiguousarray(Vt[rank:].T)


def numerical_rank(M: ArrayLike, tol: float | None = None) -> int:
    M = as_matrix(M, "M")
    if tol is None:
        tol = default_rank_tol(M.shape)
    d = np.linalg.svd(M, compute_uv=False)
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.sum(d > tol * d[0]))
