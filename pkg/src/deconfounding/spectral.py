"""Spectral transformations ``F = U diag(d_tilde / d) U^T`` of a design matrix.

A transform is fitted on ``X`` only and then applied to any matrix with the
same number of rows (``X`` itself, ``Y``, single columns). On the orthogonal
complement of ``col(U)`` the transform acts as the identity, so for
``n > p`` the part of ``Y`` outside the column space of ``X`` is untouched.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import InvalidInputError
from .linalg import SvdFactors, as_matrix, svd

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

MEDIAN = "median"


@dataclass(frozen=True)
class Identity:
    name = "identity"


@dataclass(frozen=True)
class Trim:
    """Cap singular values at ``tau``; ``tau="median"`` uses the median singular value."""

    tau: float | str = MEDIAN
    name = "trim"

    def __post_init__(self) -> None:
        if isinstance(self.tau, str):
            if self.tau != MEDIAN:
                raise InvalidInputError(f"unknown tau rule {self.tau!r}")
        elif not (self.tau >= 0 and math.isfinite(self.tau)):
            raise InvalidInputError(f"tau must be finite and >= 0, got {self.tau}")


@dataclass(frozen=True)
class Pca:
    """Remove the top ``qhat`` principal directions."""

    qhat: int
    name = "pca"

    def __post_init__(self) -> None:
        if int(self.qhat) != self.qhat or self.qhat < 0:
            raise InvalidInputError(f"qhat must be a non-negative integer, got {self.qhat}")


@dataclass(frozen=True)
class Lava:
    """Shrinkage implied by the Lava penalty ``lambda2 * ||b||_2^2``."""

    lambda2: float | str = MEDIAN
    name = "lava"

    def __post_init__(self) -> None:
        if isinstance(self.lambda2, str):
            if self.lambda2 != MEDIAN:
                raise InvalidInputError(f"unknown lambda2 rule {self.lambda2!r}")
        elif not (self.lambda2 > 0 and math.isfinite(self.lambda2)):
            raise InvalidInputError(f"lambda2 must be finite and > 0, got {self.lambda2}")


TransformKind = Union[Identity, Trim, Pca, Lava]


def median_index(m: int) -> int:
    """0-based position of the median singular value.

    The 1-based index is ``ceil(m/2)``: the same as ``floor(m/2)`` for even
    ``m`` and the middle value for odd ``m`` (``floor`` would pick ``d_1``
    when ``m = 3``).
    """
    return max((m + 1) // 2, 1) - 1


def median_singular_value(d: NDArray[np.float64]) -> float:
    return float(d[median_index(d.size)])


def lava_median_lambda2(d: NDArray[np.float64], n: int) -> float:
    """``lambda2 = d_med^2 / n`` with the median from :func:`median_index`."""
    return median_singular_value(d) ** 2 / n


def shrink_ratios(d: NDArray[np.float64], n: int, kind: TransformKind) -> tuple[NDArray[np.float64], dict]:
    """Per-singular-value ratios ``rho_i = d_tilde_i / d_i`` and resolved parameters."""
    m = d.size
    rho = np.ones(m)
    params: dict = {}
    positive = d > 0
    if isinstance(kind, Identity):
        pass
    elif isinstance(kind, Trim):
        tau = median_singular_value(d) if kind.tau == MEDIAN else float(kind.tau)
        params["tau"] = tau
        rho[positive] = np.minimum(d[positive], tau) / d[positive]
    elif isinstance(kind, Pca):
        if kind.qhat > m:
            raise InvalidInputError(f"qhat={kind.qhat} exceeds min(n, p)={m}")
        params["qhat"] = int(kind.qhat)
        rho[: int(kind.qhat)] = 0.0
    elif isinstance(kind, Lava):
        lam2 = lava_median_lambda2(d, n) if kind.lambda2 == MEDIAN else float(kind.lambda2)
        if not lam2 > 0:
            raise InvalidInputError("lambda2 resolved to a non-positive value (zero spectrum?)")
        params["lambda2"] = lam2
        rho[positive] = np.sqrt(n * lam2 / (n * lam2 + d[positive] ** 2))
    else:
        raise InvalidInputError(f"unknown transform kind {kind!r}")
    # 0/0 ratios act on directions X never uses; keep them as no-ops.
    if not isinstance(kind, Pca):
        rho[~positive] = 1.0
    return rho, params


@dataclass(frozen=True)
class SpectralTransform:
    """A fitted transform; immutable, :meth:`apply` is pure."""

    svd: SvdFactors
    shrink: NDArray[np.float64]
    kind: TransformKind
    n: int
    p: int
    params: dict

    @property
    def d(self) -> NDArray[np.float64]:
        return self.svd.d

    @property
    def d_tilde(self) -> NDArray[np.float64]:
        return self.shrink * self.svd.d

    def apply(self, M: ArrayLike) -> NDArray[np.float64]:
        return apply(self, M)

    def transformed_design(self) -> NDArray[np.float64]:
        """``F X = U diag(d_tilde) V^T`` for the matrix the transform was fitted on.

        Equal to ``apply(X)`` in exact arithmetic. Built from the factors, it
        avoids the rounding left in the orthogonal complement by ``apply``,
        which small shrink factors would otherwise amplify.
        """
        if isinstance(self.kind, Identity) or np.all(self.shrink == 1.0):
            return self.svd.reconstruct()
        return (self.svd.U * self.d_tilde) @ self.svd.V.T

    def matrix(self) -> NDArray[np.float64]:
        """Dense ``n x n`` matrix of ``F``."""
        return apply(self, np.eye(self.n))

    def trace_sq(self) -> float:
        """``tr(F^2)``: effective number of residual degrees of freedom under ``F``."""
        return float(np.sum(self.shrink**2) + (self.n - self.shrink.size))


def fit_transform(X: ArrayLike, kind: TransformKind | None = None) -> SpectralTransform:
    """Fit the spectral transform of type ``kind`` (default ``Trim("median")``) on ``X``."""
    X = as_matrix(X, "X")
    if kind is None:
        kind = Trim()
    factors = svd(X)
    n, p = X.shape
    rho, params = shrink_ratios(factors.d, n, kind)
    return SpectralTransform(svd=factors, shrink=rho, kind=kind, n=n, p=p, params=params)


def apply(T: SpectralTransform, M: ArrayLike) -> NDArray[np.float64]:
    """``F M = U diag(rho) U^T M + (M - U U^T M)``; 1-d input gives 1-d output."""
    arr = np.asarray(M, dtype=np.float64)
    vec = arr.ndim == 1
    M2 = as_matrix(arr, "M")
    if M2.shape[0] != T.n:
        raise InvalidInputError(f"row mismatch: transform fitted with n={T.n}, got {M2.shape[0]} rows")
    if isinstance(T.kind, Identity) or np.all(T.shrink == 1.0):
        out = M2.copy()
    else:
        U = T.svd.U
        coef = U.T @ M2
        out = M2 + U @ ((T.shrink - 1.0)[:, None] * coef)
    return out[:, 0] if vec else out


def singular_spectrum(T: SpectralTransform) -> list[tuple[float, float]]:
    """``(d_i, d_tilde_i)`` pairs in descending ``d_i`` order."""
    return [(float(a), float(b)) for a, b in zip(T.d, T.d_tilde)]


def spectrum_csv(T: SpectralTransform) -> str:
    """CSV rows ``index,d,d_tilde`` (1-based index, round-trip float precision)."""
    buf = io.StringIO()
    buf.write("index,d,d_tilde\n")
    for i, (a, b) in enumerate(singular_spectrum(T), start=1):
        buf.write(f"{i},{a!r},{b!r}\n")
    return buf.getvalue()


def kind_from_name(name: str, *, tau: float | str | None = None, qhat: int | None = None,
                   lambda2: float | str | None = None) -> TransformKind:
    name = name.lower()
    if name == "identity":
        return Identity()
    if name == "trim":
        return Trim(MEDIAN if tau is None else tau)
    if name == "pca":
        if qhat is None:
            raise InvalidInputError("pca transform needs qhat")
        return Pca(int(qhat))
    if name == "lava":
        return Lava(MEDIAN if lambda2 is None else lambda2)
    raise InvalidInputError(f"unknown transform kind {name!r}")


def describe(kind: TransformKind) -> dict:
    out: dict = {"kind": kind.name}
    if isinstance(kind, Trim):
        out["tau"] = kind.tau
    elif isinstance(kind, Pca):
        out["qhat"] = kind.qhat
    elif isinstance(kind, Lava):
        out["lambda2"] = kind.lambda2
    return out
