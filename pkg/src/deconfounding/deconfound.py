"""Deconfounded sparse regression: Trim-Lasso, PCA-adjusted Lasso and Lava.

All pipelines center ``X`` and ``Y`` first and fit the spectral transform on
the centered ``X``. Because the constant vector is then orthogonal to the
column space of ``X``, the transform leaves it untouched and transformed
data stay centered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from . import sparse
from .errors import DegenerateProblemError, InvalidInputError
from .linalg import as_matrix
from .spectral import Identity, Lava, Pca, SpectralTransform, TransformKind, Trim, fit_transform

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

CV = "cv"


@dataclass
class DeconfoundFit:
    beta: NDArray[np.float64]
    intercept: float
    transform_kind: TransformKind
    lambda_: float
    dense_part: NDArray[np.float64] | None = None
    lambda2: float | None = None
    transform: SpectralTransform | None = None
    cv: sparse.CvResult | None = None

    def predict(self, X: ArrayLike) -> NDArray[np.float64]:
        coef = self.beta if self.dense_part is None else self.beta + self.dense_part
        return np.asarray(X, dtype=np.float64) @ coef + self.intercept


def _center(X: ArrayLike, Y: ArrayLike):
    X, y = sparse._prepare(X, Y)
    xbar = X.mean(axis=0)
    ybar = float(y.mean())
    return X - xbar, y - ybar, xbar, ybar


def transform_data(X: ArrayLike, Y: ArrayLike, kind: TransformKind):
    """Center, fit ``kind`` on ``X`` and return ``(X_tilde, Y_tilde, transform, xbar, ybar)``."""
    Xc, yc, xbar, ybar = _center(X, Y)
    T = fit_transform(Xc, kind)
    # an all-ones profile is the identity; keep the data bit-for-bit
    Xt = Xc.copy() if np.all(T.shrink == 1.0) else T.transformed_design()
    return Xt, T.apply(yc), T, xbar, ybar


def _choose_lambda(Xt, yt, lam, folds: int, seed: int, cfg, threads: int):
    if isinstance(lam, str):
        if lam != CV:
            raise InvalidInputError(f"lambda must be a number or 'cv', got {lam!r}")
        res = sparse.cv_lasso(Xt, yt, folds=folds, cfg=cfg, seed=seed, threads=threads)
        return res.lambda_min, res
    return float(lam), None


def spectral_lasso(X: ArrayLike, Y: ArrayLike, kind: TransformKind, lam: float | str = CV, *,
                   folds: int = 10, seed: int = 0, cfg: sparse.LassoConfig | None = None,
                   threads: int = 1) -> DeconfoundFit:
    """Lasso on spectrally transformed data.

    With ``lam="cv"`` the full data set is transformed once and
    cross-validation runs on the transformed data; ``lambda_min`` is used.
    """
    Xt, yt, T, xbar, ybar = transform_data(X, Y, kind)
    lam_val, cv = _choose_lambda(Xt, yt, lam, folds, seed, cfg, threads)
    fit = sparse.lasso(Xt, yt, lam_val, cfg)
    intercept = float(ybar - xbar @ fit.beta)
    return DeconfoundFit(beta=fit.beta, intercept=intercept, transform_kind=kind, lambda_=lam_val,
                         transform=T, cv=cv)


def trim_lasso(X: ArrayLike, Y: ArrayLike, tau: float | str = "median", lam: float | str = CV,
               **kwargs) -> DeconfoundFit:
    """Lasso after the Trim transform (singular values capped at ``tau``)."""
    return spectral_lasso(X, Y, Trim(tau), lam, **kwargs)


def plain_lasso(X: ArrayLike, Y: ArrayLike, lam: float | str = CV, **kwargs) -> DeconfoundFit:
    return spectral_lasso(X, Y, Identity(), lam, **kwargs)


def pca_adjust_lasso(X: ArrayLike, Y: ArrayLike, qhat: int, lam: float | str = CV, **kwargs) -> DeconfoundFit:
    """Lasso after projecting out the top ``qhat`` left singular vectors of ``X``."""
    X = as_matrix(X, "X")
    if qhat >= min(X.shape):
        raise InvalidInputError(f"qhat={qhat} must be < min(n, p)={min(X.shape)}")
    return spectral_lasso(X, Y, Pca(qhat), lam, **kwargs)


def lava(X: ArrayLike, Y: ArrayLike, lambda1: float | str = CV, lambda2: float | str = "median", *,
         folds: int = 10, seed: int = 0, cfg: sparse.LassoConfig | None = None,
         threads: int = 1) -> DeconfoundFit:
    """Lava: ``argmin ||Y - X(beta + b)||^2/n + lambda1 ||beta||_1 + lambda2 ||b||_2^2``.

    ``beta`` comes from the Lasso on Lava-transformed data; ``b`` is the exact
    ridge minimizer given ``beta``:
    ``b = (X^T X / n + lambda2 I)^-1 X^T (Y - X beta) / n``.
    """
    if not isinstance(lambda2, str) and not lambda2 > 0:
        raise InvalidInputError("lambda2 must be > 0")
    kind = Lava(lambda2)
    Xt, yt, T, xbar, ybar = transform_data(X, Y, kind)
    lam_val, cv = _choose_lambda(Xt, yt, lambda1, folds, seed, cfg, threads)
    fit = sparse.lasso(Xt, yt, lam_val, cfg)
    lam2 = float(T.params["lambda2"])
    Xc, yc, _, _ = _center(X, Y)
    b = ridge_coef(Xc, yc - Xc @ fit.beta, lam2, T)
    intercept = float(ybar - xbar @ (fit.beta + b))
    return DeconfoundFit(beta=fit.beta, intercept=intercept, transform_kind=kind, lambda_=lam_val,
                         dense_part=b, lambda2=lam2, transform=T, cv=cv)


def ridge_coef(Xc: NDArray[np.float64], r: NDArray[np.float64], lambda2: float,
               T: SpectralTransform | None = None) -> NDArray[np.float64]:
    """``(X^T X/n + lambda2 I)^-1 X^T r / n`` via the SVD of ``X``."""
    n = Xc.shape[0]
    if T is None:
        T = fit_transform(Xc, Identity())
    U, d, V = T.svd.U, T.svd.d, T.svd.V
    return V @ ((d / (d**2 + n * lambda2)) * (U.T @ r))


def lava_objective(X: ArrayLike, Y: ArrayLike, beta: ArrayLike, b: ArrayLike, lambda1: float,
                   lambda2: float) -> float:
    """Joint Lava objective on centered data."""
    Xc, yc, _, _ = _center(X, Y)
    r = yc - Xc @ (np.asarray(beta) + np.asarray(b))
    return float(r @ r / Xc.shape[0] + lambda1 * np.sum(np.abs(beta)) + lambda2 * np.sum(np.asarray(b) ** 2))


def lava_alternating(X: ArrayLike, Y: ArrayLike, lambda1: float, lambda2: float, *, max_rounds: int = 100_000,
                     tol: float = 1e-11, cfg: sparse.LassoConfig | None = None):
    """Block-coordinate minimization of the joint Lava objective from a cold start.

    Alternates an exact ridge step in ``b`` with a Lasso step in ``beta``.
    Used as an independent check of the transformed route. Each Lasso step
    is solved to a tight KKT tolerance, so the pair is stationary once the
    gradient in ``b`` after a ``beta`` step falls below ``tol``. An objective
    decrease test stops too early here because block steps shrink slowly.
    """
    Xc, yc, _, _ = _center(X, Y)
    cfg = cfg or sparse.LassoConfig(tol=1e-13)
    T = fit_transform(Xc, Identity())
    n, p = Xc.shape
    beta = np.zeros(p)
    b = np.zeros(p)
    for _ in range(max_rounds):
        b = ridge_coef(Xc, yc - Xc @ beta, lambda2, T)
        beta = sparse.lasso(Xc, yc - Xc @ b, lambda1, cfg, beta_init=beta).beta
        r = yc - Xc @ (beta + b)
        grad_b = 2.0 * (lambda2 * b - Xc.T @ r / n)
        if np.max(np.abs(grad_b)) <= tol:
            break
    return beta, b


def population_bias(cov_x: ArrayLike, cov_xh: ArrayLike, delta: ArrayLike) -> NDArray[np.float64]:
    """``b = Cov(X)^-1 Cov(X, H) delta``."""
    S = np.asarray(cov_x, dtype=np.float64)
    C = np.asarray(cov_xh, dtype=np.float64).reshape(S.shape[0], -1)
    d = np.asarray(delta, dtype=np.float64).reshape(-1)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise DegenerateProblemError("Cov(X) is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, C @ d)


def one_factor_bias(loading: ArrayLike, xi: float, delta: float) -> NDArray[np.float64]:
    """Closed 1-factor form ``(g^T g + xi^2 I)^-1 g^T delta`` for a loading row ``g``."""
    g = np.asarray(loading, dtype=np.float64).reshape(1, -1)
    p = g.shape[1]
    return population_bias(g.T @ g + xi**2 * np.eye(p), g.T, [delta])
