"""Coordinate-wise inference with the (doubly) debiased Lasso.

For coordinate ``j`` the nodewise transform is fitted on ``X^(-j)`` and the
outcome transform on the full ``X``:

1. nodewise: Lasso of ``F_j X^(j)`` on ``F_j X^(-j)``, residual ``Z``;
2. outcome: Lasso of ``F Y`` on ``F X`` giving ``beta_init``;
3. estimate ``Z^T Y_j / (Z^T X_j^(j)) - B_hat`` with ``Y_j = F_j Y``, ``X_j = F_j X``
   and ``B_hat = sum_{k != j} Z^T X_j^(k) beta_init_k / (Z^T X_j^(j))``.

With identity transforms this is the ordinary debiased Lasso.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import stats

from . import sparse
from .deconfound import CV
from .errors import DegenerateProblemError, InstabilityError, InvalidInputError
from .spectral import Identity, SpectralTransform, TransformKind, Trim, fit_transform

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

MIN_N = 20


@dataclass(frozen=True)
class DdLassoConfig:
    transform_y_reg: TransformKind = field(default_factory=Trim)
    transform_nodewise: TransformKind = field(default_factory=Trim)
    lambda_y: float | str = CV
    lambda_nodewise: float | str = CV
    confidence_level: float = 0.95
    folds: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.confidence_level < 1.0:
            raise InvalidInputError("confidence_level must lie in (0, 1)")


@dataclass
class InferenceResult:
    j: int
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    method: str

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def as_row(self) -> tuple:
        return (self.j, self.estimate, self.se, self.ci_low, self.ci_high, self.p_value)


@dataclass
class NodewiseFit:
    Z: NDArray[np.float64]
    transform: SpectralTransform
    lambda_: float
    gamma: NDArray[np.float64]


@dataclass
class OutcomeFit:
    beta: NDArray[np.float64]
    sigma2: float
    lambda_: float
    transform: SpectralTransform


def _lambda(X, y, lam, cfg: DdLassoConfig | None, folds: int, seed: int) -> float:
    if isinstance(lam, str):
        if lam != CV:
            raise InvalidInputError(f"lambda must be a number or 'cv', got {lam!r}")
        return sparse.cv_lasso(X, y, folds=folds, seed=seed).lambda_min
    return float(lam)


def _centered(X: ArrayLike, Y: ArrayLike | None = None):
    X, y = sparse._prepare(X, np.zeros(np.shape(X)[0]) if Y is None else Y)
    if X.shape[0] < 2:
        raise InvalidInputError("need at least two rows")
    return X - X.mean(axis=0), y - y.mean()


def nodewise_fit(X: ArrayLike, j: int, kind: TransformKind | None = None, lam: float | str = CV, *,
                 folds: int = 10, seed: int = 0, centered: bool = False) -> NodewiseFit:
    """Nodewise regression of column ``j`` on the others in transformed space."""
    Xc = np.asarray(X, dtype=np.float64) if centered else _centered(X)[0]
    n, p = Xc.shape
    if p < 2:
        raise InvalidInputError("nodewise regression needs p >= 2")
    if not 0 <= j < p:
        raise InvalidInputError(f"coordinate {j} out of range for p={p}")
    xj = Xc[:, j]
    if np.max(np.abs(xj)) == 0.0:
        raise DegenerateProblemError(f"column {j} is constant")
    rest = np.delete(Xc, j, axis=1)
    T = fit_transform(rest, kind if kind is not None else Identity())
    rest_t = T.apply(rest)
    xj_t = T.apply(xj)
    lam_val = _lambda(rest_t, xj_t, lam, None, folds, seed)
    fit = sparse.lasso(rest_t, xj_t, lam_val)
    Z = xj_t - rest_t @ fit.beta - fit.intercept
    return NodewiseFit(Z=Z, transform=T, lambda_=lam_val, gamma=fit.beta)


def nodewise_residual(X: ArrayLike, j: int, kind: TransformKind | None = None, lam: float | str = CV,
                      **kwargs) -> NDArray[np.float64]:
    """Residual ``Z^(j)`` of the nodewise Lasso (transformed space)."""
    return nodewise_fit(X, j, kind, lam, **kwargs).Z


def debias_bias_estimate(Z: ArrayLike, X_t: ArrayLike, beta_init: ArrayLike, j: int) -> float:
    """``B_hat = sum_{k != j} Z^T X^(k) beta_k / (Z^T X^(j))``."""
    Z = np.asarray(Z, dtype=np.float64)
    X_t = np.asarray(X_t, dtype=np.float64)
    b = np.asarray(beta_init, dtype=np.float64).copy()
    n = X_t.shape[0]
    denom = float(Z @ X_t[:, j])
    if abs(denom) < 1e-10 * n:
        raise InstabilityError(f"Z^T X^(j) = {denom:.3g} is numerically zero for coordinate {j}")
    b[j] = 0.0
    return float((Z @ X_t) @ b / denom)


def noise_variance(X_t: ArrayLike, Y_t: ArrayLike, beta: ArrayLike, intercept: float = 0.0,
                   dof: float | None = None) -> float:
    """``||Y_t - X_t beta||^2 / max(dof - s_hat, dof / 2)`` with ``dof = n`` by default.

    After a spectral transform ``F`` the residual degrees of freedom are
    ``tr(F^2)``, which is what callers pass as ``dof``.
    """
    X_t = np.asarray(X_t, dtype=np.float64)
    r = np.asarray(Y_t, dtype=np.float64) - X_t @ np.asarray(beta) - intercept
    n = X_t.shape[0]
    dof = float(n if dof is None else dof)
    s_hat = int(np.count_nonzero(beta))
    if s_hat >= n:
        raise DegenerateProblemError(f"active set size {s_hat} >= n = {n}")
    return float(r @ r / max(dof - s_hat, dof / 2.0))


def outcome_fit(X: ArrayLike, Y: ArrayLike, kind: TransformKind | None = None, lam: float | str = CV, *,
                folds: int = 10, seed: int = 0, centered: bool = False) -> OutcomeFit:
    """Lasso of ``F Y`` on ``F X`` plus the noise variance estimate."""
    if centered:
        Xc, yc = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    else:
        Xc, yc = _centered(X, Y)
    T = fit_transform(Xc, kind if kind is not None else Identity())
    Xt, yt = T.apply(Xc), T.apply(yc)
    lam_val = _lambda(Xt, yt, lam, None, folds, seed)
    fit = sparse.lasso(Xt, yt, lam_val)
    sigma2 = noise_variance(Xt, yt, fit.beta, fit.intercept, dof=T.trace_sq())
    return OutcomeFit(beta=fit.beta, sigma2=sigma2, lambda_=lam_val, transform=T)


def _finish(j, Xc, yc, node: NodewiseFit, out: OutcomeFit, level: float, method: str) -> InferenceResult:
    T = node.transform
    X_j = T.apply(Xc)
    y_j = T.apply(yc)
    Z = node.Z
    denom = float(Z @ X_j[:, j])
    bias = debias_bias_estimate(Z, X_j, out.beta, j)
    est = float(Z @ y_j) / denom - bias
    # noise enters the numerator as Z^T F_j eps
    se = float(np.sqrt(out.sigma2) * np.linalg.norm(T.apply(Z)) / abs(denom))
    zq = float(stats.norm.ppf(0.5 + level / 2.0))
    if se > 0:
        pval = float(2.0 * stats.norm.sf(abs(est) / se))
    else:
        pval = 0.0 if est != 0 else 1.0
    return InferenceResult(j=j, estimate=est, se=se, ci_low=est - zq * se, ci_high=est + zq * se,
                           p_value=pval, method=method)


def _check(X, Y):
    Xc, yc = _centered(X, Y)
    if Xc.shape[0] < MIN_N:
        raise InvalidInputError(f"need n >= {MIN_N}, got {Xc.shape[0]}")
    return Xc, yc


def dd_lasso_many(X: ArrayLike, Y: ArrayLike, coords: Sequence[int] | None = None,
                  cfg: DdLassoConfig | None = None, *, method: str = "doubly_debiased",
                  threads: int = 1) -> list[InferenceResult]:
    """Doubly debiased Lasso for several coordinates sharing one outcome regression."""
    cfg = cfg or DdLassoConfig()
    Xc, yc = _check(X, Y)
    coords = range(Xc.shape[1]) if coords is None else coords
    out = outcome_fit(Xc, yc, cfg.transform_y_reg, cfg.lambda_y, folds=cfg.folds, seed=cfg.seed, centered=True)

    def one(j: int) -> InferenceResult:
        node = nodewise_fit(Xc, j, cfg.transform_nodewise, cfg.lambda_nodewise, folds=cfg.folds,
                            seed=cfg.seed, centered=True)
        return _finish(j, Xc, yc, node, out, cfg.confidence_level, method)

    if threads <= 1:
        return [one(j) for j in coords]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, coords))


def dd_lasso(X: ArrayLike, Y: ArrayLike, j: int, cfg: DdLassoConfig | None = None) -> InferenceResult:
    """Doubly debiased Lasso estimate for ``beta_j`` with a confidence interval and two-sided p-value."""
    return dd_lasso_many(X, Y, [j], cfg)[0]


def identity_config(lambda_y: float | str = CV, lambda_nodewise: float | str = CV, level: float = 0.95,
                    **kwargs) -> DdLassoConfig:
    return DdLassoConfig(transform_y_reg=Identity(), transform_nodewise=Identity(), lambda_y=lambda_y,
                         lambda_nodewise=lambda_nodewise, confidence_level=level, **kwargs)


def debiased_lasso(X: ArrayLike, Y: ArrayLike, j: int, lambda_y: float | str = CV,
                   lambda_nodewise: float | str = CV, level: float = 0.95, **kwargs) -> InferenceResult:
    """Plain debiased Lasso: the same pipeline with identity transforms."""
    cfg = identity_config(lambda_y, lambda_nodewise, level, **kwargs)
    return dd_lasso_many(X, Y, [j], cfg, method="debiased")[0]
