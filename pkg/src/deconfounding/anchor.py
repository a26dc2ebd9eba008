"""Anchor regression and its limits: two-stage least squares and the diluted causal parameter.

Anchors are centered before projecting, so ``Pi_A`` never contains the
constant vector and the intercept is handled by centering ``X`` and ``Y``.
For ``gamma`` in ``[0, inf)`` the anchor estimator is least squares (or the
Lasso) on ``W X, W Y`` with ``W = I - (1 - sqrt(gamma)) Pi_A``; ``gamma = inf``
is a lexicographic solve.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import sparse
from .errors import DegenerateProblemError, InvalidInputError
from .linalg import (Projector, apply_proj, as_matrix, default_rank_tol, null_space, numerical_rank,
                     projector_from, pseudo_solve, residualize)

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .sem import AnchorSemSpec, PopulationMoments


class ProjectabilityWarning(UserWarning):
    """The diluted causal parameter was requested where projectability fails."""


@dataclass(frozen=True)
class AnchorConfig:
    gamma: float = 1.0
    lambda_: float = 0.0
    rank_tol: float | None = None

    def __post_init__(self) -> None:
        if math.isnan(self.gamma) or self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0 or inf, got {self.gamma}")
        if not (self.lambda_ >= 0 and math.isfinite(self.lambda_)):
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lambda_}")


@dataclass
class AnchorFit:
    """``anchor_objective`` is the two-term objective; at ``gamma = inf`` it is
    its limit divided by ``gamma``, i.e. ``||Pi_A R||^2 / n``."""

    beta: NDArray[np.float64]
    intercept: float
    gamma: float
    anchor_objective: float
    # sample covariance A^T R / n between centered anchors and residuals
    residual_anchor_correlation: NDArray[np.float64]
    rank_deficient: bool = False
    lambda_: float = 0.0

    def predict(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(X, dtype=np.float64) @ self.beta + self.intercept


@dataclass(frozen=True)
class Projectability:
    holds: bool
    rank_ax: int
    rank_axy: int


def _prep(X: ArrayLike, Y: ArrayLike, A: ArrayLike):
    X = as_matrix(X, "X")
    y = np.asarray(Y, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"Y must be a vector with {X.shape[0]} entries")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("Y contains non-finite entries")
    A = as_matrix(A, "A")
    if A.shape[0] != X.shape[0]:
        raise InvalidInputError(f"row mismatch: X has {X.shape[0]} rows, A has {A.shape[0]}")
    return X, y, A


def anchor_projector(A: ArrayLike, tol: float | None = None) -> Projector:
    """Projector onto the span of the centered anchors."""
    A = as_matrix(A, "A")
    return projector_from(A - A.mean(axis=0), tol)


def _w(P: Projector, M: NDArray[np.float64], gamma: float) -> NDArray[np.float64]:
    if gamma == 1.0:
        return M.copy()
    return M - (1.0 - math.sqrt(gamma)) * apply_proj(P, M)


def anchor_transform(X: ArrayLike, Y: ArrayLike, A: ArrayLike, gamma: float,
                     tol: float | None = None) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(W X, W Y)`` with ``W = I - (1 - sqrt(gamma)) Pi_A``."""
    X, y, A = _prep(X, Y, A)
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise InvalidInputError(f"anchor_transform needs a finite gamma >= 0, got {gamma}")
    P = anchor_projector(A, tol)
    return _w(P, X, gamma), _w(P, y, gamma)


def environment_dummies(labels: Sequence) -> tuple[NDArray[np.float64], list]:
    """One indicator column per distinct label, levels in sorted order."""
    labels = list(labels)
    if not labels:
        raise InvalidInputError("no environment labels")
    levels = sorted(set(labels), key=lambda v: (str(type(v)), v))
    pos = {v: k for k, v in enumerate(levels)}
    D = np.zeros((len(labels), len(levels)))
    D[np.arange(len(labels)), [pos[v] for v in labels]] = 1.0
    return D, levels


def _objective(P: Projector, r: NDArray[np.float64], gamma: float) -> float:
    n = r.shape[0]
    pr = apply_proj(P, r)
    rr = r - pr
    return float((rr @ rr + gamma * (pr @ pr)) / n)


def anchor_objective(b: ArrayLike, X: ArrayLike, Y: ArrayLike, A: ArrayLike, gamma: float,
                     tol: float | None = None, intercept: float | None = None) -> float:
    """``||(I - Pi_A) R||^2 / n + gamma ||Pi_A R||^2 / n`` with ``R = Y - X b - intercept``.

    When ``intercept`` is omitted the residual is centered, which is what the
    fitted intercept of :func:`anchor_fit` achieves.
    """
    X, y, A = _prep(X, Y, A)
    if math.isnan(gamma) or gamma < 0 or math.isinf(gamma):
        raise InvalidInputError(f"gamma must be finite and >= 0, got {gamma}")
    r = y - X @ np.asarray(b, dtype=np.float64).reshape(-1)
    r = r - r.mean() if intercept is None else r - intercept
    return _objective(anchor_projector(A, tol), r, gamma)


def population_anchor_objective(b: ArrayLike, moments: AnchorSemSpec | PopulationMoments, gamma: float) -> float:
    """Population value ``E[((I - P_A) R)^2] + gamma E[(P_A R)^2]`` for ``R = Y - X^T b``.

    ``P_A`` is the linear projection on the anchors, so
    ``E[(P_A R)^2] = Cov(A, R)^T E[AA^T]^+ Cov(A, R)``.
    """
    mom = _moments(moments)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    var_r = mom.sigma_yy - 2.0 * b @ mom.sigma_xy + b @ mom.sigma_xx @ b
    c = mom.sigma_ay - mom.sigma_ax @ b
    explained = float(c @ np.linalg.pinv(mom.cov_aa) @ c)
    return float(var_r - explained + gamma * explained)


def _moments(obj) -> PopulationMoments:
    from .sem import PopulationMoments, population_moments

    return obj if isinstance(obj, PopulationMoments) else population_moments(obj)


def _centered(X, y, A):
    return X - X.mean(axis=0), y - y.mean(), A - A.mean(axis=0)


def tsls(X: ArrayLike, Y: ArrayLike, A: ArrayLike, rank_tol: float | None = None) -> NDArray[np.float64]:
    """Minimum-norm minimizer of ``||Pi_A (Y - X beta)||^2``."""
    X, y, A = _prep(X, Y, A)
    Xc, yc, Ac = _centered(X, y, A)
    P = projector_from(Ac, rank_tol)
    PX = apply_proj(P, Xc)
    if P.rank == 0 or numerical_rank(PX, rank_tol) == 0:
        raise DegenerateProblemError("Pi_A X has rank 0: the anchors carry no information on X")
    return pseudo_solve(PX, apply_proj(P, yc), rank_tol)


def _lexicographic(F: NDArray[np.float64], g: NDArray[np.float64], S: NDArray[np.float64],
                   s: NDArray[np.float64], tol: float | None) -> NDArray[np.float64]:
    """Among minimizers of ``||F b - g||^2``, minimize ``b^T S b - 2 s^T b``."""
    b0 = pseudo_solve(F, g, tol)
    N = null_space(F, tol)
    if N.shape[1] == 0:
        return b0
    z = pseudo_solve(N.T @ S @ N, N.T @ (s - S @ b0), tol)
    return b0 + N @ z


def diluted_causal(X: ArrayLike, Y: ArrayLike, A: ArrayLike, rank_tol: float | None = None, *,
                   check: bool = True) -> NDArray[np.float64]:
    """Limit of the anchor coefficient as ``gamma -> inf``.

    Among the minimizers of ``||Pi_A (Y - X b)||^2`` this returns the one with
    the smallest ``||(I - Pi_A)(Y - X b)||^2``. The second problem is solved
    on the first one's solution set, parameterized by the null space of
    ``Pi_A X``. Emits :class:`ProjectabilityWarning` if ``check`` is set and
    the sample moments fail the rank condition.
    """
    X, y, A = _prep(X, Y, A)
    Xc, yc, Ac = _centered(X, y, A)
    P = projector_from(Ac, rank_tol)
    PX = apply_proj(P, Xc)
    if P.rank == 0 or numerical_rank(PX, rank_tol) == 0:
        raise DegenerateProblemError("Pi_A X has rank 0: the anchors carry no information on X")
    if check:
        pr = projectability(A, X, y)
        if not pr.holds:
            warnings.warn(f"projectability fails (rank {pr.rank_ax} vs {pr.rank_axy})", ProjectabilityWarning,
                          stacklevel=2)
    RX = residualize(P, Xc)
    Ry = residualize(P, yc)
    b0 = pseudo_solve(PX, apply_proj(P, yc), rank_tol)
    N = null_space(PX, rank_tol)
    if N.shape[1] == 0:
        return b0
    z = pseudo_solve(RX @ N, Ry - RX @ b0, rank_tol)
    return b0 + N @ z


def population_diluted_causal(moments: AnchorSemSpec | PopulationMoments,
                              rank_tol: float | None = None) -> NDArray[np.float64]:
    """Diluted causal parameter from population second moments.

    First stage: ``E[(P_A R)^2] = ||L^-1 (S_AY - S_AX b)||^2`` with
    ``S_AA = L L^T``. Second stage: the partial (given ``A``) second moment
    of ``R``.
    """
    mom = _moments(moments)
    Saa = mom.cov_aa
    evals, evecs = np.linalg.eigh(Saa)
    tol = default_rank_tol(Saa.shape) if rank_tol is None else rank_tol
    keep = evals > tol * max(evals.max(), 0.0) if evals.size and evals.max() > 0 else np.zeros(evals.size, bool)
    # whitening on the range of S_AA (a Cholesky factor when S_AA is regular)
    Winv = evecs[:, keep] / np.sqrt(evals[keep])
    F = Winv.T @ mom.sigma_ax
    g = Winv.T @ mom.sigma_ay
    if F.shape[0] == 0 or numerical_rank(F, rank_tol) == 0:
        raise DegenerateProblemError("Cov(A, X) has rank 0")
    Saa_pinv = Winv @ Winv.T
    Sxa = mom.sigma_ax.T
    S = mom.sigma_xx - Sxa @ Saa_pinv @ Sxa.T
    s = mom.sigma_xy - Sxa @ Saa_pinv @ mom.sigma_ay
    return _lexicographic(F, g, S, s, rank_tol)


def _rank_pair(Cax: NDArray[np.float64], Cay: NDArray[np.float64], tol: float) -> Projectability:
    joint = np.column_stack([Cax, Cay])
    d_joint = np.linalg.svd(joint, compute_uv=False)
    scale = d_joint[0] if d_joint.size else 0.0
    if scale == 0.0:
        return Projectability(True, 0, 0)
    d_ax = np.linalg.svd(Cax, compute_uv=False)
    r1 = int(np.sum(d_ax > tol * scale))
    r2 = int(np.sum(d_joint > tol * scale))
    return Projectability(r1 == r2, r1, r2)


def projectability(A: ArrayLike, X: ArrayLike, Y: ArrayLike, tol: float = 1e-8) -> Projectability:
    """Rank condition ``rank Cov(A, X) = rank [Cov(A, X), Cov(A, Y)]`` on sample moments.

    Both ranks count singular values above ``tol`` times the largest singular
    value of the joint matrix.
    """
    X, y, A = _prep(X, Y, A)
    Xc, yc, Ac = _centered(X, y, A)
    n = X.shape[0]
    return _rank_pair(Ac.T @ Xc / n, Ac.T @ yc / n, tol)


def projectability_moments(sigma_ax: ArrayLike, sigma_ay: ArrayLike, tol: float = 1e-8) -> Projectability:
    """The same rank check on supplied (population) cross-moments ``Cov(A, X)`` (r x p) and ``Cov(A, Y)``."""
    Cax = np.atleast_2d(np.asarray(sigma_ax, dtype=np.float64))
    Cay = np.asarray(sigma_ay, dtype=np.float64).reshape(-1)
    if Cay.shape[0] != Cax.shape[0]:
        raise InvalidInputError("Cov(A, X) and Cov(A, Y) must have the same number of rows")
    return _rank_pair(Cax, Cay, tol)


def anchor_fit(X: ArrayLike, Y: ArrayLike, A: ArrayLike, cfg: AnchorConfig | None = None, *,
               lasso_cfg: sparse.LassoConfig | None = None) -> AnchorFit:
    """Anchor regression estimate for one ``gamma``.

    ``lambda_ = 0`` gives (minimum-norm) least squares on the transformed
    data, flagged through ``rank_deficient`` when the design is singular;
    ``lambda_ > 0`` uses the Lasso. ``gamma = inf`` returns
    :func:`diluted_causal` and has no penalized version.
    """
    cfg = cfg or AnchorConfig()
    X, y, A = _prep(X, Y, A)
    xbar, ybar = X.mean(axis=0), float(y.mean())
    Xc, yc, Ac = _centered(X, y, A)
    P = projector_from(Ac, cfg.rank_tol)
    gamma = float(cfg.gamma)
    deficient = False
    if math.isinf(gamma):
        if cfg.lambda_ > 0:
            raise InvalidInputError("a penalty needs a finite gamma")
        beta = diluted_causal(X, y, A, cfg.rank_tol, check=False)
        deficient = numerical_rank(apply_proj(P, Xc), cfg.rank_tol) < X.shape[1]
        # objective / gamma in the limit: the first-stage value alone
        pr = apply_proj(P, yc - Xc @ beta)
        obj = float(pr @ pr / X.shape[0])
    else:
        Xt, yt = _w(P, Xc, gamma), _w(P, yc, gamma)
        if cfg.lambda_ > 0:
            beta = sparse.lasso(Xt, yt, cfg.lambda_, lasso_cfg).beta
        else:
            deficient = numerical_rank(Xt, cfg.rank_tol) < X.shape[1]
            beta = pseudo_solve(Xt, yt, cfg.rank_tol)
        obj = _objective(P, yc - Xc @ beta, gamma)
    r = yc - Xc @ beta
    corr = Ac.T @ r / X.shape[0]
    return AnchorFit(beta=beta, intercept=float(ybar - xbar @ beta), gamma=gamma, anchor_objective=obj,
                     residual_anchor_correlation=corr, rank_deficient=bool(deficient), lambda_=cfg.lambda_)


def anchor_path(X: ArrayLike, Y: ArrayLike, A: ArrayLike, gammas: Sequence[float], lambda_: float = 0.0,
                rank_tol: float | None = None) -> list[AnchorFit]:
    """:func:`anchor_fit` over a grid of ``gamma`` values."""
    return [anchor_fit(X, Y, A, AnchorConfig(float(g), lambda_, rank_tol)) for g in gammas]

