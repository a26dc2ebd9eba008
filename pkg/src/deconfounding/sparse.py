"""Lasso by coordinate descent, with the path-based tools built on it (K-fold CV, stability selection).

The objective throughout is ``||Y - X beta - intercept||^2 / n + lam * ||beta||_1``.
The intercept is handled by centering ``X`` and ``Y`` before the solve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from ._cd import coordinate_descent
from .errors import DegenerateProblemError, InvalidInputError
from .linalg import as_matrix, numerical_rank, pseudo_solve

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class LassoConfig:
    max_iter: int = 100_000
    tol: float = 1e-7
    standardize: bool = False

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")


@dataclass
class SparseFit:
    beta: NDArray[np.float64]
    intercept: float
    lambda_: float
    objective: float
    n_iter: int
    converged: bool
    kkt_violation: float = 0.0
    objective_trace: NDArray[np.float64] = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def active_set(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.beta)

    def predict(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(X, dtype=np.float64) @ self.beta + self.intercept


@dataclass
class CvResult:
    lambda_grid: NDArray[np.float64]
    mean_cv_error: NDArray[np.float64]
    se: NDArray[np.float64]
    lambda_min: float
    lambda_1se: float
    folds: int
    fold_errors: NDArray[np.float64] = field(repr=False, default_factory=lambda: np.empty((0, 0)))


@dataclass
class StabilityResult:
    frequencies: NDArray[np.float64]
    threshold: float
    selected: NDArray[np.int64]
    subsamples: int


def _prepare(X: ArrayLike, Y: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    X = as_matrix(X, "X")
    y = np.asarray(Y, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise InvalidInputError("Y must be a vector")
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"row mismatch: X has {X.shape[0]} rows, Y has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("Y contains non-finite entries")
    return X, y


def lambda_max(X: ArrayLike, Y: ArrayLike) -> float:
    """Smallest ``lam`` with the all-zero solution: ``2 ||Xc^T (Y - Ybar)||_inf / n``."""
    X, y = _prepare(X, Y)
    Xc = X - X.mean(axis=0)
    return float(2.0 * np.max(np.abs(Xc.T @ (y - y.mean()))) / X.shape[0])


def default_grid(X: ArrayLike, Y: ArrayLike, n_lambda: int = 50, ratio: float = 0.01) -> NDArray[np.float64]:
    """``n_lambda`` log-spaced values from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(X, Y)
    if lmax == 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, ratio * lmax, n_lambda)


def _scales(Xc: NDArray[np.float64], standardize: bool) -> NDArray[np.float64]:
    if not standardize:
        return np.ones(Xc.shape[1])
    s = np.sqrt(np.mean(Xc**2, axis=0))
    s[s == 0] = 1.0
    return s


# paths precompute X^T X when it fits in this many entries
_GRAM_MAX_ENTRIES = 2**23
_NO_GRAM = np.empty((0, 0))


def _solve(Xf, yc, lam, beta0, cfg: LassoConfig, keep_trace: bool, gram=_NO_GRAM):
    beta = np.array(beta0, dtype=np.float64, copy=True)
    trace = np.empty(min(cfg.max_iter, 100_000) if keep_trace else 0)
    sweeps, viol, n_trace = coordinate_descent(Xf, yc, beta, float(lam), int(cfg.max_iter), float(cfg.tol), trace,
                                               gram)
    return beta, int(sweeps), float(viol), trace[:n_trace]


def _finish(X, y, xbar, ybar, scale, beta_s, lam, sweeps, viol, cfg, trace) -> SparseFit:
    beta = beta_s / scale
    intercept = float(ybar - xbar @ beta)
    resid = y - X @ beta - intercept
    # penalty acts on the (possibly standardized) solver coefficients
    obj = float(resid @ resid / X.shape[0] + lam * np.sum(np.abs(beta_s)))
    return SparseFit(beta=beta, intercept=intercept, lambda_=float(lam), objective=obj, n_iter=sweeps,
                     converged=viol <= cfg.tol, kkt_violation=viol, objective_trace=trace)


def lasso(X: ArrayLike, Y: ArrayLike, lam: float, cfg: LassoConfig | None = None, *,
          beta_init: ArrayLike | None = None, keep_trace: bool = False) -> SparseFit:
    """Lasso fit at a single ``lam``.

    ``lam = 0`` gives least squares and requires ``rank(X) = p`` after centering.
    Non-convergence within ``cfg.max_iter`` sweeps is reported through
    ``SparseFit.converged`` rather than raised.
    """
    cfg = cfg or LassoConfig()
    X, y = _prepare(X, Y)
    if not (lam >= 0 and math.isfinite(lam)):
        raise InvalidInputError(f"lambda must be finite and >= 0, got {lam}")
    xbar = X.mean(axis=0)
    ybar = float(y.mean())
    Xc = X - xbar
    if lam == 0 and numerical_rank(Xc) < X.shape[1]:
        raise DegenerateProblemError("lambda = 0 requires a full column rank (centered) design")
    scale = _scales(Xc, cfg.standardize)
    Xf = np.asfortranarray(Xc / scale)
    if lam == 0:
        # plain least squares: solved directly, coordinate descent would stop at the KKT tolerance
        beta_s = pseudo_solve(Xf, y - ybar)
        viol = float(np.max(np.abs(2.0 * Xf.T @ (y - ybar - Xf @ beta_s) / X.shape[0])))
        return _finish(X, y, xbar, ybar, scale, beta_s, lam, 0, viol, cfg, np.empty(0))
    b0 = np.zeros(X.shape[1]) if beta_init is None else np.asarray(beta_init, dtype=np.float64) * scale
    beta_s, sweeps, viol, trace = _solve(Xf, y - ybar, lam, b0, cfg, keep_trace)
    return _finish(X, y, xbar, ybar, scale, beta_s, lam, sweeps, viol, cfg, trace)


def lasso_path(X: ArrayLike, Y: ArrayLike, grid: Sequence[float] | None = None,
               cfg: LassoConfig | None = None) -> list[SparseFit]:
    """Warm-started fits along a strictly descending ``grid`` (default: :func:`default_grid`)."""
    return list(_iter_path(X, Y, grid, cfg))


def _iter_path(X: ArrayLike, Y: ArrayLike, grid: Sequence[float] | None, cfg: LassoConfig | None):
    cfg = cfg or LassoConfig()
    X, y = _prepare(X, Y)
    lams = default_grid(X, y) if grid is None else np.asarray(grid, dtype=np.float64)
    if lams.size == 0:
        raise InvalidInputError("empty lambda grid")
    if np.any(np.diff(lams) >= 0):
        raise InvalidInputError("lambda grid must be strictly descending")
    if np.any(lams < 0):
        raise InvalidInputError("lambda grid must be non-negative")
    xbar = X.mean(axis=0)
    ybar = float(y.mean())
    Xc = X - xbar
    if lams[-1] == 0 and numerical_rank(Xc) < X.shape[1]:
        raise DegenerateProblemError("lambda = 0 requires a full column rank (centered) design")
    scale = _scales(Xc, cfg.standardize)
    Xf = np.asfortranarray(Xc / scale)
    yc = y - ybar
    p = X.shape[1]
    gram = Xf.T @ Xf if len(lams) > 1 and p * p <= _GRAM_MAX_ENTRIES else _NO_GRAM
    beta = np.zeros(p)
    for lam in lams:
        beta, sweeps, viol, trace = _solve(Xf, yc, lam, beta, cfg, False, gram)
        yield _finish(X, y, xbar, ybar, scale, beta, lam, sweeps, viol, cfg, trace)


def kkt_violation(X: ArrayLike, Y: ArrayLike, fit: SparseFit) -> float:
    """Largest KKT violation of ``fit``, recomputed from scratch (unstandardized objective)."""
    X, y = _prepare(X, Y)
    r = y - X @ fit.beta - fit.intercept
    g = 2.0 * (X - X.mean(axis=0)).T @ r / X.shape[0]
    lam = fit.lambda_
    zero = fit.beta == 0
    v = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g - lam * np.sign(fit.beta)))
    return float(np.max(v)) if v.size else 0.0


def fold_assignment(n: int, folds: int, seed: int) -> NDArray[np.int64]:
    """Seed-deterministic balanced partition of ``range(n)`` into ``folds`` labels."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(perm, folds)):
        labels[chunk] = k
    return labels


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cv_lasso(X: ArrayLike, Y: ArrayLike, folds: int = 10, grid: Sequence[float] | None = None,
             cfg: LassoConfig | None = None, seed: int = 0, threads: int = 1) -> CvResult:
    """K-fold cross-validation of the Lasso path on the data as given.

    Pass already-transformed data to cross-validate a deconfounded fit.
    """
    cfg = cfg or LassoConfig()
    X, y = _prepare(X, Y)
    n = X.shape[0]
    if folds < 2:
        raise InvalidInputError("folds must be >= 2")
    if n < folds:
        raise InvalidInputError(f"n={n} is smaller than folds={folds}")
    lams = default_grid(X, y) if grid is None else np.asarray(grid, dtype=np.float64)
    labels = fold_assignment(n, folds, seed)

    def run(k: int) -> NDArray[np.float64]:
        test = labels == k
        path = lasso_path(X[~test], y[~test], lams, cfg)
        Xt, yt = X[test], y[test]
        return np.array([np.mean((yt - f.predict(Xt)) ** 2) for f in path])

    errs = np.vstack(_map(run, range(folds), threads))
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(folds)
    i_min = int(np.argmin(mean))
    ok = mean <= mean[i_min] + se[i_min]
    lambda_1se = float(np.max(lams[ok]))
    return CvResult(lambda_grid=lams, mean_cv_error=mean, se=se, lambda_min=float(lams[i_min]),
                    lambda_1se=lambda_1se, folds=folds, fold_errors=errs)


def stability_grid(X: ArrayLike, Y: ArrayLike, n_lambda: int = 10) -> NDArray[np.float64]:
    """Log-spaced grid over ``[0.5, 1] * lambda_max`` (a convenience; not the default)."""
    lmax = lambda_max(X, Y)
    if lmax == 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, 0.5 * lmax, n_lambda)


def default_stability_size(p: int, threshold: float, expected_false: float = 0.1) -> int:
    """Largest ``q`` with ``q^2 / ((2 threshold - 1) p) <= expected_false``, at least 1.

    The left side bounds the expected number of noise variables whose
    selection frequency reaches ``threshold`` when each subsample keeps ``q``
    variables.
    """
    q = math.floor(math.sqrt(expected_false * (2.0 * threshold - 1.0) * p))
    return max(1, min(p, q))


def _first_q(X: NDArray[np.float64], y: NDArray[np.float64], q: int, cfg: LassoConfig) -> NDArray[np.bool_]:
    hit = np.zeros(X.shape[1], dtype=bool)
    if lambda_max(X, y) == 0.0:
        return hit
    for f in _iter_path(X, y, default_grid(X, y, n_lambda=100, ratio=1e-3), cfg):
        act = f.beta != 0
        if np.count_nonzero(hit | act) > q:
            break
        hit |= act
    return hit


def stability_selection(X: ArrayLike, Y: ArrayLike, grid: Sequence[float] | None = None,
                        subsamples: int = 100, threshold: float = 0.6, seed: int = 0,
                        cfg: LassoConfig | None = None, threads: int = 1, q: int | None = None) -> StabilityResult:
    """Selection frequencies over half-subsamples.

    With an explicit ``grid`` a variable counts as selected on a subsample if
    it is active anywhere along the Lasso path on ``grid``. Without one, each
    subsample follows its own path from its ``lambda_max`` and keeps the
    variables that enter before more than ``q`` are active (default
    :func:`default_stability_size` at ``threshold``). Each subsample draws
    its rows from its own child seed, so results do not depend on scheduling.
    """
    cfg = cfg or LassoConfig()
    X, y = _prepare(X, Y)
    if subsamples < 2:
        raise InvalidInputError("subsamples must be >= 2")
    if not (0.5 < threshold <= 1.0):
        raise InvalidInputError("threshold must lie in (0.5, 1]")
    n, p = X.shape
    if q is None:
        q = default_stability_size(p, threshold)
    elif not 1 <= q <= p:
        raise InvalidInputError(f"q must lie in [1, {p}]")
    lams = None if grid is None else np.asarray(grid, dtype=np.float64)
    children = np.random.SeedSequence(seed).spawn(subsamples)
    half = n // 2

    def run(ss: np.random.SeedSequence) -> NDArray[np.bool_]:
        rows = np.sort(np.random.default_rng(ss).choice(n, size=half, replace=False))
        if lams is None:
            return _first_q(X[rows], y[rows], q, cfg)
        hit = np.zeros(p, dtype=bool)
        for f in lasso_path(X[rows], y[rows], lams, cfg):
            hit |= f.beta != 0
        return hit

    hits = np.vstack(_map(run, children, threads))
    freq = hits.mean(axis=0)
    return StabilityResult(frequencies=freq, threshold=float(threshold),
                           selected=np.flatnonzero(freq >= threshold), subsamples=subsamples)
