"""Structural-equation-model simulators and their analytic population oracles.

Two families are covered:

* dense hidden confounding, ``X = H Gamma + E_X`` and ``Y = X beta0 + H delta + E_Y``;
* linear anchor SEMs ``Z = B Z + eps + M A`` over ``Z = (X, Y, H)``, with their
  shift-perturbed versions where ``M A`` is replaced by ``v = M delta``.

Coordinates of ``Z`` are ordered as ``X`` (``p`` entries), then ``Y``, then
``H`` (``q`` entries). Population moments are exact (all noise is Gaussian).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import InvalidInputError
from .linalg import pseudo_solve

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


@dataclass
class Dataset:
    """Observed data: design ``X`` (n x p), response ``Y`` (n), optional anchors ``A`` (n x r)."""

    X: NDArray[np.float64]
    Y: NDArray[np.float64]
    A: NDArray[np.float64] | None = None
    x_names: list[str] | None = None
    anchor_names: list[str] | None = None
    truth: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


# --------------------------------------------------------------------------
# dense confounding


@dataclass
class DenseConfoundSpec:
    """Parameters of the dense-confounding model.

    ``confounder_loading`` is the ``q x p`` matrix mapping hidden factors to
    ``X``; ``delta`` maps them to ``Y``.
    """

    n: int
    p: int
    q: int
    s0: int
    beta0: NDArray[np.float64]
    confounder_loading: NDArray[np.float64]
    delta: NDArray[np.float64]
    noise_x_scale: float = 1.0
    noise_y_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.beta0 = np.asarray(self.beta0, dtype=np.float64).reshape(-1)
        self.confounder_loading = np.asarray(self.confounder_loading, dtype=np.float64).reshape(self.q, self.p)
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(-1)
        if self.beta0.size != self.p or self.delta.size != self.q:
            raise InvalidInputError("beta0 must have p entries and delta q entries")
        if int(np.count_nonzero(self.beta0)) != self.s0:
            raise InvalidInputError(f"beta0 has {np.count_nonzero(self.beta0)} non-zeros, s0={self.s0}")
        if not self.noise_x_scale > 0:
            raise InvalidInputError("noise_x_scale must be > 0")

    @property
    def cov_x(self) -> NDArray[np.float64]:
        G = self.confounder_loading
        return G.T @ G + self.noise_x_scale**2 * np.eye(self.p)

    @property
    def cov_xh(self) -> NDArray[np.float64]:
        return self.confounder_loading.T.copy()

    def population_bias(self) -> NDArray[np.float64]:
        from .deconfound import population_bias

        return population_bias(self.cov_x, self.cov_xh, self.delta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["type"] = "dense"
        for k in ("beta0", "confounder_loading", "delta"):
            d[k] = np.asarray(d[k]).tolist()
        return d


def make_dense_spec(n: int, p: int, q: int = 3, s0: int = 5, *, seed: int = 0, beta_value: float = 1.0,
                    delta_scale: float = 1.0, loading_scale: float = 1.0, dense_fraction: float = 1.0,
                    noise_x_scale: float = 1.0, noise_y_scale: float = 1.0,
                    beta0: ArrayLike | None = None) -> DenseConfoundSpec:
    """Draw a dense-confounding spec.

    Loadings are i.i.d. ``N(0, loading_scale^2)`` on a random ``dense_fraction``
    of the columns (all columns by default); ``delta`` is i.i.d.
    ``N(0, delta_scale^2)``; ``beta0`` equals ``beta_value`` on the first ``s0``
    coordinates unless given.
    """
    rng = np.random.default_rng(seed)
    G = loading_scale * rng.standard_normal((q, p))
    if dense_fraction < 1.0:
        keep = rng.permutation(p)[: int(round(dense_fraction * p))]
        mask = np.zeros(p, dtype=bool)
        mask[keep] = True
        G[:, ~mask] = 0.0
    delta = delta_scale * rng.standard_normal(q)
    if beta0 is None:
        b = np.zeros(p)
        b[:s0] = beta_value
    else:
        b = np.asarray(beta0, dtype=np.float64)
        s0 = int(np.count_nonzero(b))
    return DenseConfoundSpec(n=n, p=p, q=q, s0=s0, beta0=b, confounder_loading=G, delta=delta,
                             noise_x_scale=noise_x_scale, noise_y_scale=noise_y_scale, seed=seed)


def gen_dense_confounded(spec: DenseConfoundSpec, seed: int | None = None, n: int | None = None) -> Dataset:
    """Draw ``n`` rows; ``H``, noise and the population bias go into ``truth``."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n = spec.n if n is None else n
    H = rng.standard_normal((n, spec.q))
    X = H @ spec.confounder_loading + spec.noise_x_scale * rng.standard_normal((n, spec.p))
    Y = X @ spec.beta0 + H @ spec.delta + spec.noise_y_scale * rng.standard_normal(n)
    truth = {"beta0": spec.beta0.copy(), "H": H}
    return Dataset(X=X, Y=Y, truth=truth)


# --------------------------------------------------------------------------
# anchor SEMs


@dataclass
class AnchorSemSpec:
    """Linear SEM ``Z = B Z + eps + M A`` with ``Z = (X, Y, H)``.

    ``anchor_cov`` is ``E[A A^T]`` (anchors have mean zero unless
    ``env_probs`` is set, in which case ``A`` is a one-hot environment
    indicator drawn with these probabilities and ``anchor_cov`` is derived).
    """

    p: int
    q: int
    r: int
    B: NDArray[np.float64]
    M: NDArray[np.float64]
    anchor_cov: NDArray[np.float64] | None = None
    noise_cov: NDArray[np.float64] | None = None
    env_probs: NDArray[np.float64] | None = None
    acyclic: bool = True

    def __post_init__(self) -> None:
        d = self.dim
        self.B = np.asarray(self.B, dtype=np.float64).reshape(d, d)
        self.M = np.asarray(self.M, dtype=np.float64).reshape(d, self.r)
        if self.noise_cov is None:
            self.noise_cov = np.eye(d)
        self.noise_cov = np.asarray(self.noise_cov, dtype=np.float64).reshape(d, d)
        if self.env_probs is not None:
            probs = np.asarray(self.env_probs, dtype=np.float64).reshape(-1)
            if probs.size != self.r or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                raise InvalidInputError("env_probs must be r probabilities summing to one")
            self.env_probs = probs
            self.anchor_cov = np.diag(probs)
        if self.anchor_cov is None:
            self.anchor_cov = np.eye(self.r)
        self.anchor_cov = np.asarray(self.anchor_cov, dtype=np.float64).reshape(self.r, self.r)
        cond = np.linalg.cond(np.eye(d) - self.B)
        if not np.isfinite(cond) or cond > 1e12:
            raise InvalidInputError("I - B is singular")

    @property
    def dim(self) -> int:
        return self.p + 1 + self.q

    @property
    def y_index(self) -> int:
        return self.p

    @property
    def h_slice(self) -> slice:
        return slice(self.p + 1, self.p + 1 + self.q)

    def inv_IB(self) -> NDArray[np.float64]:
        return np.linalg.inv(np.eye(self.dim) - self.B)

    def with_anchor_cov(self, cov: ArrayLike) -> AnchorSemSpec:
        """Same structure with a different anchor second-moment matrix."""
        return AnchorSemSpec(p=self.p, q=self.q, r=self.r, B=self.B.copy(), M=self.M.copy(),
                             anchor_cov=np.asarray(cov, dtype=np.float64), noise_cov=self.noise_cov.copy(),
                             acyclic=self.acyclic)

    def to_dict(self) -> dict:
        return {
            "type": "anchor",
            "p": self.p, "q": self.q, "r": self.r,
            "B": self.B.tolist(), "M": self.M.tolist(),
            "anchor_cov": self.anchor_cov.tolist(), "noise_cov": self.noise_cov.tolist(),
            "env_probs": None if self.env_probs is None else self.env_probs.tolist(),
            "acyclic": self.acyclic,
        }


@dataclass(frozen=True)
class Perturbation:
    """Shift ``v = M delta``.

    Deterministic: every row is shifted by ``M delta``. Stochastic: each row
    draws ``delta_i ~ N(delta, cov)`` (``cov`` defaults to zero).
    """

    delta: NDArray[np.float64]
    stochastic: bool = False
    cov: NDArray[np.float64] | None = None

    def second_moment(self) -> NDArray[np.float64]:
        """``E[delta delta^T]`` (a deterministic shift contributes its outer product)."""
        d = np.asarray(self.delta, dtype=np.float64).reshape(-1)
        out = np.outer(d, d)
        if self.stochastic and self.cov is not None:
            out = out + np.asarray(self.cov, dtype=np.float64)
        return out


@dataclass(frozen=True)
class PopulationMoments:
    """Second moments of ``Z = (X, Y, H)`` and ``A`` (all variables mean zero)."""

    cov_z: NDArray[np.float64]
    cov_za: NDArray[np.float64]
    cov_aa: NDArray[np.float64]
    p: int
    q: int

    @property
    def sigma_xx(self) -> NDArray[np.float64]:
        return self.cov_z[: self.p, : self.p]

    @property
    def sigma_xy(self) -> NDArray[np.float64]:
        return self.cov_z[: self.p, self.p]

    @property
    def sigma_yy(self) -> float:
        return float(self.cov_z[self.p, self.p])

    @property
    def sigma_ax(self) -> NDArray[np.float64]:
        return self.cov_za[: self.p, :].T

    @property
    def sigma_ay(self) -> NDArray[np.float64]:
        return self.cov_za[self.p, :]


def population_moments(spec: AnchorSemSpec) -> PopulationMoments:
    """``Cov(Z) = C (Sigma_eps + M E[AA^T] M^T) C^T`` and ``Cov(Z, A) = C M E[AA^T]``, ``C = (I-B)^-1``.

    For environment anchors the moments are taken about the mean, i.e. with
    the centered indicator covariance ``diag(pi) - pi pi^T``.
    """
    C = spec.inv_IB()
    S_a = anchor_covariance(spec)
    inner = spec.noise_cov + spec.M @ S_a @ spec.M.T
    cov_z = C @ inner @ C.T
    cov_za = C @ spec.M @ S_a
    return PopulationMoments(cov_z=0.5 * (cov_z + cov_z.T), cov_za=cov_za, cov_aa=S_a, p=spec.p, q=spec.q)


def anchor_covariance(spec: AnchorSemSpec) -> NDArray[np.float64]:
    if spec.env_probs is not None:
        pi = spec.env_probs
        return np.diag(pi) - np.outer(pi, pi)
    return spec.anchor_cov


def _draw_anchors(spec: AnchorSemSpec, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    if spec.env_probs is not None:
        labels = rng.choice(spec.r, size=n, p=spec.env_probs)
        A = np.zeros((n, spec.r))
        A[np.arange(n), labels] = 1.0
        return A
    L = _psd_sqrt(spec.anchor_cov)
    return rng.standard_normal((n, spec.r)) @ L.T


def _psd_sqrt(S: NDArray[np.float64]) -> NDArray[np.float64]:
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def _split(spec: AnchorSemSpec, Z: NDArray[np.float64], A: NDArray[np.float64] | None) -> Dataset:
    X = Z[:, : spec.p].copy()
    Y = Z[:, spec.p].copy()
    H = Z[:, spec.h_slice].copy()
    return Dataset(X=X, Y=Y, A=A, truth={"H": H})


def gen_anchor_sem(spec: AnchorSemSpec, n: int, seed: int = 0) -> Dataset:
    """``n`` i.i.d. rows of ``(I - B)^-1 (eps + M A)``; ``H`` is kept in ``truth`` only."""
    rng = np.random.default_rng(seed)
    A = _draw_anchors(spec, n, rng)
    eps = rng.standard_normal((n, spec.dim)) @ _psd_sqrt(spec.noise_cov).T
    Z = (eps + A @ spec.M.T) @ spec.inv_IB().T
    return _split(spec, Z, A)


def perturb(spec: AnchorSemSpec, pert: Perturbation, n: int, seed: int = 0) -> Dataset:
    """``n`` rows of the shifted system ``(I - B)^-1 (eps + M delta)`` (no anchors observed)."""
    rng = np.random.default_rng(seed)
    d = np.asarray(pert.delta, dtype=np.float64).reshape(-1)
    if d.size != spec.r:
        raise InvalidInputError(f"delta must have r={spec.r} entries")
    eps = rng.standard_normal((n, spec.dim)) @ _psd_sqrt(spec.noise_cov).T
    deltas = np.tile(d, (n, 1))
    if pert.stochastic and pert.cov is not None:
        deltas = deltas + rng.standard_normal((n, spec.r)) @ _psd_sqrt(np.asarray(pert.cov)).T
    Z = (eps + deltas @ spec.M.T) @ spec.inv_IB().T
    ds = _split(spec, Z, None)
    ds.truth["delta"] = deltas
    return ds


def perturbed_mean(spec: AnchorSemSpec, delta: ArrayLike) -> NDArray[np.float64]:
    """Population mean of ``Z`` under a deterministic shift: ``(I - B)^-1 M delta``."""
    return spec.inv_IB() @ spec.M @ np.asarray(delta, dtype=np.float64)


def _residual_weights(spec: AnchorSemSpec, b: ArrayLike) -> NDArray[np.float64]:
    """``w`` with ``Y - X b = w^T Z``."""
    w = np.zeros(spec.dim)
    w[: spec.p] = -np.asarray(b, dtype=np.float64).reshape(spec.p)
    w[spec.y_index] = 1.0
    return w


def _risk_parts(spec: AnchorSemSpec, b: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """``(c0, g)`` with ``E[(Y^v - X^v b)^2] = c0 + g^T E[delta delta^T] g``."""
    C = spec.inv_IB()
    u = C.T @ _residual_weights(spec, b)
    c0 = float(u @ spec.noise_cov @ u)
    g = spec.M.T @ u
    return c0, g


def perturbed_risk(spec: AnchorSemSpec, b: ArrayLike, second_moment: ArrayLike) -> float:
    """Population ``E[(Y^v - X^v b)^2]`` for a shift with ``E[delta delta^T] = second_moment``."""
    c0, g = _risk_parts(spec, b)
    S = np.asarray(second_moment, dtype=np.float64).reshape(spec.r, spec.r)
    return float(c0 + g @ S @ g)


def worst_case_sup(spec: AnchorSemSpec, b: ArrayLike, gamma: float) -> float:
    """``sup`` of the shifted-system risk over ``E[delta delta^T] <= gamma E[A A^T]``.

    The risk is ``c0 + g^T S g`` with ``S = E[delta delta^T]``, which is
    monotone in the Loewner order, so the supremum sits at ``S = gamma E[AA^T]``.
    Anchor second moments are taken about the mean for environment anchors.
    """
    if gamma < 0:
        raise InvalidInputError("gamma must be >= 0")
    c0, g = _risk_parts(spec, b)
    return float(c0 + gamma * g @ anchor_covariance(spec) @ g)


def worst_case_sup_grid(spec: AnchorSemSpec, b: ArrayLike, gamma: float, n_grid: int = 2001,
                        radius: float = 10.0) -> float:
    """Brute-force supremum over deterministic shifts ``delta`` (``r <= 2``).

    A deterministic shift is in the class iff ``delta delta^T <= gamma E[AA^T]``,
    i.e. ``delta^T (gamma E[AA^T])^-1 delta <= 1``. For ``r = 1`` the grid is
    ``linspace(-radius, radius)`` plus the two boundary points; for ``r = 2``
    it is a polar grid over the feasible ellipse.
    """
    S_a = anchor_covariance(spec)
    if spec.r == 1:
        bound = float(np.sqrt(gamma * S_a[0, 0]))
        grid = np.concatenate([np.linspace(-radius, radius, n_grid), [-bound, bound]])
        grid = grid[grid**2 <= gamma * S_a[0, 0] * (1 + 1e-15)]
        return max(perturbed_risk(spec, b, np.array([[d * d]])) for d in grid)
    if spec.r == 2:
        L = _psd_sqrt(gamma * S_a)
        best = -np.inf
        for t in np.linspace(0.0, 2 * np.pi, n_grid):
            for s in np.linspace(0.0, 1.0, 11):
                d = s * (L @ np.array([np.cos(t), np.sin(t)]))
                best = max(best, perturbed_risk(spec, b, np.outer(d, d)))
        return float(best)
    raise InvalidInputError("grid oracle supports r <= 2 only")


def population_anchor_coef(spec_or_moments: AnchorSemSpec | PopulationMoments, gamma: float,
                           tol: float | None = None) -> NDArray[np.float64]:
    """Population anchor coefficient from the normal equations.

    ``(S_XX + (gamma-1) S_XA S_AA^-1 S_AX) beta = S_XY + (gamma-1) S_XA S_AA^-1 S_AY``,
    solved in the minimum-norm sense when singular.
    """
    mom = spec_or_moments if isinstance(spec_or_moments, PopulationMoments) else population_moments(spec_or_moments)
    Sxa = mom.sigma_ax.T
    Saa_inv = np.linalg.pinv(mom.cov_aa)
    lhs = mom.sigma_xx + (gamma - 1.0) * Sxa @ Saa_inv @ Sxa.T
    rhs = mom.sigma_xy + (gamma - 1.0) * Sxa @ Saa_inv @ mom.sigma_ay
    return pseudo_solve(lhs, rhs, tol)


# --------------------------------------------------------------------------
# spec builders


def iv_spec(beta0: float = 1.0, kappa: float = 1.0, confounder_x: float = 1.0, confounder_y: float = 1.0,
            noise_x: float = 1.0, noise_y: float = 1.0) -> AnchorSemSpec:
    """Scalar instrumental-variables SEM: ``A -> X``, ``H -> X``, ``H -> Y``, ``X -> Y``."""
    p, q, r = 1, 1, 1
    d = p + 1 + q
    B = np.zeros((d, d))
    B[0, 2] = confounder_x  # X <- H
    B[1, 0] = beta0  # Y <- X
    B[1, 2] = confounder_y  # Y <- H
    M = np.zeros((d, r))
    M[0, 0] = kappa
    noise = np.diag([noise_x**2, noise_y**2, 1.0])
    return AnchorSemSpec(p=p, q=q, r=r, B=B, M=M, anchor_cov=np.eye(r), noise_cov=noise)


def random_anchor_spec(p: int, q: int, r: int, seed: int = 0, *, anchor_on_y: bool = True,
                       edge_prob: float = 0.6, scale: float = 0.8) -> AnchorSemSpec:
    """Random acyclic anchor SEM.

    ``B`` is strictly lower triangular in a random causal order of the
    ``p + 1 + q`` variables with hidden variables placed first; ``M`` is dense
    (optionally with zero row for ``Y``), noise is diagonal, ``E[AA^T]`` is a
    random positive-definite matrix.
    """
    rng = np.random.default_rng(seed)
    d = p + 1 + q
    hidden = list(range(p + 1, d))
    observed = list(rng.permutation(p + 1))
    order = hidden + observed
    B = np.zeros((d, d))
    for a in range(d):
        for c in range(a):
            if rng.random() < edge_prob:
                B[order[a], order[c]] = scale * rng.uniform(-1, 1)
    M = rng.standard_normal((d, r))
    if not anchor_on_y:
        M[p, :] = 0.0
    noise = np.diag(rng.uniform(0.5, 1.5, size=d))
    W = rng.standard_normal((r, r))
    anchor_cov = W @ W.T + 0.5 * np.eye(r)
    return AnchorSemSpec(p=p, q=q, r=r, B=B, M=M, anchor_cov=anchor_cov, noise_cov=noise)


# --------------------------------------------------------------------------
# JSON round trip


def spec_to_json(spec: DenseConfoundSpec | AnchorSemSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True)


def spec_from_dict(d: dict) -> DenseConfoundSpec | AnchorSemSpec:
    d = dict(d)
    kind = d.pop("type", None)
    if kind == "dense":
        if "beta0" not in d:
            allowed = {"n", "p", "q", "s0", "seed", "beta_value", "delta_scale", "loading_scale",
                       "dense_fraction", "noise_x_scale", "noise_y_scale"}
            unknown = set(d) - allowed
            if unknown:
                raise InvalidInputError(f"unknown dense spec keys: {sorted(unknown)}")
            return make_dense_spec(**d)
        return DenseConfoundSpec(**d)
    if kind == "anchor":
        if "B" not in d:
            allowed = {"p", "q", "r", "seed", "anchor_on_y", "edge_prob", "scale"}
            unknown = set(d) - allowed
            if unknown:
                raise InvalidInputError(f"unknown anchor spec keys: {sorted(unknown)}")
            return random_anchor_spec(**d)
        return AnchorSemSpec(**d)
    if kind == "iv":
        return iv_spec(**{k: v for k, v in d.items()})
    raise InvalidInputError(f"spec needs a 'type' of dense, anchor or iv; got {kind!r}")


def spec_from_json(text: str) -> DenseConfoundSpec | AnchorSemSpec:
    return spec_from_dict(json.loads(text))
