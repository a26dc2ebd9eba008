"""Replicability and coverage experiments, plus robustness under shift perturbations.

Every experiment derives one child seed per replicate from
``numpy.random.SeedSequence(seed).spawn``; replicates may run on a thread
pool but are collected in replicate order, so reports do not depend on the
number of workers.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__, sparse
from .anchor import AnchorConfig, anchor_fit, environment_dummies
from .deconfound import transform_data
from .errors import InvalidInputError
from .inference import DdLassoConfig, dd_lasso_many, identity_config
from .sem import (AnchorSemSpec, Dataset, DenseConfoundSpec, Perturbation, anchor_covariance, gen_anchor_sem,
                  gen_dense_confounded, make_dense_spec, perturb, worst_case_sup)
from .spectral import Identity, Lava, TransformKind, Trim

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

METHODS: dict[str, TransformKind] = {"lasso": Identity(), "trim": Trim(), "lava": Lava()}


# --------------------------------------------------------------------------
# selection agreement


@dataclass(frozen=True)
class SelectionSet:
    indices: tuple[int, ...]
    source: str = ""

    def __post_init__(self) -> None:
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 0:
            raise InvalidInputError("selection indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def from_coef(cls, coef: ArrayLike, source: str = "") -> SelectionSet:
        return cls(tuple(np.flatnonzero(np.asarray(coef)).tolist()), source)


def jaccard(s1: SelectionSet | Iterable[int], s2: SelectionSet | Iterable[int]) -> float:
    """Jaccard distance ``1 - |S1 & S2| / |S1 | S2|``; two empty sets are at distance 0."""
    a = set(s1.indices if isinstance(s1, SelectionSet) else s1)
    b = set(s2.indices if isinstance(s2, SelectionSet) else s2)
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def top_k(coef: ArrayLike, K: int) -> NDArray[np.int64]:
    """Indices of the ``K`` largest ``|coef|``, smaller index first on ties."""
    c = np.abs(np.asarray(coef, dtype=np.float64).reshape(-1))
    if not 1 <= K <= c.size:
        raise InvalidInputError(f"K must lie in [1, {c.size}], got {K}")
    return np.argsort(-c, kind="stable")[:K]


def topk_overlap(coef1: ArrayLike, coef2: ArrayLike, K: int) -> int:
    """Size of the intersection of the two top-``K`` sets."""
    if np.size(coef1) != np.size(coef2):
        raise InvalidInputError("coefficient vectors differ in length")
    return len(set(top_k(coef1, K).tolist()) & set(top_k(coef2, K).tolist()))


def selection_at_size(path: Sequence[sparse.SparseFit], K: int, source: str = "") -> SelectionSet:
    """Active set at the first path point with at least ``K`` variables (last point if none)."""
    for fit in path:
        if np.count_nonzero(fit.beta) >= K:
            return SelectionSet.from_coef(fit.beta, source)
    return SelectionSet.from_coef(path[-1].beta, source)


# --------------------------------------------------------------------------
# reports


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


@dataclass
class ExperimentReport:
    """Config echo, named tables (lists of row dicts), replicate count and seed.

    ``wall_clock`` is kept on the object but left out of serialized output so
    that reruns produce identical files.
    """

    name: str
    config: dict[str, Any]
    tables: dict[str, list[dict[str, Any]]]
    replicates: int
    seed: int
    wall_clock: float = 0.0
    flags: list[str] = field(default_factory=list)

    def table(self, name: str) -> list[dict[str, Any]]:
        return self.tables[name]

    def to_dict(self) -> dict[str, Any]:
        return _plain({"experiment": self.name, "version": __version__, "config": self.config,
                       "replicates": self.replicates, "seed": self.seed, "flags": self.flags,
                       "tables": self.tables})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self, name: str) -> str:
        rows = self.tables[name]
        if not rows:
            return ""
        cols = list(rows[0])
        out = [",".join(cols)]
        for row in rows:
            out.append(",".join(_cell(row[c]) for c in cols))
        return "\n".join(out) + "\n"


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _run_replicates(fn: Callable[[int, np.random.SeedSequence], Any], replicates: int, seed: int,
                    threads: int) -> list[Any]:
    children = np.random.SeedSequence(seed).spawn(replicates)
    items = list(enumerate(children))
    if threads <= 1:
        return [fn(i, ss) for i, ss in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), items))


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------
# replicability


def confounded_pair(n: int, p: int, q: int = 3, s0: int = 5, *, seed: int = 0, delta_scale: float = 1.0,
                    confounded: bool = True) -> tuple[DenseConfoundSpec, DenseConfoundSpec]:
    """Two dense-confounding specs with the same ``beta0`` and independent loadings and ``delta``.

    ``confounded=False`` gives the control pair with no confounding at all.
    """
    children = np.random.SeedSequence(seed).spawn(2)
    specs = []
    for ss in children:
        s = make_dense_spec(n, p, q, s0, seed=_seed_int(ss), delta_scale=delta_scale)
        if not confounded:
            s = DenseConfoundSpec(n=n, p=p, q=q, s0=s0, beta0=s.beta0, confounder_loading=np.zeros((q, p)),
                                  delta=np.zeros(q), seed=s.seed)
        specs.append(s)
    return specs[0], specs[1]


@dataclass
class ReplicabilityConfig:
    spec1: DenseConfoundSpec
    spec2: DenseConfoundSpec
    replicates: int = 20
    seed: int = 0
    methods: tuple[str, ...] = ("lasso", "trim", "lava")
    support_sizes: tuple[int, ...] = tuple(range(1, 21))
    n_lambda: int = 100
    threads: int = 1

    def __post_init__(self) -> None:
        if not np.array_equal(self.spec1.beta0, self.spec2.beta0):
            raise InvalidInputError("the two specs must share beta0")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InvalidInputError(f"unknown methods: {sorted(unknown)}")
        if self.replicates < 1:
            raise InvalidInputError("replicates must be >= 1")

    def echo(self) -> dict[str, Any]:
        return {"spec1": self.spec1.to_dict(), "spec2": self.spec2.to_dict(), "replicates": self.replicates,
                "seed": self.seed, "methods": list(self.methods), "support_sizes": list(self.support_sizes),
                "n_lambda": self.n_lambda}


def _selection_path(ds: Dataset, kind: TransformKind, n_lambda: int) -> list[sparse.SparseFit]:
    Xt, yt, *_ = transform_data(ds.X, ds.Y, kind)
    grid = sparse.default_grid(Xt, yt, n_lambda=n_lambda)
    return sparse.lasso_path(Xt, yt, grid)


def replicability_experiment(cfg: ReplicabilityConfig) -> ExperimentReport:
    """Jaccard distance between the two data sets' selections at each support size."""
    start = time.perf_counter()

    def one(_: int, ss: np.random.SeedSequence) -> dict[str, list[float]]:
        s1, s2 = ss.spawn(2)
        d1 = gen_dense_confounded(cfg.spec1, seed=_seed_int(s1))
        d2 = gen_dense_confounded(cfg.spec2, seed=_seed_int(s2))
        out = {}
        for m in cfg.methods:
            p1 = _selection_path(d1, METHODS[m], cfg.n_lambda)
            p2 = _selection_path(d2, METHODS[m], cfg.n_lambda)
            out[m] = [jaccard(selection_at_size(p1, K), selection_at_size(p2, K)) for K in cfg.support_sizes]
        return out

    reps = _run_replicates(one, cfg.replicates, cfg.seed, cfg.threads)
    rows = []
    for m in cfg.methods:
        vals = np.array([r[m] for r in reps])
        for k, K in enumerate(cfg.support_sizes):
            rows.append({"method": m, "K": int(K), "mean_jaccard": float(vals[:, k].mean()),
                         "se": float(vals[:, k].std(ddof=1) / math.sqrt(len(reps))) if len(reps) > 1 else math.nan})
    return ExperimentReport("replicate", cfg.echo(), {"jaccard": rows}, cfg.replicates, cfg.seed,
                            time.perf_counter() - start)


def mean_jaccard(report: ExperimentReport, method: str) -> NDArray[np.float64]:
    return np.array([r["mean_jaccard"] for r in report.table("jaccard") if r["method"] == method])


# --------------------------------------------------------------------------
# coverage


@dataclass
class CoverageConfig:
    spec: DenseConfoundSpec
    coords: tuple[int, ...]
    replicates: int = 200
    seed: int = 0
    level: float = 0.95
    folds: int = 10
    threads: int = 1

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise InvalidInputError("replicates must be >= 1")
        if not self.coords:
            raise InvalidInputError("no coordinates given")
        if any(not 0 <= j < self.spec.p for j in self.coords):
            raise InvalidInputError("coordinate out of range")

    def echo(self) -> dict[str, Any]:
        return {"spec": self.spec.to_dict(), "coords": list(self.coords), "replicates": self.replicates,
                "seed": self.seed, "level": self.level, "folds": self.folds}


WIDE_UNCERTAINTY = "wide_uncertainty"
# below this many replicates the Monte-Carlo error of a coverage rate exceeds 0.05
_MIN_REPLICATES = 20


def coverage_experiment(cfg: CoverageConfig) -> ExperimentReport:
    """Empirical coverage and rejection rate of doubly debiased vs plain debiased Lasso."""
    start = time.perf_counter()
    dd_cfg = DdLassoConfig(confidence_level=cfg.level, folds=cfg.folds)
    db_cfg = identity_config(level=cfg.level, folds=cfg.folds)
    truth = cfg.spec.beta0[list(cfg.coords)]
    alpha = 1.0 - cfg.level

    def one(_: int, ss: np.random.SeedSequence) -> dict[str, np.ndarray]:
        ds = gen_dense_confounded(cfg.spec, seed=_seed_int(ss))
        out = {}
        for name, c, method in (("doubly_debiased", dd_cfg, "doubly_debiased"), ("debiased", db_cfg, "debiased")):
            res = dd_lasso_many(ds.X, ds.Y, cfg.coords, c, method=method)
            out[name] = np.array([[r.covers(t), r.p_value < alpha, r.estimate, r.se]
                                  for r, t in zip(res, truth)])
        return out

    reps = _run_replicates(one, cfg.replicates, cfg.seed, cfg.threads)
    rows = []
    for name in ("doubly_debiased", "debiased"):
        arr = np.stack([r[name] for r in reps])
        for k, j in enumerate(cfg.coords):
            cov = float(arr[:, k, 0].mean())
            rows.append({"method": name, "j": int(j), "beta0": float(truth[k]), "coverage": cov,
                         "coverage_mc_se": math.sqrt(cov * (1 - cov) / len(reps)),
                         "rejection_rate": float(arr[:, k, 1].mean()),
                         "mean_estimate": float(arr[:, k, 2].mean()), "mean_se": float(arr[:, k, 3].mean())})
    flags = [WIDE_UNCERTAINTY] if cfg.replicates < _MIN_REPLICATES else []
    return ExperimentReport("coverage", cfg.echo(), {"coverage": rows}, cfg.replicates, cfg.seed,
                            time.perf_counter() - start, flags)


# --------------------------------------------------------------------------
# robustness against shift perturbations


@dataclass
class RobustnessConfig:
    spec: AnchorSemSpec
    gammas: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)
    strengths: tuple[float, ...] = (0.0, 1.0, 4.0, 16.0)
    n_train: int = 500
    n_test: int = 2000
    directions: int = 10
    replicates: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.gammas:
            raise InvalidInputError("empty gamma grid")
        if any(g < 0 for g in self.gammas) or any(s < 0 for s in self.strengths):
            raise InvalidInputError("gammas and strengths must be >= 0")
        if self.replicates < 1 or self.directions < 1:
            raise InvalidInputError("replicates and directions must be >= 1")

    def echo(self) -> dict[str, Any]:
        return {"spec": self.spec.to_dict(), "gammas": list(self.gammas), "strengths": list(self.strengths),
                "n_train": self.n_train, "n_test": self.n_test, "directions": self.directions,
                "replicates": self.replicates, "seed": self.seed}


def _psd_sqrt(S: NDArray[np.float64]) -> NDArray[np.float64]:
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def shift_directions(spec: AnchorSemSpec, strength: float, count: int,
                     rng: np.random.Generator) -> NDArray[np.float64]:
    """``count`` deterministic shifts on the boundary of ``delta delta^T <= strength E[AA^T]``."""
    L = _psd_sqrt(anchor_covariance(spec))
    U = rng.standard_normal((count, spec.r))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return math.sqrt(strength) * U @ L.T


def robustness_curve(cfg: RobustnessConfig) -> ExperimentReport:
    """Worst test MSE over sampled shifts of each strength, for every ``gamma``.

    Shifts are deterministic with ``delta delta^T <= strength E[AA^T]``, so the
    population guarantee at strength ``s`` is the worst-case risk with
    ``gamma = s``; it is reported next to the empirical worst MSE. Strength 0
    means the anchors are switched off (``delta = 0``). The
    ``in_distribution`` table holds the MSE on fresh draws from the training
    distribution itself.
    """
    start = time.perf_counter()

    def one(_: int, ss: np.random.SeedSequence) -> np.ndarray:
        s_train, s_dir, s_test, s_fresh = ss.spawn(4)
        train = gen_anchor_sem(cfg.spec, cfg.n_train, seed=_seed_int(s_train))
        fits = [anchor_fit(train.X, train.Y, train.A, AnchorConfig(float(g))) for g in cfg.gammas]
        fresh = gen_anchor_sem(cfg.spec, cfg.n_test, seed=_seed_int(s_fresh))
        in_dist = np.array([np.mean((fresh.Y - f.predict(fresh.X)) ** 2) for f in fits])
        rng = np.random.default_rng(s_dir)
        test_seeds = s_test.spawn(len(cfg.strengths) * cfg.directions)
        out = np.empty((len(cfg.strengths), len(cfg.gammas), 2))
        for a, s in enumerate(cfg.strengths):
            shifts = shift_directions(cfg.spec, s, cfg.directions, rng)
            worst = np.full(len(cfg.gammas), -np.inf)
            for k, delta in enumerate(shifts):
                test = perturb(cfg.spec, Perturbation(delta), cfg.n_test,
                               seed=_seed_int(test_seeds[a * cfg.directions + k]))
                for g, fit in enumerate(fits):
                    mse = float(np.mean((test.Y - fit.predict(test.X)) ** 2))
                    worst[g] = max(worst[g], mse)
            out[a, :, 0] = worst
            out[a, :, 1] = [worst_case_sup(cfg.spec, f.beta, s) for f in fits]
        return out, in_dist

    reps = _run_replicates(one, cfg.replicates, cfg.seed, cfg.threads)
    mean = np.stack([r[0] for r in reps]).mean(axis=0)
    fresh_mean = np.stack([r[1] for r in reps]).mean(axis=0)
    in_rows = [{"gamma": float(g), "mse": float(fresh_mean[k])} for k, g in enumerate(cfg.gammas)]
    rows, best = [], []
    for a, s in enumerate(cfg.strengths):
        for g, gam in enumerate(cfg.gammas):
            rows.append({"strength": float(s), "gamma": float(gam), "worst_mse": float(mean[a, g, 0]),
                         "population_worst_risk": float(mean[a, g, 1])})
        # ties go to the larger gamma
        order = sorted(range(len(cfg.gammas)), key=lambda g: (mean[a, g, 0], -cfg.gammas[g]))
        best.append({"strength": float(s), "best_gamma": float(cfg.gammas[order[0]]),
                     "worst_mse": float(mean[a, order[0], 0])})
    tables = {"curve": rows, "best": best, "in_distribution": in_rows}
    return ExperimentReport("robustness", cfg.echo(), tables, cfg.replicates, cfg.seed, time.perf_counter() - start)


# --------------------------------------------------------------------------
# leave-one-environment-out gamma selection

DEGENERATE_GRID = "degenerate_grid"


@dataclass
class LoeoResult:
    gamma: float
    table: list[dict[str, Any]]
    flags: list[str]


def loeo_gamma(environments: Sequence[Dataset], gammas: Sequence[float], lambda_: float = 0.0,
               rtol: float = 1e-10) -> LoeoResult:
    """Choose ``gamma`` minimizing the worst left-out-environment MSE.

    For each left-out environment the model is fitted on the others with
    their environment labels as dummy anchors. Maxima within ``rtol`` of the
    best count as ties, which go to the largest ``gamma``.
    """
    if len(environments) < 2:
        raise InvalidInputError("leave-one-environment-out needs at least two environments")
    if len(gammas) == 0:
        raise InvalidInputError("empty gamma grid")
    flags = [DEGENERATE_GRID] if len(gammas) == 1 else []
    mse = np.empty((len(gammas), len(environments)))
    for e, held in enumerate(environments):
        rest = [d for k, d in enumerate(environments) if k != e]
        X = np.vstack([d.X for d in rest])
        Y = np.concatenate([np.asarray(d.Y, dtype=np.float64) for d in rest])
        A, _ = environment_dummies([k for k, d in enumerate(rest) for _ in range(d.n)])
        for g, gam in enumerate(gammas):
            fit = anchor_fit(X, Y, A, AnchorConfig(float(gam), lambda_))
            mse[g, e] = float(np.mean((held.Y - fit.predict(held.X)) ** 2))
    worst = mse.max(axis=1)
    best = worst.min()
    tied = [g for g in range(len(gammas)) if worst[g] <= best + rtol * abs(best)]
    pick = max(tied, key=lambda g: gammas[g])
    table = [{"gamma": float(gam), "worst_mse": float(worst[g]),
              **{f"mse_env{e}": float(mse[g, e]) for e in range(len(environments))}}
             for g, gam in enumerate(gammas)]
    return LoeoResult(gamma=float(gammas[pick]), table=table, flags=flags)
