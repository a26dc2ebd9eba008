import json

import numpy as np
import pytest

from deconfounding import harness as hs, sem, sparse
from deconfounding.errors import InvalidInputError


def test_jaccard_values():
    assert hs.jaccard({1, 2, 3}, {2, 3, 4}) == pytest.approx(0.5)
    assert hs.jaccard({1, 2}, {1, 2}) == 0.0
    assert hs.jaccard({1}, {2}) == 1.0
    assert hs.jaccard(set(), set()) == 0.0
    assert hs.jaccard(hs.SelectionSet((3, 1, 1)), [1, 3]) == 0.0


def test_selection_set_normalizes():
    s = hs.SelectionSet.from_coef([0.0, -2.0, 0.0, 1.0], source="x")
    assert s.indices == (1, 3) and len(s) == 2
    with pytest.raises(InvalidInputError):
        hs.SelectionSet((-1,))


def test_top_k_ties_and_overlap():
    np.testing.assert_array_equal(hs.top_k([1.0, -3.0, 3.0, 0.5], 2), [1, 2])
    assert hs.topk_overlap([3, 2, 1, 0], [0, 2, 3, 1], 2) == 1
    with pytest.raises(InvalidInputError):
        hs.top_k([1.0], 2)
    with pytest.raises(InvalidInputError):
        hs.topk_overlap([1.0, 2.0], [1.0], 1)


def test_selection_at_size():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 10))
    y = X[:, :3] @ [3.0, 2.0, 1.0] + 0.1 * rng.standard_normal(60)
    path = sparse.lasso_path(X, y, sparse.default_grid(X, y, n_lambda=50))
    s1 = hs.selection_at_size(path, 1)
    assert s1.indices == (0,)
    s3 = hs.selection_at_size(path, 3)
    assert len(s3) >= 3 and {0, 1, 2} <= set(s3.indices)
    assert len(hs.selection_at_size(path, 100)) == np.count_nonzero(path[-1].beta)


def _small_rep_cfg(threads=1, seed=0):
    s1, s2 = hs.confounded_pair(60, 40, seed=1, delta_scale=2.0)
    return hs.ReplicabilityConfig(s1, s2, replicates=3, seed=seed, methods=("lasso", "trim"),
                                  support_sizes=(1, 3, 5), n_lambda=30, threads=threads)


def test_replicability_report_deterministic_across_threads():
    a = hs.replicability_experiment(_small_rep_cfg(1))
    b = hs.replicability_experiment(_small_rep_cfg(2))
    assert a.to_json() == b.to_json()
    assert a.to_csv("jaccard") == b.to_csv("jaccard")
    c = hs.replicability_experiment(_small_rep_cfg(1, seed=5))
    assert a.to_json() != c.to_json()
    assert len(hs.mean_jaccard(a, "lasso")) == len(hs.mean_jaccard(a, "trim")) == 3


def test_report_excludes_wall_clock():
    rep = hs.replicability_experiment(_small_rep_cfg())
    d = json.loads(rep.to_json())
    assert "wall_clock" not in d and rep.wall_clock > 0
    assert d["replicates"] == 3 and d["experiment"] == "replicate"
    assert all(0.0 <= v <= 1.0 for v in hs.mean_jaccard(rep, "trim"))


def test_confounded_pair_shares_beta():
    s1, s2 = hs.confounded_pair(50, 30, seed=2)
    np.testing.assert_array_equal(s1.beta0, s2.beta0)
    assert not np.array_equal(s1.confounder_loading, s2.confounder_loading)
    c1, _ = hs.confounded_pair(50, 30, seed=2, confounded=False)
    assert not c1.confounder_loading.any() and not c1.delta.any()


def test_replicability_config_checks():
    s1, s2 = hs.confounded_pair(50, 30, seed=2)
    with pytest.raises(InvalidInputError):
        hs.ReplicabilityConfig(s1, s2, methods=("ridge",))
    other = sem.make_dense_spec(50, 30, 3, 4, seed=0)
    with pytest.raises(InvalidInputError):
        hs.ReplicabilityConfig(s1, other)


def test_coverage_experiment_small_flags_and_fields():
    spec = sem.make_dense_spec(60, 30, 2, 2, seed=3, delta_scale=0.0)
    rep = hs.coverage_experiment(hs.CoverageConfig(spec, (0, 5), replicates=3, folds=3))
    assert hs.WIDE_UNCERTAINTY in rep.flags
    rows = rep.table("coverage")
    assert [(r["method"], r["j"]) for r in rows] == [("doubly_debiased", 0), ("doubly_debiased", 5),
                                                      ("debiased", 0), ("debiased", 5)]
    assert all(0.0 <= r["coverage"] <= 1.0 for r in rows)
    with pytest.raises(InvalidInputError):
        hs.CoverageConfig(spec, (30,))


def test_robustness_curve_shapes():
    spec = sem.iv_spec(beta0=1.0, kappa=1.0, confounder_x=1.0, confounder_y=1.0)
    cfg = hs.RobustnessConfig(spec, gammas=(0.0, 1.0, 10.0), strengths=(0.0, 25.0), n_train=300, n_test=500,
                              directions=3, replicates=2)
    rep = hs.robustness_curve(cfg)
    assert len(rep.table("curve")) == 6 and len(rep.table("best")) == 2
    best = {r["strength"]: r["best_gamma"] for r in rep.table("best")}
    assert best[25.0] == 10.0
    again = hs.robustness_curve(cfg)
    assert again.to_json() == rep.to_json()


def test_shift_directions_on_boundary():
    spec = sem.random_anchor_spec(2, 1, 2, seed=4)
    D = hs.shift_directions(spec, 3.0, 5, np.random.default_rng(0))
    Sinv = np.linalg.inv(3.0 * spec.anchor_cov)
    np.testing.assert_allclose(np.einsum("ij,jk,ik->i", D, Sinv, D), 1.0, atol=1e-10)


def _env(spec, shift, n, seed):
    return sem.perturb(spec, sem.Perturbation(np.array([shift])), n, seed=seed)


def test_loeo_prefers_large_gamma_under_strong_shifts():
    spec = sem.iv_spec(beta0=1.0, kappa=1.0, confounder_x=1.0, confounder_y=2.0)
    envs = [_env(spec, s, 400, k) for k, s in enumerate((-3.0, 0.0, 3.0, 6.0))]
    res = hs.loeo_gamma(envs, [0.0, 1.0, 5.0, 25.0])
    assert res.gamma >= 5.0
    assert len(res.table) == 4 and not res.flags


def test_loeo_single_gamma_and_errors():
    spec = sem.iv_spec()
    envs = [_env(spec, s, 100, k) for k, s in enumerate((0.0, 1.0))]
    assert hs.loeo_gamma(envs, [2.0]).flags == [hs.DEGENERATE_GRID]
    with pytest.raises(InvalidInputError):
        hs.loeo_gamma(envs[:1], [1.0])
    with pytest.raises(InvalidInputError):
        hs.loeo_gamma(envs, [])
