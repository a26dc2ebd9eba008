import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deconfounding import anchor as an, sem
from deconfounding.errors import InvalidInputError


def test_dense_one_factor_covariance():
    spec = sem.make_dense_spec(100, 6, 1, 2, seed=0, noise_x_scale=0.5)
    g = spec.confounder_loading[0]
    np.testing.assert_allclose(spec.cov_x, np.outer(g, g) + 0.25 * np.eye(6), atol=1e-14)


def test_dense_sample_moments_approach_population():
    spec = sem.make_dense_spec(40_000, 5, 2, 2, seed=1)
    d = sem.gen_dense_confounded(spec, seed=2)
    S = np.cov(d.X, rowvar=False)
    assert np.max(np.abs(S - spec.cov_x)) < 0.1
    np.testing.assert_array_equal(d.truth["beta0"], spec.beta0)
    assert d.truth["H"].shape == (40_000, 2)


def test_dense_spectrum_scale():
    spec = sem.make_dense_spec(300, 600, 3, 5, seed=3)
    d = sem.gen_dense_confounded(spec, seed=4)
    sv = np.linalg.svd(d.X, compute_uv=False)
    # three spiked values then a noise bulk whose median is of order sqrt(p)
    assert 0.3 <= np.median(sv) / np.sqrt(600) <= 3.0
    assert sv[2] > 2.0 * sv[3]


def test_dense_spec_validation():
    with pytest.raises(InvalidInputError):
        sem.DenseConfoundSpec(n=5, p=3, q=1, s0=2, beta0=[1.0, 0.0, 0.0], confounder_loading=np.zeros((1, 3)),
                              delta=[0.0])
    spec = sem.make_dense_spec(10, 20, 2, 3, seed=5, dense_fraction=0.25)
    assert np.sum(np.any(spec.confounder_loading != 0, axis=0)) == 5


def test_anchor_population_moments_match_samples():
    spec = sem.random_anchor_spec(3, 1, 2, seed=6)
    mom = sem.population_moments(spec)
    d = sem.gen_anchor_sem(spec, 100_000, seed=7)
    Z = np.column_stack([d.X, d.Y, d.truth["H"]])
    scale = np.max(np.abs(mom.cov_z))
    assert np.max(np.abs(Z.T @ Z / len(Z) - mom.cov_z)) < 0.03 * scale
    assert np.max(np.abs(Z.T @ d.A / len(Z) - mom.cov_za)) < 0.03 * scale


def test_iv_spec_structure():
    spec = sem.iv_spec(beta0=2.0, kappa=1.0, confounder_x=0.0, confounder_y=0.0)
    mom = sem.population_moments(spec)
    # without confounding the population regression slope is the causal effect
    assert mom.sigma_xy[0] / mom.sigma_xx[0, 0] == pytest.approx(2.0)


def test_perturb_mean_shift():
    spec = sem.random_anchor_spec(2, 1, 1, seed=8)
    delta = np.array([2.0])
    d = sem.perturb(spec, sem.Perturbation(delta), 50_000, seed=9)
    mean = sem.perturbed_mean(spec, delta)
    np.testing.assert_allclose(d.X.mean(0), mean[:2], atol=0.05)
    assert d.Y.mean() == pytest.approx(mean[2], abs=0.05)
    assert d.A is None
    with pytest.raises(InvalidInputError):
        sem.perturb(spec, sem.Perturbation(np.ones(2)), 10)


def test_perturbed_risk_matches_simulation():
    spec = sem.random_anchor_spec(2, 1, 2, seed=10)
    b = np.array([0.3, -0.2])
    pert = sem.Perturbation(np.array([1.0, -0.5]), stochastic=True, cov=0.5 * np.eye(2))
    d = sem.perturb(spec, pert, 100_000, seed=11)
    risk = sem.perturbed_risk(spec, b, pert.second_moment())
    assert np.mean((d.Y - d.X @ b) ** 2) == pytest.approx(risk, rel=0.03)


def test_second_moment():
    p = sem.Perturbation(np.array([1.0, 2.0]), stochastic=True, cov=np.eye(2))
    np.testing.assert_array_equal(p.second_moment(), [[2.0, 2.0], [2.0, 5.0]])
    assert np.array_equal(sem.Perturbation(np.array([3.0])).second_moment(), [[9.0]])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_worst_case_closed_form_vs_grid_scalar(seed):
    spec = sem.random_anchor_spec(2, 1, 1, seed=seed)
    b = np.random.default_rng(seed).standard_normal(2)
    for g in (0.5, 2.0, 7.0):
        assert sem.worst_case_sup(spec, b, g) == pytest.approx(sem.worst_case_sup_grid(spec, b, g), abs=1e-8)


def test_worst_case_grid_two_dim_close():
    spec = sem.random_anchor_spec(2, 1, 2, seed=12)
    b = np.array([0.5, 0.5])
    exact = sem.worst_case_sup(spec, b, 3.0)
    grid = sem.worst_case_sup_grid(spec, b, 3.0, n_grid=4001)
    assert grid <= exact + 1e-10
    assert grid == pytest.approx(exact, rel=1e-5)


def test_worst_case_rejects_negative_gamma():
    spec = sem.iv_spec()
    with pytest.raises(InvalidInputError):
        sem.worst_case_sup(spec, [1.0], -1.0)


def test_environment_anchors():
    B = np.zeros((3, 3))
    B[1, 0] = 1.0
    spec = sem.AnchorSemSpec(p=1, q=1, r=3, B=B, M=np.zeros((3, 3)) + [[1.0, -1.0, 0.0], [0, 0, 0], [0, 0, 0]],
                             env_probs=[0.2, 0.3, 0.5])
    d = sem.gen_anchor_sem(spec, 2000, seed=13)
    np.testing.assert_array_equal(d.A.sum(1), 1.0)
    S = sem.anchor_covariance(spec)
    np.testing.assert_allclose(S.sum(1), 0.0, atol=1e-15)
    with pytest.raises(InvalidInputError):
        sem.AnchorSemSpec(p=1, q=1, r=2, B=B, M=np.zeros((3, 2)), env_probs=[0.5, 0.6])


def test_singular_system_rejected():
    B = np.zeros((3, 3))
    B[0, 1] = B[1, 0] = 1.0
    with pytest.raises(InvalidInputError):
        sem.AnchorSemSpec(p=1, q=1, r=1, B=B, M=np.zeros((3, 1)))


def test_population_anchor_coef_gamma_one_is_population_ols():
    spec = sem.random_anchor_spec(3, 1, 2, seed=14)
    mom = sem.population_moments(spec)
    np.testing.assert_allclose(sem.population_anchor_coef(spec, 1.0),
                               np.linalg.solve(mom.sigma_xx, mom.sigma_xy), atol=1e-12)


def test_population_anchor_coef_minimizes_population_objective():
    spec = sem.random_anchor_spec(3, 1, 2, seed=15)
    rng = np.random.default_rng(0)
    for g in (0.0, 2.0, 10.0):
        b = sem.population_anchor_coef(spec, g)
        f = an.population_anchor_objective(b, spec, g)
        for _ in range(10):
            assert an.population_anchor_objective(b + 0.01 * rng.standard_normal(3), spec, g) >= f


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["dense", "anchor", "iv"]))
def test_json_round_trip(seed, kind):
    if kind == "dense":
        spec = sem.make_dense_spec(30, 8, 2, 3, seed=seed)
    elif kind == "anchor":
        spec = sem.random_anchor_spec(2, 1, 2, seed=seed)
    else:
        spec = sem.iv_spec(kappa=1.0 + seed % 7)
    back = sem.spec_from_json(sem.spec_to_json(spec))
    assert type(back) is type(spec)
    assert sem.spec_to_json(back) == sem.spec_to_json(spec)


def test_spec_from_dict_shorthand_and_errors():
    short = sem.spec_from_dict({"type": "dense", "n": 20, "p": 10, "seed": 3})
    assert short.confounder_loading.shape == (3, 10)
    assert sem.spec_to_json(short) == sem.spec_to_json(sem.make_dense_spec(20, 10, seed=3))
    with pytest.raises(InvalidInputError):
        sem.spec_from_dict({"type": "dense", "n": 20, "p": 10, "bogus": 1})
    with pytest.raises(InvalidInputError):
        sem.spec_from_dict({"p": 2})
