import warnings

import numpy as np
import pytest

from deconfounding import anchor as an, linalg, sem
from deconfounding.errors import DegenerateProblemError, InvalidInputError


def _ols(X, y):
    return np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)[0]


def _anchor_data(seed=0, n=200, p=3, r=2):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, r))
    H = rng.standard_normal(n)
    X = A @ rng.standard_normal((r, p)) + np.outer(H, np.ones(p)) + rng.standard_normal((n, p))
    Y = X @ np.arange(1.0, p + 1) + 2.0 * H + rng.standard_normal(n)
    return X, Y, A


def test_gamma_one_is_ols():
    X, Y, A = _anchor_data(0)
    fit = an.anchor_fit(X, Y, A, an.AnchorConfig(1.0))
    ref = _ols(X, Y)
    np.testing.assert_allclose(fit.beta, ref[1:], atol=1e-10)
    assert fit.intercept == pytest.approx(ref[0], abs=1e-10)


def test_gamma_zero_is_partialled_out_ols():
    X, Y, A = _anchor_data(1)
    fit = an.anchor_fit(X, Y, A, an.AnchorConfig(0.0))
    n = len(Y)
    D = np.column_stack([np.ones(n), A])
    rx = X - D @ np.linalg.lstsq(D, X, rcond=None)[0]
    ry = Y - D @ np.linalg.lstsq(D, Y, rcond=None)[0]
    np.testing.assert_allclose(fit.beta, np.linalg.lstsq(rx, ry, rcond=None)[0], atol=1e-10)


def test_transform_scales_anchor_part_by_sqrt_gamma():
    X, Y, A = _anchor_data(2)
    P = an.anchor_projector(A)
    Xc = X - X.mean(0)
    Xt, _ = an.anchor_transform(Xc, Y, A, 4.0)
    np.testing.assert_allclose(linalg.apply_proj(P, Xt), 2.0 * linalg.apply_proj(P, Xc), atol=1e-10)
    np.testing.assert_allclose(linalg.residualize(P, Xt), linalg.residualize(P, Xc), atol=1e-10)
    Xi, Yi = an.anchor_transform(X, Y, A, 1.0)
    np.testing.assert_array_equal(Xi, X)
    with pytest.raises(InvalidInputError):
        an.anchor_transform(X, Y, A, np.inf)


def test_iv_sem_large_gamma_approaches_causal_effect():
    spec = sem.iv_spec(beta0=1.0, kappa=1.5, confounder_x=1.0, confounder_y=2.0)
    d = sem.gen_anchor_sem(spec, 20_000, seed=0)
    errs = [abs(an.anchor_fit(d.X, d.Y, d.A, an.AnchorConfig(g)).beta[0] - 1.0) for g in (1.0, 10.0, 1e4)]
    assert errs[2] < 0.05
    assert errs[0] > errs[1] > errs[2]


def test_tsls_with_anchor_equal_x_is_ols():
    X, Y, _ = _anchor_data(3)
    np.testing.assert_allclose(an.tsls(X, Y, X), _ols(X, Y)[1:], atol=1e-10)


def test_tsls_scalar_iv_ratio():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(50)
    x = 2 * a + rng.standard_normal(50)
    y = x + rng.standard_normal(50)
    ac, xc, yc = a - a.mean(), x - x.mean(), y - y.mean()
    assert an.tsls(x, y, a)[0] == pytest.approx((ac @ yc) / (ac @ xc), abs=1e-10)


def test_tsls_removes_confounding_bias():
    spec = sem.iv_spec(beta0=0.5, kappa=1.0, confounder_x=1.0, confounder_y=1.5)
    d = sem.gen_anchor_sem(spec, 20_000, seed=5)
    iv = an.tsls(d.X, d.Y, d.A)[0]
    ols = _ols(d.X, d.Y)[1]
    assert abs(iv - 0.5) < 0.05
    assert abs(ols - 0.5) > 0.3


def test_tsls_uninformative_anchor():
    X, Y, _ = _anchor_data(6, p=2)
    with pytest.raises(DegenerateProblemError):
        an.tsls(X, Y, np.ones((len(Y), 1)))


def test_diluted_causal_matches_huge_gamma_seed8():
    X, Y, A = _anchor_data(8, n=500, p=2, r=2)
    dc = an.diluted_causal(X, Y, A)
    big = an.anchor_fit(X, Y, A, an.AnchorConfig(1e8)).beta
    assert np.max(np.abs(dc - big)) <= 1e-4
    inf_fit = an.anchor_fit(X, Y, A, an.AnchorConfig(np.inf))
    np.testing.assert_array_equal(inf_fit.beta, dc)


def test_diluted_causal_underidentified_secondary_optimality():
    """With one anchor and two predictors the first stage has a line of minimizers."""
    rng = np.random.default_rng(9)
    n = 300
    a = rng.standard_normal((n, 1))
    X = np.column_stack([a[:, 0], np.zeros(n)]) + rng.standard_normal((n, 2))
    Y = X @ [1.0, -1.0] + rng.standard_normal(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", an.ProjectabilityWarning)
        b = an.diluted_causal(X, Y, a)
    Xc, Yc, ac = X - X.mean(0), Y - Y.mean(), a - a.mean(0)
    P = linalg.projector_from(ac)

    def stages(v):
        r = Yc - Xc @ v
        return np.sum(linalg.apply_proj(P, r) ** 2), np.sum(linalg.residualize(P, r) ** 2)

    first, second = stages(b)
    N = linalg.null_space(linalg.apply_proj(P, Xc))
    assert N.shape[1] == 1
    for t in np.linspace(-2, 2, 21):
        f, s = stages(b + t * N[:, 0])
        assert f == pytest.approx(first, abs=1e-8 * max(1.0, first))
        assert s >= second - 1e-8


def test_projectability_cases():
    rng = np.random.default_rng(10)
    n = 400
    A = rng.standard_normal((n, 2))
    X = A @ np.array([[1.0, 0.0], [0.0, 1.0]]) + rng.standard_normal((n, 2))
    Y = X @ [1.0, 1.0] + rng.standard_normal(n)
    assert an.projectability(A, X, Y).holds
    # exact population cases
    assert an.projectability_moments([[1.0], [0.0]], [1.0, 0.0]).holds
    pr = an.projectability_moments([[1.0], [0.0]], [0.0, 1.0])
    assert not pr.holds and (pr.rank_ax, pr.rank_axy) == (1, 2)
    assert an.projectability_moments(np.zeros((2, 1)), [0.0, 0.0]).holds
    with pytest.raises(InvalidInputError):
        an.projectability_moments([[1.0], [0.0]], [1.0])


def test_projectability_warning_emitted():
    rng = np.random.default_rng(11)
    n = 300
    A = rng.standard_normal((n, 2))
    x = A[:, 0] + rng.standard_normal(n)
    y = x + 3.0 * A[:, 1] + rng.standard_normal(n)
    with pytest.warns(an.ProjectabilityWarning):
        an.diluted_causal(x[:, None], y, A)


def test_anchor_objective_gamma_one_is_mse():
    X, Y, A = _anchor_data(12)
    b = np.array([0.5, 1.0, -1.0])
    r = Y - X @ b
    r = r - r.mean()
    assert an.anchor_objective(b, X, Y, A, 1.0) == pytest.approx(r @ r / len(Y), rel=1e-12)
    with pytest.raises(InvalidInputError):
        an.anchor_objective(b, X, Y, A, -1.0)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 3.0, 50.0])
def test_fit_minimizes_objective(gamma):
    X, Y, A = _anchor_data(13)
    fit = an.anchor_fit(X, Y, A, an.AnchorConfig(gamma))
    best = an.anchor_objective(fit.beta, X, Y, A, gamma)
    assert fit.anchor_objective == pytest.approx(best, rel=1e-10)
    rng = np.random.default_rng(14)
    for _ in range(20):
        assert an.anchor_objective(fit.beta + 0.05 * rng.standard_normal(3), X, Y, A, gamma) >= best


def test_residual_anchor_correlation_decreases_in_gamma():
    X, Y, A = _anchor_data(15)
    path = an.anchor_path(X, Y, A, [0.0, 1.0, 4.0, 16.0, 256.0])
    norms = [np.linalg.norm(f.residual_anchor_correlation) for f in path]
    assert all(b <= a + 1e-12 for a, b in zip(norms[1:], norms[2:]))
    assert norms[-1] < 0.1 * norms[1]


def test_penalized_anchor_and_config_checks():
    X, Y, A = _anchor_data(16)
    fit = an.anchor_fit(X, Y, A, an.AnchorConfig(2.0, lambda_=1e3))
    np.testing.assert_array_equal(fit.beta, 0.0)
    with pytest.raises(InvalidInputError):
        an.AnchorConfig(-0.1)
    with pytest.raises(InvalidInputError):
        an.anchor_fit(X, Y, A, an.AnchorConfig(np.inf, lambda_=0.1))
    with pytest.raises(InvalidInputError):
        an.anchor_fit(X, Y[:-1], A)


def test_environment_dummies():
    D, levels = an.environment_dummies(["b", "a", "b", "c"])
    assert levels == ["a", "b", "c"]
    np.testing.assert_array_equal(D.sum(1), 1.0)
    np.testing.assert_array_equal(D[:, 1], [1, 0, 1, 0])
    with pytest.raises(InvalidInputError):
        an.environment_dummies([])


def test_population_objective_matches_worst_case():
    spec = sem.random_anchor_spec(3, 1, 2, seed=1)
    rng = np.random.default_rng(17)
    for g in (0.0, 1.0, 5.0):
        b = rng.standard_normal(3)
        assert sem.worst_case_sup(spec, b, g) == pytest.approx(an.population_anchor_objective(b, spec, g), abs=1e-10)


def test_population_diluted_causal_matches_large_gamma_coef():
    spec = sem.random_anchor_spec(2, 1, 2, seed=3)
    np.testing.assert_allclose(an.population_diluted_causal(spec), sem.population_anchor_coef(spec, 1e8), atol=1e-6)
