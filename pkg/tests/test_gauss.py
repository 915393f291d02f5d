import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from predsel.core import Dataset, SubmodelIndicator, standardize
from predsel.errors import DimensionMismatch
from predsel.gauss import (GaussPrior, SuffStats, fit, fit_arrays, predictive, predictive_mean_var, quick_log_ml,
                           sample_posterior, tau2_quadrature)

from conftest import toy_regression

PRIOR = GaussPrior()


def oracle_log_ml(D, y, a_t=0.5, b_t=0.5, a_s=0.5, b_s=0.5):
    """y | tau2 is multivariate Student-t; integrate over log tau2 numerically."""
    n = len(y)

    def log_cond(s):
        cov = (b_s / a_s) * (np.eye(n) + np.exp(s) * D @ D.T)
        return stats.multivariate_t(np.zeros(n), cov, df=2 * a_s).logpdf(y)

    def log_prior(s):
        return stats.invgamma(a_t, scale=b_t).logpdf(np.exp(s)) + s

    grid = np.linspace(-15, 14, 581)
    lp = np.array([log_cond(s) + log_prior(s) for s in grid])
    top = lp.max()
    val, _ = integrate.quad(lambda s: np.exp(log_cond(s) + log_prior(s) - top), -40, 14,
                            points=[grid[np.argmax(lp)]], limit=400, epsabs=0, epsrel=1e-11)
    return top + np.log(val)


@pytest.mark.parametrize("n,p,seed", [(12, 2, 0), (30, 4, 1), (8, 1, 2), (25, 6, 3)])
def test_log_marginal_likelihood_matches_integrated_student_t(n, p, seed):
    ds = toy_regression(n, p, seed)
    sub = SubmodelIndicator.full(p)
    D = ds.design(sub)
    assert fit(ds, sub, PRIOR).log_ml == pytest.approx(oracle_log_ml(D, ds.y), abs=1e-6)


def test_fixed_tau2_marginal_is_multivariate_student_t():
    ds = toy_regression(15, 3, 4)
    sub = SubmodelIndicator.from_variables(3, [1, 3])
    D = ds.design(sub)
    cov = 1.0 * (np.eye(15) + 0.7 * D @ D.T)
    oracle = stats.multivariate_t(np.zeros(15), cov, df=1.0).logpdf(ds.y)
    assert fit(ds, sub, GaussPrior.fixed_tau2(0.7)).log_ml == pytest.approx(oracle, abs=1e-9)


def test_empty_data_gives_zero_log_ml():
    sub = SubmodelIndicator.full(3)
    assert abs(fit_arrays(np.zeros((0, 4)), np.zeros(0), sub, PRIOR).log_ml) < 1e-9


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(6, 14))
def test_chain_rule(seed, p, n):
    """Sum of one-step-ahead log predictive densities equals the log marginal likelihood."""
    ds = toy_regression(n, p, seed)
    sub = SubmodelIndicator.full(p)
    D = ds.design()
    total = 0.0
    for i in range(n):
        f = fit_arrays(D[:i], ds.y[:i], sub, PRIOR)
        total += float(f.logpdf(D[i:i + 1, sub.columns], ds.y[i:i + 1])[0])
    assert total == pytest.approx(fit(ds, sub, PRIOR).log_ml, abs=1e-6)


def test_grid_resolution_barely_matters():
    ds = toy_regression(50, 5, 7)
    for sub in (SubmodelIndicator.empty(5), SubmodelIndicator.from_variables(5, [2]), SubmodelIndicator.full(5)):
        a = fit(ds, sub, GaussPrior(n_grid=64)).log_ml
        b = fit(ds, sub, GaussPrior(n_grid=1024)).log_ml
        assert abs(a - b) < 1e-6


def test_ridge_limit_intercept_only():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    D = np.ones((4, 1))
    sub = SubmodelIndicator.empty(0)
    tiny = fit_arrays(D, y, sub, GaussPrior.fixed_tau2(1e-10))
    assert abs(tiny.posterior_mean()[0]) < 1e-8
    tau2 = 2.0
    f = fit_arrays(D, y, sub, GaussPrior.fixed_tau2(tau2))
    assert f.posterior_mean()[0] == pytest.approx(y.sum() / (4 + 1 / tau2), rel=1e-12)


def test_vague_prior_recovers_least_squares(rng):
    X = rng.standard_normal((5000, 2))
    y = 0.5 + X @ [1.0, -2.0] + rng.standard_normal(5000)
    ds = Dataset(X, y)
    f = fit(ds, SubmodelIndicator.full(2), GaussPrior.fixed_tau2(1e6))
    ols = np.linalg.lstsq(ds.design(), y, rcond=None)[0]
    assert np.allclose(f.posterior_mean(), ols, atol=1e-3)


def test_duplicated_data_doubles_the_evidence(rng):
    ds = toy_regression(20, 2, 9)
    twice = Dataset(np.vstack([ds.X, ds.X]), np.concatenate([ds.y, ds.y]))
    sub = SubmodelIndicator.full(2)
    prior = GaussPrior.fixed_tau2(1.5)
    f = fit(twice, sub, prior)
    assert f.a_n == pytest.approx(0.5 + 20)
    D = ds.design()
    A = 2 * D.T @ D + np.eye(3) / 1.5
    mu = np.linalg.solve(A, 2 * D.T @ ds.y)
    assert np.allclose(f.mu[0], mu, atol=1e-10)
    assert f.b_n[0] == pytest.approx(0.5 + 0.5 * (2 * ds.y @ ds.y - mu @ A @ mu), rel=1e-10)


def test_unused_columns_do_not_change_the_fit(rng):
    ds = toy_regression(30, 3, 5)
    wider = Dataset(np.column_stack([ds.X, rng.standard_normal(30)]), ds.y)
    a = fit(ds, SubmodelIndicator.from_variables(3, [1, 3]), PRIOR)
    b = fit(wider, SubmodelIndicator.from_variables(4, [1, 3]), PRIOR)
    assert a.log_ml == pytest.approx(b.log_ml, abs=1e-12)
    assert np.allclose(a.posterior_mean(), b.posterior_mean())


def test_symmetric_intercept_only_predictive_centred_on_posterior_mean():
    y = np.array([-2.0, -1.0, 1.0, 2.0]) + 3.0
    f = fit_arrays(np.ones((4, 1)), y, SubmodelIndicator.empty(0), PRIOR)
    m = predictive(f, np.zeros(0))
    assert np.allclose(m.loc, f.mu[:, 0])
    mean, _ = predictive_mean_var(f, np.zeros(0))
    assert mean == pytest.approx(f.posterior_mean()[0], rel=1e-12)


@pytest.mark.parametrize("n", [3, 20, 200])
def test_predictive_integrates_to_one(n):
    ds = toy_regression(n, 2, n)
    f = fit(ds, SubmodelIndicator.full(2), PRIOR)
    m = predictive(f, [0.3, -1.2])
    mean = float(np.exp(m.log_weights) @ m.loc)
    width = 400 * m.scale.max()
    grid = np.linspace(mean - width, mean + width, 400_001)
    mass = np.trapezoid(np.exp(m.logpdf(grid)), grid)
    # Student-t tails beyond the grid, computed exactly
    w = np.exp(m.log_weights)
    tail = np.sum(w * (stats.t.sf((mean + width - m.loc) / m.scale, m.dof)
                       + stats.t.cdf((mean - width - m.loc) / m.scale, m.dof)))
    assert abs(mass + tail - 1.0) < 1e-4


def test_predictive_mean_converges_to_truth(rng):
    X = rng.standard_normal((20000, 2))
    y = 1.0 + X @ [0.5, -0.25] + rng.standard_normal(20000)
    f = fit(Dataset(X, y), SubmodelIndicator.full(2), PRIOR)
    x = np.array([1.0, 1.0])
    mean, var = predictive_mean_var(f, x)
    assert abs(mean - 1.25) < 4 * np.sqrt(3.0 / 20000)
    assert var == pytest.approx(1.0, abs=0.05)


def test_predictive_matches_monte_carlo_over_posterior_draws():
    ds = toy_regression(25, 2, 11)
    f = fit(ds, SubmodelIndicator.full(2), PRIOR)
    draws = sample_posterior(f, 40000, 3)
    x = np.array([1.0, 0.5, -0.5])
    ys = np.array([-1.0, 0.4, 2.5])
    dens = stats.norm.pdf(ys[None, :], (draws.w @ x)[:, None], np.sqrt(draws.sigma2)[:, None])
    mc = dens.mean(axis=0)
    se = dens.std(axis=0) / np.sqrt(dens.shape[0])
    exact = np.exp(f.logpdf(x[None, :].repeat(3, 0), ys))
    assert np.all(np.abs(mc - exact) < 4 * se)


def test_posterior_draws_are_reproducible_and_centred():
    ds = toy_regression(40, 3, 12)
    f = fit(ds, SubmodelIndicator.full(3), PRIOR)
    a, b = sample_posterior(f, 100_000, 8), sample_posterior(f, 100_000, 8)
    assert np.array_equal(a.w, b.w) and a.digest == b.digest
    assert np.all(a.sigma2 > 0)
    se = a.w.std(axis=0) / np.sqrt(len(a))
    assert np.all(np.abs(a.w.mean(axis=0) - f.posterior_mean()) < 4 * se)


def test_mixture_moments_by_simulation():
    ds = toy_regression(15, 1, 13)
    f = fit(ds, SubmodelIndicator.full(1), PRIOR)
    m = predictive(f, [0.7])
    r = np.random.default_rng(0)
    k = r.choice(len(m), size=400_000, p=np.exp(m.log_weights))
    sample = m.loc[k] + m.scale[k] * r.standard_t(m.dof[k])
    mean, var = predictive_mean_var(f, [0.7])
    assert abs(sample.mean() - mean) < 4 * np.sqrt(var / sample.size)
    assert sample.var() == pytest.approx(var, rel=0.05)


def test_grid_weights_normalize_and_are_positive():
    ds = toy_regression(30, 2, 14)
    f = fit(ds, SubmodelIndicator.full(2), PRIOR)
    assert logsumexp(f.log_w) == pytest.approx(0.0, abs=1e-12)
    assert f.a_n > 0 and np.all(f.b_n > 0) and np.all(f.prec > 0)
    grid, logw = tau2_quadrature(0.5, 0.5)
    assert np.all(np.diff(grid) > 0) and logsumexp(logw) == pytest.approx(0.0, abs=1e-12)


def test_explicit_grid_validation():
    with pytest.raises(ValueError):
        GaussPrior(tau2_grid=np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        GaussPrior(tau2_grid=np.array([1.0, 2.0]), tau2_log_weights=np.log([0.3, 0.3]))
    with pytest.raises(ValueError):
        GaussPrior(alpha_sigma=0.0)


def test_dimension_checks():
    ds = toy_regression(10, 2, 0)
    with pytest.raises(DimensionMismatch):
        fit(ds, SubmodelIndicator.full(3), PRIOR)
    f = fit(ds, SubmodelIndicator.full(2), PRIOR)
    with pytest.raises(DimensionMismatch):
        predictive(f, [1.0, 2.0, 3.0])


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from([(100, 20), (30, 10), (2000, 5), (8, 3)]))
def test_quick_log_ml_agrees_with_full_fit(seed, shape):
    n, p = shape
    ds = toy_regression(n, p, seed)
    r = np.random.default_rng(seed)
    sub = SubmodelIndicator.from_variables(p, [j for j in range(1, p + 1) if r.random() < 0.4][: n - 2])
    ss = SuffStats.from_dataset(ds)
    assert quick_log_ml(ss, sub.columns, PRIOR) == pytest.approx(fit(ds, sub, PRIOR).log_ml, abs=1e-5)
