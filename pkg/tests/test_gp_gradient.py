import numpy as np
import pytest
from scipy import stats

from dpgibo import (
    EvaluationSet,
    SyntheticGPDraw,
    gradient_posterior,
    matern,
    posterior_gradient_covariance,
    posterior_gradient_means,
    rbf,
)


def _ev(X, Y, sigma2=0.0):
    ev = EvaluationSet(X.shape[1], Y.shape[0], sigma2)
    ev.add(X, Y)
    return ev


def test_posterior_mean_matches_dense_representer_formula():
    rng = np.random.default_rng(2)
    k = matern(2.5, [0.9, 1.2])
    X = rng.normal(size=(12, 2))
    Y = rng.normal(size=(3, 12))
    theta = rng.normal(size=2)
    sigma2 = 0.05
    dense = np.linalg.solve(k(X, X) + sigma2 * np.eye(12), Y.T)
    expected = (k.grad_first(theta, X).T @ dense).T
    np.testing.assert_allclose(posterior_gradient_means(k, _ev(X, Y, sigma2), theta), expected, rtol=1e-8, atol=1e-10)


def test_posterior_mean_is_linear_in_observations():
    rng = np.random.default_rng(3)
    k = rbf(1.0)
    X = rng.normal(size=(8, 3))
    Y1, Y2 = rng.normal(size=(2, 4, 8))
    theta = np.zeros(3)
    g = lambda Y: posterior_gradient_means(k, _ev(X, Y, 0.01), theta)
    np.testing.assert_allclose(g(2.0 * Y1 - 3.0 * Y2), 2.0 * g(Y1) - 3.0 * g(Y2), atol=1e-10)


def test_empty_design_returns_prior():
    k = rbf(1.0)
    np.testing.assert_allclose(posterior_gradient_covariance(k, np.zeros((0, 4)), 0.0, np.ones(4)), np.eye(4))
    with pytest.raises(ValueError):
        posterior_gradient_means(k, EvaluationSet(4, 2), np.zeros(4))


def test_covariance_does_not_depend_on_observations():
    rng = np.random.default_rng(4)
    k = rbf(0.7)
    X = rng.normal(size=(10, 2))
    theta = rng.normal(size=2)
    a = gradient_posterior(k, _ev(X, rng.normal(size=(2, 10)), 0.1), theta).covariance
    b = gradient_posterior(k, _ev(X, 100 * rng.normal(size=(2, 10)), 0.1), theta).covariance
    np.testing.assert_array_equal(a, b)


def test_covariance_matches_dense_schur_complement():
    rng = np.random.default_rng(5)
    k = rbf([1.0, 0.5, 2.0])
    X = rng.normal(size=(15, 3))
    theta = rng.normal(size=3)
    G = k.grad_first(theta, X)
    dense = k.cross_hessian(theta, theta) - G.T @ np.linalg.solve(k(X, X) + 0.3 * np.eye(15), G)
    np.testing.assert_allclose(posterior_gradient_covariance(k, X, 0.3, theta), dense, atol=1e-10)


def test_trace_never_increases_when_points_are_added():
    rng = np.random.default_rng(6)
    k = rbf(1.0)
    theta = np.zeros(3)
    X = rng.normal(scale=0.8, size=(20, 3))
    traces = [np.trace(posterior_gradient_covariance(k, X[:m], 0.01, theta)) for m in range(21)]
    assert np.all(np.diff(traces) <= 1e-10)


def test_small_simplex_drives_noiseless_trace_to_zero():
    k = rbf(1.0)
    d = 3
    theta = np.full(d, 0.2)
    V = np.vstack([np.eye(d), -np.ones(d) / d])
    prev = np.inf
    for h in (1e-1, 3e-2, 1e-2):
        tr = np.trace(posterior_gradient_covariance(k, theta + h * V, 0.0, theta))
        assert tr < prev
        prev = tr
    assert prev < 1e-3


def test_rkhs_bias_bound_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        k = rbf(rng.uniform(0.6, 1.5))
        f = SyntheticGPDraw.random(k, d, int(rng.integers(3, 12)), rng, spread=1.5)
        theta = rng.uniform(-1, 1, d)
        X = theta + rng.normal(scale=0.7, size=(int(rng.integers(1, 10)), d))
        ev = _ev(X, f(X)[None, :])
        err = posterior_gradient_means(k, ev, theta)[0] - f.gradient(theta)
        tr = np.trace(posterior_gradient_covariance(k, X, 0.0, theta))
        assert err @ err <= f.rkhs_norm_sq * tr + 1e-8


def test_posterior_is_calibrated_for_prior_draws():
    """Mahalanobis errors of the gradient posterior follow chi^2_d."""
    rng = np.random.default_rng(9)
    k = rbf(1.0)
    d, m, sigma2 = 2, 6, 0.01
    theta = np.zeros(d)
    X = rng.normal(scale=0.8, size=(m, d))
    G = k.grad_first(theta, X)  # cov(f(X), grad f(theta))
    joint = np.block([[k(X, X), G], [G.T, k.cross_hessian(theta, theta)]])
    Lj = np.linalg.cholesky(joint + 1e-12 * np.eye(m + d))
    cov = posterior_gradient_covariance(k, X, sigma2, theta)
    P = np.linalg.inv(cov)
    stat = []
    for _ in range(500):
        z = Lj @ rng.standard_normal(m + d)
        y = z[:m] + np.sqrt(sigma2) * rng.standard_normal(m)
        mean = posterior_gradient_means(k, _ev(X, y[None, :], sigma2), theta)[0]
        e = z[m:] - mean
        stat.append(e @ P @ e)
    assert stats.kstest(stat, stats.chi2(d).cdf).pvalue > 1e-3


def test_repeated_points_average_observations():
    ev = EvaluationSet(1, 2, 0.5)
    ev.add([[0.0], [0.0]], [[1.0, 3.0], [0.0, 2.0]])
    assert len(ev) == 1
    np.testing.assert_allclose(ev.observations[:, 0], [2.0, 1.0])
    np.testing.assert_allclose(ev.point_noise, [0.25])
