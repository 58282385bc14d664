import numpy as np
import pytest

from dpgibo import (
    gp_lengthscale_tuning_problem,
    huber_regression_problem,
    noisy_wrapper,
    normal_location_problem,
    random_search_baseline,
    svm_surrogate_problem,
)
from dpgibo.problems import SVM_REG_BOUNDS


def fd_gradient(f, x, h=1e-6):
    g = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_normal_location_losses_and_gradient():
    p = normal_location_problem(n=7, d=3, seed=1)
    rng = np.random.default_rng(0)
    # per-user loss vanishes at that user's own sample: recover x_i from the gradients
    x = -p.per_user_gradients(np.zeros(3))
    Y = p.evaluate(x, rng)
    np.testing.assert_allclose(np.diag(Y), 0.0, atol=1e-15)
    th = rng.normal(size=3)
    np.testing.assert_allclose(p.gradient(th), th - x.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(p.gradient(th), fd_gradient(p.true_loss, th), rtol=1e-6)
    np.testing.assert_allclose(p.minimizer, x.mean(axis=0))


def test_huber_per_user_gradient_bounded_and_consistent():
    p = huber_regression_problem(seed=2)
    rng = np.random.default_rng(1)
    for _ in range(200):
        th = rng.normal(scale=5, size=4)
        assert np.linalg.norm(p.per_user_gradients(th), axis=1).max() <= p.gradient_bound + 1e-12
    th = rng.normal(size=4)
    np.testing.assert_allclose(p.gradient(th), fd_gradient(p.true_loss, th), rtol=1e-5, atol=1e-8)
    assert np.linalg.norm(p.gradient(p.minimizer)) < 1e-8
    # per-user losses average to the reported loss
    assert p.losses(th[None, :]).mean() == pytest.approx(p.true_loss(th))


def test_huber_zero_residual_means_zero_loss():
    # one user in two dimensions: the fitted parameter interpolates the response exactly
    p = huber_regression_problem(n=1, d=2, seed=0)
    assert p.true_loss(p.minimizer) == pytest.approx(0.0, abs=1e-16)
    np.testing.assert_allclose(p.per_user_gradients(p.minimizer), 0.0, atol=1e-8)


def test_noisy_wrapper_adds_requested_noise():
    base = normal_location_problem(n=3, d=2, seed=0)
    same = noisy_wrapper(base, 0.0)
    z = np.array([[0.2, 0.1]])
    np.testing.assert_array_equal(same.evaluate(z, np.random.default_rng(0)), base.evaluate(z, np.random.default_rng(0)))
    noisy = noisy_wrapper(base, 0.3)
    rng = np.random.default_rng(1)
    draws = noisy.evaluate(np.repeat(z, 10**4, axis=0), rng)[1]
    assert np.std(draws) == pytest.approx(0.3, rel=0.05)
    assert noisy.declared_sigma == 0.3
    assert noisy_wrapper(base, 0.01, declared_sigma=1e-4).declared_sigma == 1e-4


def test_gp_tuning_generating_lengthscales_beat_random_points():
    wins = []
    for seed in range(5):
        p = gp_lengthscale_tuning_problem(d=5, n_total=300, seed=seed)
        rng = np.random.default_rng(seed)
        wins.append(p.true_loss(p.minimizer) <= np.median([p.true_loss(p.sample_box(rng)) for _ in range(5)]))
    assert np.median(wins) == 1


def test_svm_surrogate_box_and_planted_minimum():
    p = svm_surrogate_problem(d=20, seed=3)
    lo, hi = p.box
    np.testing.assert_array_equal(np.c_[lo[-3:], hi[-3:]], np.array(SVM_REG_BOUNDS))
    np.testing.assert_array_equal(lo[:-3], -2.0)
    np.testing.assert_array_equal(hi[:-3], 2.0)
    rng = np.random.default_rng(0)
    best = p.true_loss(p.minimizer)
    assert all(best < p.true_loss(p.sample_box(rng)) for _ in range(100))
    assert np.linalg.norm(fd_gradient(p.true_loss, p.minimizer)) <= 1e-6
    th = p.sample_box(rng)
    np.testing.assert_allclose(p.gradient(th), fd_gradient(p.true_loss, th), rtol=1e-5, atol=1e-9)
    # user losses average exactly to the mean loss
    assert p.losses(th[None, :]).mean() == pytest.approx(p.true_loss(th), abs=1e-14)


def test_random_search_incumbent():
    p = normal_location_problem(n=4, d=2, seed=0)
    one = random_search_baseline(p, 1, seed=0)
    assert len(one.rows) == 1
    assert one.total_evaluations == 4
    rec = random_search_baseline(p, 400, seed=1)
    assert len(rec.rows) == 100
    assert np.all(np.diff(rec.column("loss")) <= 0)


def test_random_search_improves_with_budget():
    p = normal_location_problem(n=1, d=2, seed=0)
    medians = [np.median([random_search_baseline(p, b, s).final_loss for s in range(20)]) for b in (1, 10, 100)]
    assert medians[0] > medians[1] > medians[2]
