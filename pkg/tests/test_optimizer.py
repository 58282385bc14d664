import numpy as np
import pytest

import dpgibo.optimizer as opt_mod
from dpgibo import (
    IllConditionedGramError,
    OptimizerConfig,
    StepRule,
    SyntheticGPDraw,
    dp_gd_baseline,
    dp_gibo_run,
    normal_location_problem,
    polynomial2,
    rbf,
    step_update,
)
from dpgibo.optimizer import read_run_csv
from dpgibo.problems import synthetic_gp_problem


def test_plain_step_example():
    cfg = OptimizerConfig(T=1, eta=0.1, theta0=np.zeros(2))
    theta, state = step_update(np.zeros(2), np.array([1.0, 0.0]), None, cfg)
    np.testing.assert_allclose(theta, [-0.1, 0.0])
    assert state is None


def test_adagrad_first_step_is_normalized():
    cfg = OptimizerConfig(T=1, eta=0.5, theta0=np.zeros(3), step_rule="adagrad")
    g = np.array([2.0, -0.01, 0.0])
    theta, acc = step_update(np.ones(3), g, None, cfg)
    np.testing.assert_allclose(theta, 1 - 0.5 * g / np.sqrt(g * g + 1e-8))
    np.testing.assert_allclose(acc, g * g)
    # second step divides by the accumulated squares
    theta2, _ = step_update(theta, g, acc, cfg)
    np.testing.assert_allclose(theta2, theta - 0.5 * g / np.sqrt(2 * g * g + 1e-8))


@pytest.mark.parametrize("rule", ["plain", "adagrad"])
def test_zero_gradient_leaves_theta(rule):
    cfg = OptimizerConfig(T=1, eta=1.0, theta0=np.zeros(2), step_rule=rule)
    theta, _ = step_update(np.array([0.3, -1.0]), np.zeros(2), None, cfg)
    np.testing.assert_array_equal(theta, [0.3, -1.0])


def test_step_rule_aliases_and_validation():
    assert StepRule.parse("PlainGD") is StepRule.PLAIN
    assert StepRule.parse("AdaGrad") is StepRule.ADAGRAD
    with pytest.raises(ValueError):
        StepRule.parse("adam")
    with pytest.raises(ValueError):
        OptimizerConfig(T=0, eta=0.1, theta0=[0.0])
    with pytest.raises(ValueError):
        OptimizerConfig(T=1, eta=-1.0, theta0=[0.0])


def _quadratic_cfg(**kw):
    base = dict(T=5, eta=0.1, theta0=np.zeros(5), clip_B=1.0, epsilon=1e-8, b_max=3, kernel=polynomial2(1.0), sigma2=0.0)
    base.update(kw)
    return OptimizerConfig(**base)


def test_zero_step_run_returns_start():
    p = normal_location_problem(seed=0)
    rec = dp_gibo_run(p, _quadratic_cfg(T=1, eta=0.0, theta0=np.full(5, 0.25)))
    np.testing.assert_array_equal(rec.final_theta, np.full(5, 0.25))
    assert len(rec.rows) == 2


def test_same_seed_same_csv(tmp_path):
    p = normal_location_problem(seed=1)
    cfg = _quadratic_cfg(mu=1.0, seed=4)
    a, b = dp_gibo_run(p, cfg), dp_gibo_run(p, cfg)
    assert a.to_csv() == b.to_csv()
    c = dp_gibo_run(p, _quadratic_cfg(mu=1.0, seed=5))
    assert a.to_csv() != c.to_csv()
    a.write(tmp_path / "run.csv")
    header, data = read_run_csv(tmp_path / "run.csv")
    assert header == a.columns
    np.testing.assert_array_equal(data[:, header.index("loss")], a.column("loss"))
    assert (tmp_path / "run.json").exists()


def test_evaluation_accounting_and_ledger():
    p = normal_location_problem(n=20, seed=2)
    rec = dp_gibo_run(p, _quadratic_cfg(T=6, mu=0.8))
    b = rec.column("batch_size_used")[1:]
    np.testing.assert_array_equal(rec.column("cumulative_evaluations")[1:], 20 * np.cumsum(b))
    assert rec.meta["mu_consumed"] == pytest.approx(0.8, abs=1e-12)
    assert len(rec.meta["mu_ledger"]) == 6
    assert np.all(np.diff(rec.column("mu_consumed_cum")) > 0)


def test_noiseless_bias_controlled_by_trace():
    """With exact evaluations the gradient error obeys the RKHS bound each step."""
    rng = np.random.default_rng(3)
    k = rbf(1.0)
    draws = [SyntheticGPDraw.random(k, 2, 6, rng) for _ in range(3)]
    p = synthetic_gp_problem(draws)
    cfg = OptimizerConfig(T=8, eta=0.2, theta0=np.array([0.3, -0.2]), clip_B=100.0, epsilon=0.05, sigma2=0.0, kernel=k)
    rec = dp_gibo_run(p, cfg)
    assert not rec.failed
    # every user lies in the span, so the mean bias obeys the bound with the largest user norm
    hnorm = max(f.rkhs_norm for f in draws)
    bias, tr = rec.column("bias_norm")[1:], rec.column("trace_achieved")[1:]
    assert np.all(bias <= hnorm * np.sqrt(tr) + 1e-6)


def test_failure_returns_partial_record(monkeypatch):
    real = opt_mod.select_minimal_batch
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise IllConditionedGramError("boom", 1e20, 1e-4, 7)
        return real(*args, **kwargs)

    monkeypatch.setattr(opt_mod, "select_minimal_batch", flaky)
    rec = dp_gibo_run(normal_location_problem(seed=0), _quadratic_cfg(T=5))
    assert rec.failed
    assert "IllConditionedGramError" in rec.error
    assert len(rec.rows) == 3


def test_gradient_descent_contracts_at_linear_rate():
    p = normal_location_problem(seed=4)
    cfg = OptimizerConfig(T=20, eta=0.1, theta0=np.zeros(5), clip_B=100.0)
    rec = dp_gd_baseline(p, cfg)
    gap = np.linalg.norm(rec.thetas - p.minimizer, axis=1)
    np.testing.assert_allclose(gap[1:] / gap[:-1], 0.9, rtol=1e-10)
    assert rec.total_evaluations == 20 * p.n_users


def test_theta0_dimension_checked():
    with pytest.raises(ValueError):
        dp_gibo_run(normal_location_problem(d=3), _quadratic_cfg())
