import numpy as np
import pytest
from scipy.special import expit

from synthgate.sampler import (
    LinearModelSpec,
    LogisticModelSpec,
    McmcConfig,
    SamplerError,
    bernoulli_logit_logpmf,
    default_gap,
    diagnostics,
    effective_sample_size,
    fit_linear,
    fit_logistic,
    potential_scale_reduction,
    run_chains,
    select_draws,
)

SHORT = McmcConfig(n_iterations=4000, burn_in=1000, seed=5)


def _logistic_data(n=2000, beta=(-1.0, 0.5), seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, len(beta) - 1))])
    y = (rng.random(n) < expit(X @ np.array(beta))).astype(float)
    return X, y


def test_bernoulli_logpmf_is_stable():
    eta = np.array([-800.0, 0.0, 800.0])
    out = bernoulli_logit_logpmf(np.array([1.0, 1.0, 0.0]), eta)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [-800.0, np.log(0.5), -800.0])


def test_logistic_recovers_truth():
    X, y = _logistic_data()
    chain = fit_logistic(LogisticModelSpec(X, y), SHORT)
    post = chain.post_burn_in
    z = np.abs(post.mean(0) - [-1.0, 0.5]) / post.std(0)
    assert np.all(z < 3)
    assert 0.1 <= chain.acceptance_rate <= 0.6


def test_rank_deficient_design_rejected():
    X, y = _logistic_data(n=200)
    X = np.column_stack([X, np.full(200, 3.0)])
    with pytest.raises(SamplerError, match="rank"):
        fit_logistic(LogisticModelSpec(X, y), SHORT)


def test_logistic_response_must_be_binary():
    with pytest.raises(SamplerError):
        LogisticModelSpec(np.ones((3, 1)), np.array([0.0, 2.0, 1.0]))


def test_empty_response_rejected_unless_allowed():
    with pytest.raises(SamplerError):
        fit_logistic(LogisticModelSpec(np.ones((0, 1)), np.ones(0)), SHORT)
    chain = fit_logistic(LogisticModelSpec(np.ones((0, 1)), np.ones(0), allow_empty=True), SHORT)
    assert abs(chain.post_burn_in.mean()) < 0.2  # prior N(0, 1)


def test_linear_recovers_truth():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2000)
    X = np.column_stack([np.ones(2000), x])
    z = 10 + 0.3 * x + 0.5 * rng.standard_normal(2000)
    chain = fit_linear(LinearModelSpec(X, z, prior_sd=100.0), SHORT)
    post = chain.post_burn_in
    assert chain.draws.shape[1] == 3
    truth = np.array([10.0, 0.3, 0.5])
    assert np.all(np.abs(post.mean(0) - truth) < 3 * post.std(0))


def test_linear_dominating_prior_pins_mean():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(100), rng.standard_normal(100)])
    z = 5 + X[:, 1] + rng.standard_normal(100)
    chain = fit_linear(LinearModelSpec(X, z, prior_mean=0.7, prior_sd=1e-6), SHORT)
    np.testing.assert_allclose(chain.post_burn_in[:, :2].mean(0), 0.7, atol=1e-3)


def test_chains_are_seed_deterministic():
    X, y = _logistic_data(n=300)
    a = fit_logistic(LogisticModelSpec(X, y), SHORT)
    b = fit_logistic(LogisticModelSpec(X, y), SHORT)
    np.testing.assert_array_equal(a.draws, b.draws)
    c = fit_logistic(LogisticModelSpec(X, y), SHORT, chain=1)
    assert not np.array_equal(a.draws, c.draws)


def test_run_chains_independent_of_workers():
    X, y = _logistic_data(n=300)
    cfg = McmcConfig(n_iterations=1500, burn_in=500, seed=2, n_chains=3)
    one = run_chains(fit_logistic, LogisticModelSpec(X, y), cfg, workers=1)
    many = run_chains(fit_logistic, LogisticModelSpec(X, y), cfg, workers=3)
    for a, b in zip(one, many):
        np.testing.assert_array_equal(a.draws, b.draws)
    diag = diagnostics(one)
    assert np.all(diag.rhat < 1.1)


def test_ess_of_iid_chain():
    rng = np.random.default_rng(3)
    ess, degenerate = effective_sample_size(rng.standard_normal(1000))
    assert 700 <= ess <= 1300 and not degenerate


def test_ess_of_constant_chain_is_flagged():
    ess, degenerate = effective_sample_size(np.full(1000, 2.5))
    assert ess == 1.0 and degenerate


def test_rhat_of_identical_chains():
    x = np.random.default_rng(4).standard_normal(2000)
    assert potential_scale_reduction(np.vstack([x, x])) <= 1.001


def test_rhat_detects_shifted_chains():
    rng = np.random.default_rng(5)
    assert potential_scale_reduction(np.vstack([rng.standard_normal(500), 3 + rng.standard_normal(500)])) > 1.5


def _chain(n_iterations, burn_in):
    cfg = McmcConfig(n_iterations=n_iterations, burn_in=burn_in)
    return fit_linear(LinearModelSpec(np.ones((20, 1)), np.zeros(20)), cfg)


def test_select_draws_indices():
    chain = _chain(16000, 5000)
    draws = select_draws(chain, 20, 500)
    assert [d.iteration for d in draws] == list(range(5500, 15001, 500))
    np.testing.assert_array_equal(draws[0].coef, chain.draws[5499, :1])
    assert [d.iteration for d in select_draws(chain, 1, 500)] == [5500]
    with pytest.raises(SamplerError):
        select_draws(chain, 20, 0)
    with pytest.raises(SamplerError):
        select_draws(chain, 30, 500)
    assert default_gap(McmcConfig(n_iterations=16000, burn_in=5000), 20) == 550


def test_chain_csv_dump():
    chain = _chain(300, 100)
    lines = chain.to_csv().splitlines()
    assert lines[0] == "iteration,b0,sigma,log_posterior,accepted"  # raw arrays get positional names
    assert len(lines) == 301


def test_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(n_iterations=100, burn_in=100)
    with pytest.raises(ValueError):
        McmcConfig(target_acceptance=1.0)
