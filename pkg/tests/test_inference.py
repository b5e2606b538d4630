import math

import numpy as np
import pytest
from scipy import optimize, stats

from hrem.events import CovariateSet, build_risk_set
from hrem.inference import (
    Hyperparams,
    PopulationParams,
    collapsed_prior_logpdf,
    gibbs_mu,
    gibbs_sigma,
    joint_log_posterior,
    map_estimate,
    marginal_logpost_beta,
    penalized_mle,
    run_collapsed_sampler,
    slice_sample,
)
from hrem.likelihood import loglik_full
from hrem.presets import syn52
from hrem.simulate import simulate_hierarchical, simulate_history
from hrem.stats import Baserate, StatisticSpec, unique_stat_table

COV = CovariateSet()
HYPER = Hyperparams()


def test_hyperparams_defaults_and_validation():
    assert HYPER.mu_prior_sd == 2.0
    assert HYPER.alpha_sigma == 5.0
    assert HYPER.beta_sigma == 1.0
    with pytest.raises(ValueError):
        Hyperparams(alpha_sigma=0.0)


def test_population_params_validation():
    with pytest.raises(ValueError):
        PopulationParams(mu=np.zeros(2), sigma2=np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        PopulationParams(mu=np.zeros(1), sigma2=np.ones(1), nu=np.array([-2.0]))


def test_gibbs_sigma_matches_invgamma():
    rng = np.random.default_rng(0)
    # all betas equal mu, K=4: Inv-Gamma(7, 1)
    draws = np.array([gibbs_sigma(np.zeros(4), 0.0, HYPER, rng) for _ in range(20000)])
    assert draws.mean() == pytest.approx(1 / 6, rel=0.03)
    # K=2, betas = mu +/- 1: Inv-Gamma(6, 2), mean 2/5
    draws = np.array(
        [gibbs_sigma(np.array([1.0, -1.0]), 0.0, HYPER, rng) for _ in range(20000)]
    )
    assert draws.mean() == pytest.approx(0.4, rel=0.03)


def test_gibbs_mu_paper_form():
    rng = np.random.default_rng(1)
    betas = np.array([1.0, 2.0, 3.0, 4.0])
    draws = np.array([gibbs_mu(betas, 1.0, rng) for _ in range(20000)])
    assert draws.mean() == pytest.approx(2.5, abs=0.02)
    assert draws.var() == pytest.approx(0.5, rel=0.05)  # sigma^2/sqrt(K)


def test_gibbs_mu_degenerate_variance():
    rng = np.random.default_rng(2)
    betas = np.array([0.3, 0.5])
    assert gibbs_mu(betas, 0.0, rng) == pytest.approx(0.4)


def test_gibbs_mu_conjugate_shrinks_toward_zero():
    rng = np.random.default_rng(3)
    betas = np.full(4, 10.0)
    draws = np.array(
        [gibbs_mu(betas, 1.0, rng, mode="conjugate", hyper=HYPER) for _ in range(5000)]
    )
    expected = 10.0 * (4 / 1.0) / (4 / 1.0 + 1 / 4.0)
    assert draws.mean() == pytest.approx(expected, abs=0.03)
    with pytest.raises(ValueError):
        gibbs_mu(betas, 1.0, rng, mode="bogus")


def test_collapsed_prior_peak_and_symmetry():
    vals = collapsed_prior_logpdf(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]), 0.0, HYPER)
    assert vals.argmax() == 2
    assert vals[0] == pytest.approx(vals[4])
    assert vals[1] == pytest.approx(vals[3])


def test_collapsed_prior_is_normalized():
    grid = np.linspace(-60, 60, 400001)
    dens = np.exp(collapsed_prior_logpdf(grid, 0.0, HYPER))
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, rel=1e-6)


def test_marginal_logpost_beta_default_matches_closed_form():
    f = lambda b: 0.0
    for d in (0.0, 0.7, 2.5):
        got = marginal_logpost_beta(d, 0.0, HYPER, f)
        want = -(HYPER.alpha_sigma + 0.5) * math.log(HYPER.beta_sigma + d**2 / 2)
        assert got == pytest.approx(want)


def test_slice_sample_standard_normal():
    rng = np.random.default_rng(4)
    logf = lambda x: -0.5 * x * x
    x = 0.0
    draws = np.empty(100000)
    for i in range(draws.size):
        x = slice_sample(x, logf, 1.0, rng)
        draws[i] = x
    assert abs(draws.mean()) < 0.02
    assert draws.var() == pytest.approx(1.0, rel=0.03)


def test_slice_sample_uniform():
    rng = np.random.default_rng(5)
    logf = lambda x: 0.0 if 0.0 <= x <= 1.0 else -math.inf
    x = 0.5
    draws = np.empty(20000)
    for i in range(draws.size):
        x = slice_sample(x, logf, 0.3, rng)
        draws[i] = x
    assert stats.kstest(draws, "uniform").pvalue > 0.01


def test_slice_sample_width_invariance():
    rng = np.random.default_rng(6)
    logf = lambda x: -0.5 * x * x
    moments = []
    for width in (0.5, 1.0):
        x = 0.0
        draws = np.empty(40000)
        for i in range(draws.size):
            x = slice_sample(x, logf, width, rng)
            draws[i] = x
        moments.append((draws.mean(), draws.var()))
    assert moments[0][0] == pytest.approx(moments[1][0], abs=0.03)
    assert moments[0][1] == pytest.approx(moments[1][1], rel=0.05)


def test_slice_sample_rejects_nonfinite_start():
    rng = np.random.default_rng(7)
    with pytest.raises(FloatingPointError):
        slice_sample(2.0, lambda x: -math.inf if x > 1 else 0.0, 1.0, rng)


def test_run_collapsed_sampler_rejects_empty_chain():
    d = syn52(baserate=-1.0)
    hist = simulate_history(d.beta, d.spec, d.risk, d.cov, n_events=20, seed=0)
    table = unique_stat_table(d.spec, hist, d.risk, d.cov)
    with pytest.raises(ValueError):
        run_collapsed_sampler([table], n_keep=0)


def test_single_sequence_intercept_recovers_rate():
    # flat-ish posterior check: baserate concentrates near log(M / (|R| tau))
    risk = build_risk_set(5)
    spec = StatisticSpec((Baserate(),))
    hist = simulate_history(np.array([0.3]), spec, risk, COV, n_events=400, seed=8)
    table = unique_stat_table(spec, hist, risk, COV)
    samples = run_collapsed_sampler([table], n_burnin=200, n_keep=400, seed=9)
    mle = math.log(hist.m / (len(risk) * hist.tau))
    post_mean = samples.betas[:, 0, 0].mean()
    post_sd = samples.betas[:, 0, 0].std()
    assert abs(post_mean - mle) < 4 * post_sd + 0.02


def test_logpost_trace_finite():
    d = syn52(baserate=-1.5)
    pairs = simulate_hierarchical(d.beta, 0.5, 3, d.spec, d.risk, d.cov, n_events=40, seed=10)
    tables = [unique_stat_table(d.spec, h, d.risk, d.cov) for h, _ in pairs]
    samples = run_collapsed_sampler(tables, n_burnin=30, n_keep=40, seed=11)
    assert np.all(np.isfinite(samples.logpost))
    assert samples.betas.shape == (40, 3, 6)


def test_exchangeability_of_sequence_order():
    d = syn52(baserate=-1.5)
    pairs = simulate_hierarchical(d.beta, 0.5, 4, d.spec, d.risk, d.cov, n_events=60, seed=12)
    tables = [unique_stat_table(d.spec, h, d.risk, d.cov) for h, _ in pairs]
    a = run_collapsed_sampler(tables, n_burnin=100, n_keep=300, seed=13)
    b = run_collapsed_sampler(tables[::-1], n_burnin=100, n_keep=300, seed=13)
    # population-level draws are exchangeable in sequence order
    np.testing.assert_allclose(a.mu.mean(axis=0), b.mu.mean(axis=0), atol=0.15)
    np.testing.assert_allclose(
        a.sigma2.mean(axis=0), b.sigma2.mean(axis=0), atol=0.15
    )


def test_map_tol_infinite_returns_initialization():
    d = syn52(baserate=-1.0)
    hist = simulate_history(d.beta, d.spec, d.risk, d.cov, n_events=30, seed=14)
    table = unique_stat_table(d.spec, hist, d.risk, d.cov)
    betas, mu, sigma2, warns = map_estimate([table], tol=math.inf)
    np.testing.assert_array_equal(betas, np.zeros((1, 6)))
    np.testing.assert_array_equal(mu, np.zeros(6))
    np.testing.assert_allclose(sigma2, 0.25)


def test_map_matches_generic_optimizer():
    # sigma fixed large: beta block optimum equals a penalized MLE
    d = syn52(baserate=-1.0)
    hist = simulate_history(d.beta, d.spec, d.risk, d.cov, n_events=150, seed=15)
    table = unique_stat_table(d.spec, hist, d.risk, d.cov)
    beta_hat = penalized_mle(table, prior_sd=10.0)

    def neg(b):
        return -(loglik_full(b, table) - 0.5 * np.sum(b**2) / 100.0)

    res = optimize.minimize(neg, np.zeros(6), method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(beta_hat, res.x, atol=1e-4)


def test_map_flags_collapsed_variance():
    # identical sequences and a never-varying effect column starve sigma^2
    d = syn52(baserate=-1.0)
    hist = simulate_history(d.beta, d.spec, d.risk, d.cov, n_events=60, seed=16)
    table = unique_stat_table(d.spec, hist, d.risk, d.cov)
    with pytest.warns(RuntimeWarning, match="effect"):
        betas, mu, sigma2, warns = map_estimate(
            [table] * 4, hyper=Hyperparams(alpha_sigma=1.01, beta_sigma=1e-7),
            sigma_floor=1e-6,
        )
    assert warns


def test_map_improves_joint_logpost():
    d = syn52(baserate=-1.5)
    pairs = simulate_hierarchical(d.beta, 0.5, 3, d.spec, d.risk, d.cov, n_events=80, seed=17)
    tables = [unique_stat_table(d.spec, h, d.risk, d.cov) for h, _ in pairs]
    betas, mu, sigma2, _ = map_estimate(tables)
    lp0 = joint_log_posterior(np.zeros((3, 6)), np.zeros(6), np.full(6, 0.25), tables, HYPER)
    lp1 = joint_log_posterior(betas, mu, sigma2, tables, HYPER)
    assert lp1 > lp0
