import math

import numpy as np
import pytest
from scipy import stats

from dos_lab.chanmodel import (
    RateModel,
    actual_snr,
    backed_off_rate,
    estimate_batch,
    estimate_level1,
    estimate_level2,
    mmse_estimate,
    outage_check,
    sample_channel,
    sample_pilot_sums,
    sample_pilots,
)
from dos_lab.config import Fixed, derive
from dos_lab.errors import ContractError

from conftest import base_params

N = 100_000


def batch(consts, rng, n=N):
    p = consts.params
    return estimate_batch(sample_pilot_sums(rng, p.rho, p.M, n), consts)


def test_sample_channel_shapes(params, rng):
    d = sample_channel(rng, params)
    assert d.n_obs == 2 * params.M
    assert isinstance(d.h, complex)


def test_channel_unit_variance(rng):
    h = np.array([sample_pilots(rng, 0.5, 1).h for _ in range(20_000)])
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.03)
    b = sample_pilot_sums(rng, 0.01, 10, N)
    assert 0.99 <= np.mean(np.abs(b.h) ** 2) <= 1.01


def test_zero_snr_pilots_are_noise(rng):
    y = np.concatenate([sample_pilots(rng, 0.0, 200).pilot_obs for _ in range(200)])
    assert np.var(y) == pytest.approx(1.0, abs=0.02)


def test_pilot_correlation(rng):
    rho = 0.8
    draws = [sample_pilots(rng, rho, 2) for _ in range(40_000)]
    h = np.array([d.h for d in draws])
    y = np.array([d.pilot_obs[0] for d in draws])
    corr = np.real(np.mean(y * np.conj(h))) / math.sqrt(np.mean(np.abs(y) ** 2) * np.mean(np.abs(h) ** 2))
    assert corr == pytest.approx(math.sqrt(rho) / math.sqrt(rho + 1), abs=0.02)


def test_scalar_estimates_follow_formulas(rng):
    c = derive(base_params(alpha=3.0, M=20))
    p = c.params
    d = sample_channel(rng, p)
    e1, e2 = estimate_level1(d, c), estimate_level2(d, c)
    h1 = math.sqrt(p.rho) / (p.rho * p.M + 1) * d.pilot_obs[: p.M].sum()
    h2 = math.sqrt(p.rho) / (2 * p.rho * p.M + 1) * d.pilot_obs.sum()
    assert e1.h_hat == pytest.approx(h1) and e2.h_hat == pytest.approx(h2)
    assert e1.rate == pytest.approx(p.rho * p.W * c.sigma_M * abs(h1) ** 2)
    assert e2.rate == pytest.approx(p.rho * p.W * c.sigma_2M * abs(h2) ** 2)
    lam = p.rho * abs(h1) ** 2 / (1 + p.rho * abs(d.h - h1) ** 2)
    assert e1.actual_snr == pytest.approx(lam)
    exact = estimate_level1(d, c, RateModel.EXACT)
    assert exact.rate == pytest.approx(p.W * math.log1p(c.sigma_M * p.rho * abs(h1) ** 2))


def test_estimates_need_enough_observations(rng):
    c = derive(base_params(alpha=1.0, M=10))
    short = sample_pilots(rng, c.params.rho, 15)
    estimate_level1(short, c)
    with pytest.raises(ContractError):
        estimate_level2(short, c)


def test_noiseless_limit(rng):
    c = derive(base_params(alpha=1e9, M=10))
    d = sample_channel(rng, c.params)
    assert estimate_level1(d, c).h_hat == pytest.approx(d.h, abs=1e-4)
    assert estimate_level2(d, c).h_hat == pytest.approx(d.h, abs=1e-4)
    assert outage_check(estimate_level1(d, c), d, c).delivered


def test_scalar_and_batch_routes_agree(rng):
    # pilots summed one by one versus drawn as sufficient statistics
    c = derive(base_params(alpha=2.0, M=8))
    n = 30_000
    h1 = np.array([estimate_level1(sample_channel(rng, c.params), c).h_hat for _ in range(n)])
    b = batch(c, rng)
    assert np.var(h1) == pytest.approx(np.var(b.h1), rel=0.05)
    assert np.var(h1) == pytest.approx(c.var_h1_hat, rel=0.05)


@pytest.mark.parametrize("alpha", [0.2, 1.0, 10.0])
def test_estimator_statistics(alpha, rng):
    c = derive(base_params(alpha=alpha))
    b = batch(c, rng)
    inc = b.h2 - b.h1
    assert np.mean(np.abs(b.h1) ** 2) == pytest.approx(c.var_h1_hat, rel=0.02)
    assert np.mean(np.abs(b.h2) ** 2) == pytest.approx(c.var_h2_hat, rel=0.02)
    assert np.mean(np.abs(inc) ** 2) == pytest.approx(c.sigma_e_sq, rel=0.02)
    # orthogonality principle
    assert abs(np.mean(b.h1 * np.conj(b.h - b.h1))) < 0.01
    assert abs(np.mean(b.h1 * np.conj(inc))) < 0.01


@pytest.mark.parametrize("level", [1, 2])
def test_delivery_probability(level, rng):
    c = derive(base_params(alpha=1.0))
    b = batch(c, rng)
    ok = b.ok1 if level == 1 else b.ok2
    assert ok.mean() == pytest.approx(c.delivery_probability(level), rel=0.02)


def test_tiny_backoff_never_fails(rng):
    c = derive(base_params(alpha=0.5), Fixed(1e-6, 1e-6))
    b = batch(c, rng)
    assert b.ok1.all() and b.ok2.all()


def test_scalar_outage_matches_mask(rng):
    c = derive(base_params(alpha=0.3, M=10))
    for _ in range(200):
        d = sample_channel(rng, c.params)
        e = estimate_level1(d, c)
        out = outage_check(e, d, c)
        lam = actual_snr(d.h, e.h_hat, c.params.rho)
        assert out.delivered == (c.sigma_M * e.est_snr <= lam)
        assert out.goodput == (e.rate if out.delivered else 0.0)


def test_first_level_rate_is_exponential(rng):
    c = derive(base_params(alpha=1.0))
    r1 = batch(c, rng).r1
    edges = stats.expon.ppf(np.linspace(0, 1, 21), scale=c.mean_R1)
    observed, _ = np.histogram(r1, edges)
    _, pvalue = stats.chisquare(observed)
    assert pvalue > 0.01


def test_refined_rate_regression(rng):
    # the conditional mean is linear, so it also holds for decile-bin averages
    c = derive(base_params(alpha=1.0))
    b = batch(c, rng, 1_000_000)
    edges = np.quantile(b.r1, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, b.r1, side="right") - 1, 0, 9)
    for k in range(10):
        sel = idx == k
        assert b.r2[sel].mean() == pytest.approx(c.c_r * b.r1[sel].mean() + c.R_e, rel=0.03)


def test_rate_helpers():
    assert backed_off_rate(2.0, 0.5, 10.0) == pytest.approx(10.0)
    assert backed_off_rate(2.0, 0.5, 10.0, "exact") == pytest.approx(10.0 * math.log(2.0))
    assert mmse_estimate(3.0, 1.0, 2) == pytest.approx(1.0)
