import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from dos_lab.dist import (
    ConditionalRateDist,
    RateDist,
    cond_cdf,
    gauss_legendre,
    integrate_head,
    integrate_tail,
    marcum_q1,
)
from dos_lab.errors import ContractError

nonneg = st.floats(0.0, 60.0)
# scipy's ncx2 overflows internally for tiny arguments; b = 0 is covered separately
positive = st.floats(1e-3, 60.0)


def q1_oracle(a, b):
    # Q_1(a, b) = P(X > b^2) for X noncentral chi-square, 2 dof, noncentrality a^2
    return stats.ncx2.sf(b * b, 2, a * a) if a > 0 else math.exp(-b * b / 2)


@given(nonneg, positive)
def test_marcum_matches_ncx2(a, b):
    assert marcum_q1(a, b) == pytest.approx(q1_oracle(a, b), abs=1e-11)


def test_marcum_special_values():
    b = np.linspace(0, 5, 11)
    assert np.allclose(marcum_q1(0.0, b), np.exp(-b * b / 2), atol=1e-15)
    assert marcum_q1(3.0, 0.0) == 1.0
    assert marcum_q1(200.0, 200.0) == pytest.approx(0.5009973588177, abs=1e-11)
    with pytest.raises(ContractError):
        marcum_q1(-1.0, 1.0)


def test_marcum_vectorized_shapes():
    a = np.array([0.5, 1.0, 40.0])
    out = marcum_q1(a[:, None], np.array([0.1, 2.0]))
    assert out.shape == (3, 2)
    ref = [[q1_oracle(x, y) for y in (0.1, 2.0)] for x in a]
    assert np.allclose(out, ref, atol=1e-12)


dists = st.builds(ConditionalRateDist, st.floats(0.5, 1.5), st.floats(1e-3, 10.0))


# scipy's ncx2 is unreliable for denormal noncentrality
@given(dists, st.one_of(st.just(0.0), st.floats(1e-6, 50.0)), st.floats(1e-2, 80.0))
def test_cond_cdf_matches_ncx2(d, x, y):
    ref = stats.ncx2.cdf(2 * y / d.R_e, 2, 2 * d.c_r * x / d.R_e) if x > 0 else -math.expm1(-y / d.R_e)
    assert cond_cdf(d, y, x) == pytest.approx(ref, abs=1e-10)
    assert d.cdf(y, x) + d.sf(y, x) == pytest.approx(1.0, abs=1e-13)


@given(dists, st.floats(0.0, 50.0), st.floats(0.0, 80.0))
def test_partial_moments_split_the_mean(d, x, theta):
    # E[(Y - t)^+] - E[(t - Y)^+] = E[Y] - t
    lhs = d.stop_loss(theta, x) - d.head_integral(theta, x)
    assert lhs == pytest.approx(d.mean(x) - theta, abs=1e-9 * (1 + d.mean(x)))


@pytest.mark.parametrize("c_r,R_e", [(1.0, 0.5), (1.003, 0.02), (0.9, 3.0)])
@pytest.mark.parametrize("x", [0.0, 0.3, 4.0, 25.0])
def test_series_moments_match_quadrature(c_r, R_e, x):
    d = ConditionalRateDist(c_r, R_e)
    for theta in (0.0, 0.5 * d.mean(x), d.mean(x), 2.0 * d.mean(x)):
        assert d.stop_loss(theta, x) == pytest.approx(integrate_tail(d, theta, x), abs=1e-9)
        assert d.head_integral(theta, x) == pytest.approx(integrate_head(d, theta, x), abs=1e-9)


def test_tail_integral_is_conditional_mean():
    d = ConditionalRateDist(1.01, 0.7)
    for x in np.linspace(0, 40, 9):
        assert integrate_tail(d, 0.0, x) == pytest.approx(d.mean(x), abs=1e-8)


def test_tail_cutoff_leaves_negligible_mass():
    d = ConditionalRateDist(1.0, 2.0)
    for x in (0.0, 10.0, 500.0):
        cut = d.tail_cutoff(x)
        assert d.sf(cut, x) < 1e-18
        assert d.stop_loss(cut, x) < 1e-16


def test_zero_rate_is_exponential():
    d = ConditionalRateDist(1.0, 2.0)
    y = np.linspace(0, 20, 7)
    assert np.allclose(d.cdf(y, 0.0), 1 - np.exp(-y / 2.0), atol=1e-15)
    assert d.stop_loss(3.0, 0.0) == pytest.approx(2.0 * math.exp(-1.5))


def test_samples_match_moments(rng):
    d = ConditionalRateDist(1.02, 0.3)
    y = d.sample(rng, 5.0, 200_000)
    assert y.mean() == pytest.approx(d.mean(5.0), rel=5e-3)
    assert y.std() == pytest.approx(d.sd(5.0), rel=1e-2)


def test_contracts():
    with pytest.raises(ContractError):
        ConditionalRateDist(1.0, 0.0)
    with pytest.raises(ContractError):
        ConditionalRateDist(0.0, 1.0)
    d = ConditionalRateDist(1.0, 1.0)
    with pytest.raises(ContractError):
        d.cdf(-1.0, 1.0)
    with pytest.raises(ContractError):
        integrate_tail(d, 1.0, -1.0)
    with pytest.raises(ContractError):
        integrate_head(d, -1.0, 1.0)


@given(st.floats(0.1, 100.0), st.floats(0.0, 300.0))
def test_rate_dist_closed_forms(mean, theta):
    R = RateDist(mean)
    quad, _ = integrate.quad(lambda u: (u - theta) * R.pdf(u), theta, np.inf)
    assert R.stop_loss(theta) == pytest.approx(quad, abs=1e-9 * mean)
    lower = 0.5 * theta
    quad2, _ = integrate.quad(lambda u: (u - theta) * R.pdf(u), lower, np.inf)
    assert R.upper_partial(lower, theta) == pytest.approx(quad2, abs=1e-9 * mean)
    assert R.cdf(theta) + R.sf(theta) == pytest.approx(1.0)


def test_gauss_legendre():
    assert gauss_legendre(lambda u: u**7, 0.0, 2.0) == pytest.approx(2**8 / 8, rel=1e-14)
    assert gauss_legendre(np.exp, -3.0, 40.0) == pytest.approx(math.exp(40) - math.exp(-3), rel=1e-12)
    assert gauss_legendre(np.sin, 1.0, 1.0) == 0.0
