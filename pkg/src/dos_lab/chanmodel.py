"""Channel draws, pilot observations, MMSE estimates and outage outcomes.

Each probing round sees a fresh Rayleigh channel ``h ~ CN(0, 1)`` and 2M
pilot observations ``Y_i = sqrt(rho) h + xi_i`` (unit pilots, unit-variance
noise). The first M observations drive the first-level estimate; all 2M the
refined one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .config import DerivedConstants
from .errors import ContractError


class RateModel(str, enum.Enum):
    APPROX = "approx"  # rho W sigma |h_hat|^2
    EXACT = "exact"  # W log(1 + sigma rho |h_hat|^2)


def complex_normal(rng: np.random.Generator, size=None, var: float = 1.0):
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass(frozen=True)
class ChannelDraw:
    h: complex
    pilot_obs: np.ndarray

    @property
    def n_obs(self) -> int:
        return int(self.pilot_obs.size)


def sample_pilots(rng: np.random.Generator, rho: float, n_obs: int) -> ChannelDraw:
    """One channel and ``n_obs`` pilot observations; ``rho = 0`` gives pure noise."""
    if rho < 0 or n_obs < 1:
        raise ContractError("need rho >= 0 and at least one observation")
    h = complex(complex_normal(rng))
    y = math.sqrt(rho) * h + complex_normal(rng, n_obs)
    return ChannelDraw(h, y)


def sample_channel(rng: np.random.Generator, params) -> ChannelDraw:
    return sample_pilots(rng, params.rho, 2 * params.M)


def mmse_estimate(obs_sum, rho: float, n_obs: int):
    """MMSE estimate of h from the sum of ``n_obs`` unit-pilot observations."""
    return math.sqrt(rho) / (rho * n_obs + 1.0) * obs_sum


def backed_off_rate(snr_hat, sigma: float, W: float, model: RateModel | str = RateModel.APPROX):
    """Transmission rate for estimated SNR ``rho |h_hat|^2`` backed off by ``sigma``."""
    if RateModel(model) is RateModel.APPROX:
        return W * sigma * snr_hat
    return W * np.log1p(sigma * snr_hat)


def capacity(snr, W: float, model: RateModel | str = RateModel.APPROX):
    """Largest rate the actual SNR supports under the chosen rate model."""
    if RateModel(model) is RateModel.APPROX:
        return W * snr
    return W * np.log1p(snr)


def actual_snr(h, h_hat, rho: float):
    """SNR seen by a sender that treats its estimation error as extra noise."""
    return rho * np.abs(h_hat) ** 2 / (1.0 + rho * np.abs(h - h_hat) ** 2)


@dataclass(frozen=True)
class RateEstimate:
    level: int
    h_hat: complex
    rate: float
    actual_snr: float
    sigma: float
    est_snr: float  # rho |h_hat|^2


def _estimate(draw: ChannelDraw, consts: DerivedConstants, level: int, rate_model) -> RateEstimate:
    p = consts.params
    n = level * p.M
    if draw.n_obs < n:
        raise ContractError(f"level-{level} estimate needs {n} observations, draw has {draw.n_obs}")
    h_hat = complex(mmse_estimate(np.sum(draw.pilot_obs[:n]), p.rho, n))
    sigma = consts.sigma_M if level == 1 else consts.sigma_2M
    snr_hat = p.rho * abs(h_hat) ** 2
    return RateEstimate(
        level=level,
        h_hat=h_hat,
        rate=float(backed_off_rate(snr_hat, sigma, p.W, rate_model)),
        actual_snr=float(actual_snr(draw.h, h_hat, p.rho)),
        sigma=sigma,
        est_snr=snr_hat,
    )


def estimate_level1(draw: ChannelDraw, consts: DerivedConstants, rate_model=RateModel.APPROX) -> RateEstimate:
    return _estimate(draw, consts, 1, rate_model)


def estimate_level2(draw: ChannelDraw, consts: DerivedConstants, rate_model=RateModel.APPROX) -> RateEstimate:
    return _estimate(draw, consts, 2, rate_model)


@dataclass(frozen=True)
class Outcome:
    delivered: bool
    goodput: float


def delivered_mask(est_snr, actual, sigma: float):
    """Backed-off SNR sigma * rho |h_hat|^2 does not exceed the actual SNR."""
    return sigma * est_snr <= actual


def outage_check(est: RateEstimate, draw: ChannelDraw, consts: DerivedConstants) -> Outcome:
    lam = float(actual_snr(draw.h, est.h_hat, consts.params.rho))
    ok = bool(delivered_mask(est.est_snr, lam, est.sigma))
    return Outcome(ok, est.rate if ok else 0.0)


@dataclass(frozen=True)
class PilotBatch:
    """Channels and pilot sums for many rounds.

    ``s1`` sums the first M observations and ``s2`` all 2M. These sums are
    sufficient for both estimates, so they are drawn directly: given h,
    ``s1 = M sqrt(rho) h + sqrt(M) n1`` and ``s2 = s1 + M sqrt(rho) h + sqrt(M) n2``
    with independent CN(0, 1) noises.
    """

    h: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __len__(self) -> int:
        return self.h.size


def sample_pilot_sums(rng: np.random.Generator, rho: float, M: int, n: int) -> PilotBatch:
    h = complex_normal(rng, n)
    gain = M * math.sqrt(rho) * h
    root = math.sqrt(M)
    s1 = gain + root * complex_normal(rng, n)
    s2 = s1 + gain + root * complex_normal(rng, n)
    return PilotBatch(h, s1, s2)


@dataclass(frozen=True)
class BatchEstimates:
    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    snr1: np.ndarray  # actual SNR at each level
    snr2: np.ndarray
    ok1: np.ndarray  # backed-off rate is deliverable
    ok2: np.ndarray


def estimate_batch(batch: PilotBatch, consts: DerivedConstants, rate_model=RateModel.APPROX) -> BatchEstimates:
    p = consts.params
    h1 = mmse_estimate(batch.s1, p.rho, p.M)
    h2 = mmse_estimate(batch.s2, p.rho, 2 * p.M)
    e1 = p.rho * np.abs(h1) ** 2
    e2 = p.rho * np.abs(h2) ** 2
    snr1 = actual_snr(batch.h, h1, p.rho)
    snr2 = actual_snr(batch.h, h2, p.rho)
    return BatchEstimates(
        h=batch.h,
        h1=h1,
        h2=h2,
        r1=backed_off_rate(e1, consts.sigma_M, p.W, rate_model),
        r2=backed_off_rate(e2, consts.sigma_2M, p.W, rate_model),
        snr1=snr1,
        snr2=snr2,
        ok1=delivered_mask(e1, snr1, consts.sigma_M),
        ok2=delivered_mask(e2, snr2, consts.sigma_2M),
    )
