"""Scheduling with (0, 1, e) feedback and a fixed transmission rate.

The receiver only reports whether to transmit ("1"), recontend ("0") or
probe once more ("e"); the sender always transmits at a fixed rate R1. A
transmission after the second probe succeeds iff the refined rate reaches R1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .config import DerivedConstants
from .dist import ConditionalRateDist, RateDist, gauss_legendre
from .errors import ContractError, RegularityError, SolverError

GAIN_RTOL = 1e-6
MAX_ITER = 10_000


def one_bit_throughput(R1: float, mean_rate: float, tau: float, p_s: float) -> float:
    """Throughput of transmitting at R1 whenever the first-level rate reaches R1."""
    if not R1 > 0:
        raise ContractError(f"R1 must be positive, got {R1}")
    e = math.exp(-R1 / mean_rate)
    return R1 * e / (tau / p_s + e)


def one_bit_throughput_root(R1: float, mean_rate: float, tau: float, p_s: float) -> float:
    """Same throughput, found as the root of E[(R1 1{R >= R1} - g)^+] = g tau / p_s."""
    if not R1 > 0:
        raise ContractError(f"R1 must be positive, got {R1}")
    e = math.exp(-R1 / mean_rate)
    s = tau / p_s
    # for 0 <= g <= R1 the left side is (R1 - g) e
    return brentq(lambda g: (R1 - g) * e - g * s, 0.0, R1, xtol=1e-300, rtol=1e-15, maxiter=500)


def solve_R1_hat(mean_rate: float, tau: float, p_s: float) -> tuple[float, float]:
    """Best one-bit rate and its throughput, (R1_hat, gamma_hat_max).

    R1_hat solves (R1/m - 1) exp(R1/m) = p_s / tau, whose left side increases
    for R1 > m.
    """
    if not mean_rate > 0:
        raise ContractError(f"mean rate must be positive, got {mean_rate}")
    c = p_s / tau

    def f(u):
        # in units of the mean; log form avoids overflow for large c
        return math.log(u - 1.0) + u - math.log(c) if u > 1.0 else -math.inf

    hi = 2.0 + math.log1p(c)
    u = brentq(f, 1.0 + 1e-300, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    R1_hat = mean_rate * u
    return R1_hat, R1_hat - mean_rate


def one_bit_identity_gap(R1_hat: float, gamma_hat: float, mean_rate: float, tau: float, p_s: float) -> float:
    """Difference between the two closed forms of the optimal one-bit throughput."""
    return abs(gamma_hat - (p_s / tau) * mean_rate * math.exp(-R1_hat / mean_rate))


def reward_V(gamma: float, x, R1: float, dist: ConditionalRateDist, tau: float):
    """Net reward of a second probe at first-level rate ``x`` for price ``gamma``."""
    if not R1 > 0:
        raise ContractError(f"R1 must be positive, got {R1}")
    v = (1.0 - tau) * (R1 - gamma) * np.asarray(dist.sf(R1, x)) - gamma * tau
    return float(v) if np.ndim(v) == 0 else v


def gain_q_feedback(gamma: float, x, R1: float, dist: ConditionalRateDist, tau: float):
    """Gain of probing over reporting "1" (x >= R1) or "0" (x < R1)."""
    x = np.asarray(x, dtype=float)
    v = reward_V(gamma, x, R1, dist, tau) - R1 * (x >= R1) + gamma
    return float(v) if np.ndim(v) == 0 else v


def throughput_bounds(R1: float, mean_R2: float, tau: float, p_s: float) -> tuple[float, float]:
    """(gamma_L, gamma_U): always probing twice, and a genie that contends only on good channels."""
    if not R1 > 0:
        raise ContractError(f"R1 must be positive, got {R1}")
    # exp(R1/m) overflows for huge R1; the bound is then 0
    growth = math.exp(min(R1 / mean_R2, 700.0))
    gamma_L = (1.0 - tau) * R1 / ((1.0 - tau) + tau * (1.0 + 1.0 / p_s) * growth)
    gamma_U = R1 / (1.0 + tau / p_s)
    return gamma_L, gamma_U


def check_regularity(tau: float, p_s: float) -> None:
    if tau > 1.0 - p_s:
        raise RegularityError(f"tau={tau} exceeds 1 - p_s={1.0 - p_s}; V is not guaranteed monotone")
    floor = 0.5 * (math.log1p(1.0 / p_s) - 1.0)
    if tau < floor:
        raise RegularityError(
            f"tau={tau} is below 0.5*(ln(1 + 1/p_s) - 1)={floor:.6g}; the sign pattern of the probing gain may fail"
        )


@dataclass(frozen=True)
class _Model:
    dist: ConditionalRateDist
    F: RateDist
    tau: float
    p_s: float

    @classmethod
    def of(cls, consts: DerivedConstants) -> "_Model":
        return cls(ConditionalRateDist(consts.c_r, consts.R_e), RateDist(consts.mean_R1), consts.tau, consts.p_s)

    def success_mass(self, x_v: float, R1: float) -> float:
        """Integral of P(R2 >= R1 | R1 = u) dF(u) over [x_v, R1]."""
        if x_v >= R1:
            return 0.0
        return gauss_legendre(lambda u: self.dist.sf(R1, u) * self.F.pdf(u), x_v, R1,
                              rtol=1e-13, atol=1e-16 * R1)

    def rate_of_return(self, x_v: float, R1: float) -> float:
        tau = self.tau
        mass = self.success_mass(x_v, R1)
        e_R = math.exp(-R1 / self.F.mean)
        bits = (1.0 - tau) * R1 * mass + R1 * e_R
        time = (1.0 - tau) * (mass + e_R) + tau * (1.0 / self.p_s + math.exp(-x_v / self.F.mean))
        return bits / time

    def lower_threshold(self, gamma: float, R1: float) -> float:
        """Zero of the increasing V on [0, R1], clamped to the ends."""
        tau = self.tau

        def V(x):
            return reward_V(gamma, x, R1, self.dist, tau)

        if V(R1) <= 0:
            return R1
        if V(0.0) >= 0:
            return 0.0
        return brentq(V, 0.0, R1, xtol=1e-14 * R1, rtol=1e-14, maxiter=500)


def best_threshold(model: _Model, R1: float, gamma0: float | None = None, tol: float = 1e-10):
    """Optimal throughput for a fixed rate R1; returns (gamma, x_v, iterations).

    Alternates between the zero of V for the current price and the rate of
    return of the resulting threshold policy. Each step cannot decrease the
    price, so the iteration climbs monotonically to the fixed point.
    """
    gamma = model.rate_of_return(R1, R1) if gamma0 is None else gamma0
    damping = 1.0
    trace = []
    prev_step = None
    for it in range(1, MAX_ITER + 1):
        x_v = model.lower_threshold(gamma, R1)
        target = model.rate_of_return(x_v, R1)
        step = target - gamma
        trace.append((gamma, x_v))
        if abs(step) <= tol * max(1.0, abs(gamma)):
            return target, x_v, it
        if prev_step is not None and step * prev_step < 0:
            damping = 0.5
        gamma += damping * step
        prev_step = step
    raise SolverError(f"price iteration did not converge for R1={R1}", trace[-20:])


class FeedbackStrategy(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class FeedbackSolution:
    """Optimal (0, 1, e) policy.

    Under Strategy B the gray area is empty and ``R1_star``/``x_v_star``
    both equal ``R1_hat``.
    """

    strategy: FeedbackStrategy
    R1_star: float
    x_v_star: float
    gamma_max: float
    R1_hat: float
    gamma_hat_max: float
    gamma_L: float
    gamma_U: float
    residuals: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        """Fixed transmission rate used by the policy."""
        return self.R1_star if self.strategy is FeedbackStrategy.A else self.R1_hat

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out


def _maximize(fn, lo: float, hi: float, n_grid: int, xrtol: float) -> tuple[float, float]:
    grid = np.geomspace(lo, hi, n_grid)
    vals = np.array([fn(r) for r in grid])
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_grid - 1)]
    res = minimize_scalar(lambda r: -fn(r), bounds=(a, b), method="bounded",
                          options={"xatol": xrtol * grid[k], "maxiter": 200})
    if -res.fun >= vals[k]:
        return float(res.x), float(-res.fun)
    return float(grid[k]), float(vals[k])


def solve_two_level_feedback(consts: DerivedConstants, gain_rtol: float = GAIN_RTOL, n_grid: int = 16,
                             check: bool = True) -> FeedbackSolution:
    """Optimal fixed rate, probing threshold and throughput with (0, 1, e) feedback.

    Strategy A (a nonempty gray area) is chosen only when it beats the best
    one-bit scheme by more than ``gain_rtol`` in relative terms.
    """
    tau, p_s = consts.tau, consts.p_s
    if check:
        check_regularity(tau, p_s)
    model = _Model.of(consts)
    m1, m2 = consts.mean_R1, consts.mean_R2
    R1_hat, gamma_hat = solve_R1_hat(m1, tau, p_s)

    cache = {}

    def g(R1):
        if R1 not in cache:
            cache[R1] = best_threshold(model, R1)
        return cache[R1][0]

    R1_star, gamma_max = _maximize(g, 0.1 * m2, 10.0 * m2, n_grid, 1e-9)
    gamma_max, x_v, _ = cache[R1_star]

    if gamma_max > gamma_hat * (1.0 + gain_rtol) and x_v < R1_star:
        strategy = FeedbackStrategy.A
        R1_used = R1_star
    else:
        strategy = FeedbackStrategy.B
        R1_used, x_v, gamma_max = R1_hat, R1_hat, gamma_hat

    gamma_L, gamma_U = throughput_bounds(R1_used, m2, tau, p_s)
    v_at = reward_V(gamma_max, x_v, R1_used, model.dist, tau)
    if 0.0 < x_v < R1_used:
        threshold_res = abs(v_at)
    elif x_v <= 0.0:
        threshold_res = max(0.0, -v_at)
    else:
        threshold_res = max(0.0, v_at)
    residuals = {
        "price": abs(gamma_max - model.rate_of_return(x_v, R1_used)),
        "threshold": threshold_res,
        "one_bit": one_bit_identity_gap(R1_hat, gamma_hat, m1, tau, p_s),
    }
    return FeedbackSolution(
        strategy=strategy,
        R1_star=R1_used,
        x_v_star=x_v,
        gamma_max=gamma_max,
        R1_hat=R1_hat,
        gamma_hat_max=gamma_hat,
        gamma_L=gamma_L,
        gamma_U=gamma_U,
        residuals=residuals,
    )


def feedback_decide(sol: FeedbackSolution, r1: float, r2: float | None = None) -> tuple[str, ...]:
    """Feedback symbols sent in one round, e.g. ("1",), ("0",) or ("e", "1")."""
    if sol.strategy is FeedbackStrategy.B:
        return ("1",) if r1 >= sol.R1_hat else ("0",)
    if r1 >= sol.R1_star:
        return ("1",)
    if r1 < sol.x_v_star:
        return ("0",)
    if r2 is None:
        raise ContractError(f"r1={r1} is in the gray area [{sol.x_v_star}, {sol.R1_star}); r2 is required")
    return ("e", "1" if r2 >= sol.R1_star else "0")
