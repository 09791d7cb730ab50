"""Optimal threshold policies for scheduling with one- and two-level probing.

Prices ``theta`` are throughputs (rate units). For a candidate price the
second-level reward is

    J(x) = (1 - tau) E[(R2 - theta)^+ | R1 = x] - theta tau

and the gain of probing over transmitting right away is q(x) = J(x) - x + theta.
J increases and q decreases in x; their zeros x_J and x_q delimit the gray
area in which a second probe pays off.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from .config import DerivedConstants
from .dist import ConditionalRateDist, RateDist, gauss_legendre, integrate_head, integrate_tail
from .errors import ContractError, RegularityError, SolverError

# tau above this gives J(0) < 0 at the optimum provided R_e <= theta*;
# at very low pilot energy R_e exceeds theta* and the guarantee lapses
TAU_SUFFICIENT = 1.0 / (1.0 + math.e)


def theta_lower_bound(mean_rate: float, tau: float, p_s: float) -> float:
    """Throughput of always transmitting after the first successful contention."""
    return mean_rate / (tau / p_s + 1.0)


def solve_one_level(mean_rate: float, tau: float, p_s: float, rtol: float = 1e-12) -> float:
    """Threshold solving E[(R - theta)^+] = theta tau / p_s for exponential R.

    The left side minus the right side is strictly decreasing, so the root is
    unique; it lies in (0, mean_rate * p_s / tau].
    """
    if not mean_rate > 0:
        raise ContractError(f"mean rate must be positive, got {mean_rate}")
    s = tau / p_s
    if not s > 0 or not math.isfinite(mean_rate / s):
        raise SolverError(f"contention cost tau/p_s={s} gives an unbounded threshold")

    def excess(theta):
        return mean_rate * math.exp(-theta / mean_rate) - theta * s

    hi = mean_rate / s
    return brentq(excess, 0.0, hi, xtol=1e-300, rtol=max(rtol, 1e-15), maxiter=500)


@dataclass(frozen=True)
class RewardContext:
    theta: float
    tau: float
    p_s: float
    dist: ConditionalRateDist
    rate1_dist: RateDist

    def __post_init__(self):
        if not self.theta > 0:
            raise ContractError(f"theta must be positive, got {self.theta}")

    @classmethod
    def at(cls, consts: DerivedConstants, theta: float) -> "RewardContext":
        return cls(
            theta=theta,
            tau=consts.tau,
            p_s=consts.p_s,
            dist=ConditionalRateDist(consts.c_r, consts.R_e),
            rate1_dist=RateDist(consts.mean_R1),
        )


def reward_J(ctx: RewardContext, x, form: str = "series"):
    """Expected net reward of probing a second time at first-level rate ``x``.

    ``form`` selects the evaluation route: ``series`` (closed-form mixture,
    vectorized), ``tail`` (quadrature of 1 - G above theta) or ``head``
    (quadrature of G below theta plus the conditional mean).
    """
    tau, theta, d = ctx.tau, ctx.theta, ctx.dist
    if form == "series":
        return (1.0 - tau) * d.stop_loss(theta, x) - theta * tau
    if form == "tail":
        f = np.vectorize(lambda u: integrate_tail(d, theta, u), otypes=[float])
        return _squeeze((1.0 - tau) * f(x) - theta * tau)
    if form == "head":
        f = np.vectorize(lambda u: integrate_head(d, theta, u), otypes=[float])
        return _squeeze((1.0 - tau) * (d.mean(x) - theta + f(x)) - theta * tau)
    raise ValueError(f"unknown form {form!r}")


def gain_q(ctx: RewardContext, x):
    """Gain of probing a second time over transmitting at rate ``x``."""
    tau, d = ctx.tau, ctx.dist
    x = np.asarray(x, dtype=float)
    v = (d.c_r * (1.0 - tau) - 1.0) * x + (1.0 - tau) * d.R_e + (1.0 - tau) * d.head_integral(ctx.theta, x)
    return _squeeze(v)


def _squeeze(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def lower_threshold(ctx: RewardContext) -> tuple[float, bool]:
    """Zero of the increasing J; returns (x_J, clamped).

    When J(0) >= 0 probing pays off even at a zero first-level rate, so the
    threshold sits at 0 and ``clamped`` is True.
    """
    j0 = reward_J(ctx, 0.0)
    if j0 >= 0:
        return 0.0, True
    d, tau, theta = ctx.dist, ctx.tau, ctx.theta
    # E[(Y - theta)^+] >= mean - theta, so J is nonnegative past this point
    hi = (theta - (1.0 - tau) * d.R_e) / ((1.0 - tau) * d.c_r)
    hi = max(hi, theta) * (1.0 + 1e-9) + 1e-300
    while reward_J(ctx, hi) < 0:
        hi *= 2.0
    x = brentq(lambda u: reward_J(ctx, u), 0.0, hi, xtol=1e-14 * theta, rtol=1e-14, maxiter=500)
    return x, False


def upper_threshold(ctx: RewardContext) -> float:
    """Zero of the decreasing q."""
    d, tau, theta = ctx.dist, ctx.tau, ctx.theta
    slope = 1.0 - d.c_r * (1.0 - tau)
    if not slope > 0:
        raise RegularityError(
            f"c_r*(1-tau) = {d.c_r * (1.0 - tau):.6g} >= 1: the probing gain never turns negative, "
            "so no upper threshold exists (need c_r < 1/(1-tau))"
        )
    # head integral <= theta bounds q from above by a line with this zero
    hi = (1.0 - tau) * (d.R_e + theta) / slope
    return brentq(lambda u: gain_q(ctx, u), 0.0, hi, xtol=1e-14 * theta, rtol=1e-14, maxiter=500)


@dataclass(frozen=True)
class _Balance:
    value: float
    x_J: float
    x_q: float
    clamped: bool

    @property
    def gray_area(self) -> bool:
        return self.x_J <= self.x_q


def _balance(consts: DerivedConstants, theta: float) -> _Balance:
    """Optimality-equation excess E[max(R - theta, J(R), 0)] - theta tau / p_s."""
    ctx = RewardContext.at(consts, theta)
    x_J, clamped = lower_threshold(ctx)
    x_q = upper_threshold(ctx)
    F = ctx.rate1_dist
    cost = theta * consts.params.contention_time
    if x_J <= x_q:
        gray = gauss_legendre(lambda u: reward_J(ctx, u) * F.pdf(u), x_J, x_q,
                              rtol=1e-13, atol=1e-15 * theta)
        value = gray + F.upper_partial(x_q, theta) - cost
    else:
        value = F.stop_loss(theta) - cost
    return _Balance(value, x_J, x_q, clamped)


class Strategy(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class TwoLevelSolution:
    """Optimal two-level policy.

    ``theta_star_A`` is the root of the full two-level optimality equation;
    it coincides with ``theta_star_B`` when the gray area is empty.
    ``residuals`` holds absolute residuals of the threshold equations:
    ``lower`` (zero of J, or the complementarity gap max(0, -J(0)) when
    x_J is clamped), ``upper`` (zero of q), ``balance`` (rate-of-return
    equation) and ``one_level``.
    """

    strategy: Strategy
    x_J: float
    x_q: float
    theta_star: float
    theta_star_A: float
    theta_star_B: float
    theta_L: float
    residuals: dict = field(default_factory=dict)
    x_J_clamped: bool = False
    tau_sufficient: bool = False
    lower_limit_negative: bool = True

    @property
    def theta_B(self) -> float:
        return self.theta_star_B

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        out["theta_B"] = self.theta_star_B
        return out


def solve_two_level(consts: DerivedConstants, strict: bool = False, rtol: float = 1e-13) -> TwoLevelSolution:
    """Solve for the optimal two-level policy.

    With ``strict=True`` a policy whose lower threshold would sit at zero
    (J(0) >= 0 at the optimum) is refused instead of clamped.
    """
    params = consts.params
    tau = params.tau
    if not consts.c_r * (1.0 - tau) < 1.0:
        raise RegularityError(
            f"c_r*(1-tau) = {consts.c_r * (1.0 - tau):.6g} >= 1 (need c_r < 1/(1-tau)); "
            "the gray area has no upper end"
        )
    m1 = consts.mean_R1
    theta_L = theta_lower_bound(m1, tau, params.p_s)
    theta_B = solve_one_level(m1, tau, params.p_s)

    def excess(theta):
        return _balance(consts, theta).value

    lo = theta_L * (1.0 + 1e-9)
    hi = theta_B * consts.mean_R2 / consts.mean_R1
    trace = [(lo, excess(lo))]
    if not trace[0][1] > 0:
        raise SolverError("optimality excess is not positive at the lower bracket", trace)
    for _ in range(200):
        v = excess(hi)
        trace.append((hi, v))
        if v < 0:
            break
        hi *= 2.0
    else:
        raise SolverError("failed to bracket the two-level throughput", trace)
    if trace[-2][0] > lo and trace[-2][1] > 0:
        lo = trace[-2][0]

    theta = brentq(excess, lo, hi, xtol=rtol * theta_B, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=500)
    bal = _balance(consts, theta)
    ctx = RewardContext.at(consts, theta)
    j_at_theta = reward_J(ctx, theta)
    j_at_zero = reward_J(ctx, 0.0)
    strategy = Strategy.A if bal.gray_area and j_at_theta >= 0 else Strategy.B

    if strict and strategy is Strategy.A and bal.clamped:
        raise RegularityError(
            f"J(0) = {j_at_zero:.6g} >= 0 at theta*={theta:.6g}: the lower threshold does not exist "
            "(the exact condition R_e/theta exp(-theta/R_e) < tau/(1-tau) fails)"
        )

    residuals = {
        "lower": (max(0.0, -j_at_zero) if bal.clamped else abs(reward_J(ctx, bal.x_J))) / (1.0 - tau),
        "upper": abs(gain_q(ctx, bal.x_q)),
        "balance": abs(bal.value),
        "one_level": abs(m1 * math.exp(-theta_B / m1) - theta_B * params.contention_time),
    }
    return TwoLevelSolution(
        strategy=strategy,
        x_J=bal.x_J,
        x_q=bal.x_q,
        theta_star=theta if strategy is Strategy.A else theta_B,
        theta_star_A=theta,
        theta_star_B=theta_B,
        theta_L=theta_L,
        residuals=residuals,
        x_J_clamped=bal.clamped,
        tau_sufficient=tau > TAU_SUFFICIENT,
        lower_limit_negative=j_at_zero < 0,
    )


def optimality_residual(consts: DerivedConstants, theta: float) -> float:
    """E[max(R1 - theta, J(R1), 0)] - theta tau / p_s by quadrature over R1.

    Substitutes u = -mean ln(v) so the expectation becomes an integral over
    v in (0, 1); used to audit solutions independently of the threshold
    decomposition.
    """
    ctx = RewardContext.at(consts, theta)
    m = consts.mean_R1

    def integrand(v):
        u = -m * math.log(v)
        return max(u - theta, reward_J(ctx, u), 0.0)

    # kinks of the integrand, mapped to v
    kinks = sorted({math.exp(-k / m) for k in (lower_threshold(ctx)[0], theta, upper_threshold(ctx)) if k > 0})
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=kinks or None, epsabs=1e-13, epsrel=1e-12, limit=500)
    return val - theta * consts.params.contention_time


class Decision(str, enum.Enum):
    TRANSMIT_1 = "transmit@1"
    RECONTEND = "recontend"
    PROBE_TRANSMIT_2 = "probe2+transmit@2"
    PROBE_RECONTEND = "probe2+recontend"


def policy_decide(sol: TwoLevelSolution, r1: float, r2: float | None = None) -> Decision:
    """Apply the solved policy to one round. Ties transmit; r1 == x_J probes."""
    if sol.strategy is Strategy.B:
        return Decision.TRANSMIT_1 if r1 >= sol.theta_star_B else Decision.RECONTEND
    if r1 >= sol.x_q:
        return Decision.TRANSMIT_1
    if r1 < sol.x_J:
        return Decision.RECONTEND
    if r2 is None:
        raise ContractError(f"r1={r1} falls in the gray area [{sol.x_J}, {sol.x_q}); r2 is required")
    return Decision.PROBE_TRANSMIT_2 if r2 >= sol.theta_star_A else Decision.PROBE_RECONTEND
