"""Monte Carlo simulation of contention, probing and transmission.

Every round is one successful contention: K ~ Geometric(p_s) slots of
length tau, a first-level rate estimate, the policy's decision, an optional
second probe of length tau, and a transmission of length 1 (after the first
probe) or 1 - tau (after the second). Throughput is delivered bits over
elapsed time.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from scipy import stats

from .chanmodel import RateModel, capacity, estimate_batch, sample_pilot_sums
from .config import DerivedConstants
from .errors import ContractError
from .feedback_solver import FeedbackSolution, FeedbackStrategy
from .ost_solver import Strategy, TwoLevelSolution

CHUNK = 1 << 17


@dataclass(frozen=True)
class PhyOblivious:
    """Transmit at the estimated rate after every successful contention."""

    name = "phy-oblivious"


@dataclass(frozen=True)
class OneLevel:
    theta: float
    name = "one-level"


@dataclass(frozen=True)
class TwoLevel:
    solution: TwoLevelSolution
    name = "two-level"


@dataclass(frozen=True)
class Feedback:
    solution: FeedbackSolution
    name = "feedback"


Policy = Union[PhyOblivious, OneLevel, TwoLevel, Feedback]


@dataclass(frozen=True)
class SimConfig:
    n_rounds: int
    seed: int | np.random.SeedSequence = 0
    policy: Policy = field(default_factory=PhyOblivious)
    rate_model: RateModel = RateModel.APPROX
    outage: bool = True
    n_batches: int = 50

    def __post_init__(self):
        if int(self.n_rounds) < 1:
            raise ContractError(f"n_rounds must be at least 1, got {self.n_rounds}")
        if int(self.n_batches) < 1:
            raise ContractError(f"n_batches must be at least 1, got {self.n_batches}")
        object.__setattr__(self, "rate_model", RateModel(self.rate_model))


DECISIONS = ("transmit1", "recontend1", "probe2", "transmit2", "recontend2")
CSV_COLUMNS = (
    "policy", "rate_model", "outage", "seed", "n_rounds", "n_reps", "empirical_throughput", "ci95",
    "outage_rate", "n_outages", "mean_contention_slots", "total_time", "total_bits",
) + DECISIONS


@dataclass
class SimReport:
    """Simulation summary.

    ``transmit1 + recontend1 + probe2`` equals ``n_rounds``; the second-level
    counts split ``probe2``. ``outage_rate`` counts transmissions whose rate
    exceeded what the channel supported, whether or not outage is charged.
    """

    policy: str
    rate_model: str
    outage: bool
    seed: int
    n_rounds: int
    empirical_throughput: float
    ci95: float
    outage_rate: float
    decision_counts: dict
    mean_contention_slots: float
    total_time: float
    total_bits: float
    n_outages: int = 0
    n_reps: int = 1
    replicate_throughputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> dict:
        row = {k: v for k, v in self.to_dict().items() if k in CSV_COLUMNS}
        row.update(self.decision_counts)
        return row

    def to_csv(self) -> str:
        return reports_to_csv([self])


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _decide(policy: Policy, est):
    """Masks (transmit1, probe2, transmit2) and the rates sent at each level."""
    r1, r2 = est.r1, est.r2
    none = np.zeros(r1.shape, dtype=bool)
    if isinstance(policy, PhyOblivious):
        return np.ones(r1.shape, dtype=bool), none, none, r1, r2
    if isinstance(policy, OneLevel):
        return r1 >= policy.theta, none, none, r1, r2
    if isinstance(policy, TwoLevel):
        sol = policy.solution
        if sol.strategy is Strategy.B:
            return r1 >= sol.theta_star_B, none, none, r1, r2
        t1 = r1 >= sol.x_q
        probe = ~t1 & (r1 >= sol.x_J)
        return t1, probe, probe & (r2 >= sol.theta_star_A), r1, r2
    if isinstance(policy, Feedback):
        sol = policy.solution
        R = np.full(r1.shape, sol.rate)
        if sol.strategy is FeedbackStrategy.B:
            return r1 >= sol.R1_hat, none, none, R, R
        t1 = r1 >= sol.R1_star
        probe = ~t1 & (r1 >= sol.x_v_star)
        return t1, probe, probe & (r2 >= sol.R1_star), R, R
    raise ContractError(f"unknown policy {policy!r}")


def run(sim: SimConfig, consts: DerivedConstants) -> SimReport:
    """Simulate ``sim.n_rounds`` rounds; deterministic given ``sim.seed``."""
    p = consts.params
    tau = p.tau
    rng = np.random.default_rng(sim.seed)
    n = int(sim.n_rounds)
    n_batches = min(int(sim.n_batches), n)
    bits_b = np.zeros(n_batches)
    time_b = np.zeros(n_batches)
    counts = dict.fromkeys(DECISIONS, 0)
    slots = 0
    sent = failed = 0
    fixed_rate = isinstance(sim.policy, Feedback)

    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        K = rng.geometric(p.p_s, m)
        est = estimate_batch(sample_pilot_sums(rng, p.rho, p.M, m), consts, sim.rate_model)
        t1, probe, t2, rate1, rate2 = _decide(sim.policy, est)
        if fixed_rate:
            ok1 = rate1 <= capacity(est.snr1, p.W, sim.rate_model)
            ok2 = rate2 <= capacity(est.snr2, p.W, sim.rate_model)
        else:
            ok1, ok2 = est.ok1, est.ok2
        sent += int(t1.sum() + t2.sum())
        failed += int((t1 & ~ok1).sum() + (t2 & ~ok2).sum())
        if sim.outage:
            t1_paid, t2_paid = t1 & ok1, t2 & ok2
        else:
            t1_paid, t2_paid = t1, t2
        bits = np.where(t1_paid, rate1, 0.0) + np.where(t2_paid, rate2 * (1.0 - tau), 0.0)
        time = K * tau + probe * tau + t1 * 1.0 + t2 * (1.0 - tau)
        batch = (np.arange(start, start + m, dtype=np.int64) * n_batches) // n
        np.add.at(bits_b, batch, bits)
        np.add.at(time_b, batch, time)
        slots += int(K.sum())
        counts["transmit1"] += int(t1.sum())
        counts["probe2"] += int(probe.sum())
        counts["transmit2"] += int(t2.sum())
    counts["recontend1"] = n - counts["transmit1"] - counts["probe2"]
    counts["recontend2"] = counts["probe2"] - counts["transmit2"]

    total_bits, total_time = float(bits_b.sum()), float(time_b.sum())
    return SimReport(
        policy=sim.policy.name,
        rate_model=sim.rate_model.value,
        outage=sim.outage,
        seed=_seed_label(sim.seed),
        n_rounds=n,
        empirical_throughput=total_bits / total_time,
        ci95=_half_width(bits_b / time_b),
        outage_rate=failed / sent if sent else 0.0,
        decision_counts=counts,
        mean_contention_slots=slots / n,
        total_time=total_time,
        total_bits=total_bits,
        n_outages=failed,
        replicate_throughputs=[total_bits / total_time],
    )


def _half_width(samples) -> float:
    samples = np.asarray(samples, dtype=float)
    k = samples.size
    if k < 2:
        return math.nan
    return float(stats.t.ppf(0.975, k - 1) * samples.std(ddof=1) / math.sqrt(k))


def thread_cap(default: int | None = None) -> int:
    env = os.environ.get("DOS_LAB_THREADS")
    cap = int(env) if env else (default or os.cpu_count() or 1)
    return max(1, cap)


def replicate(sim: SimConfig, consts: DerivedConstants, n_reps: int, threads: int | None = None) -> SimReport:
    """Independent replications on non-overlapping streams spawned from ``sim.seed``.

    The aggregate throughput is the mean over replications and ``ci95`` is
    the t-interval half-width across them. One replication is exactly ``run``.
    """
    if n_reps < 1:
        raise ContractError(f"n_reps must be at least 1, got {n_reps}")
    if n_reps == 1:
        return run(sim, consts)
    children = np.random.SeedSequence(sim.seed).spawn(n_reps)
    configs = [_with_seed(sim, c) for c in children]
    workers = min(n_reps, thread_cap(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reps = list(pool.map(lambda s: run(s, consts), configs))
    thr = [r.empirical_throughput for r in reps]
    counts = {k: sum(r.decision_counts[k] for r in reps) for k in DECISIONS}
    sent = counts["transmit1"] + counts["transmit2"]
    failed = sum(r.n_outages for r in reps)
    n_total = sum(r.n_rounds for r in reps)
    return SimReport(
        policy=sim.policy.name,
        rate_model=sim.rate_model.value,
        outage=sim.outage,
        seed=sim.seed,
        n_rounds=n_total,
        empirical_throughput=float(np.mean(thr)),
        ci95=_half_width(thr),
        outage_rate=failed / sent if sent else 0.0,
        decision_counts=counts,
        mean_contention_slots=sum(r.mean_contention_slots * r.n_rounds for r in reps) / n_total,
        total_time=sum(r.total_time for r in reps),
        total_bits=sum(r.total_bits for r in reps),
        n_outages=failed,
        n_reps=n_reps,
        replicate_throughputs=thr,
    )


def _with_seed(sim: SimConfig, seq: np.random.SeedSequence) -> SimConfig:
    return SimConfig(sim.n_rounds, seq, sim.policy, sim.rate_model, sim.outage, sim.n_batches)


def _seed_label(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.spawn_key[-1]) if seed.spawn_key else int(seed.entropy)
    return int(seed)
