import json
import math

import numpy as np
import pytest

from dos_lab.config import Fixed, derive
from dos_lab.errors import ContractError
from dos_lab.feedback_solver import solve_two_level_feedback
from dos_lab.ost_solver import Strategy, solve_two_level
from dos_lab.simkit import (
    CSV_COLUMNS,
    DECISIONS,
    Feedback,
    OneLevel,
    PhyOblivious,
    SimConfig,
    TwoLevel,
    replicate,
    run,
    thread_cap,
)

from conftest import PS, base_params

ROUNDS = 10**6


@pytest.fixture(scope="module")
def setup():
    c = derive(base_params(1.0))
    return c, solve_two_level(c)


def test_report_is_deterministic(setup):
    c, s = setup
    sim = SimConfig(20_000, 7, TwoLevel(s))
    assert run(sim, c).to_dict() == run(sim, c).to_dict()
    assert run(SimConfig(20_000, 8, TwoLevel(s)), c).to_dict() != run(sim, c).to_dict()


def test_single_replication_is_run(setup):
    c, s = setup
    sim = SimConfig(30_000, 3, OneLevel(s.theta_star_B))
    assert replicate(sim, c, 1).to_dict() == run(sim, c).to_dict()


def test_replicate_is_reproducible(setup, monkeypatch):
    c, s = setup
    sim = SimConfig(20_000, 5, TwoLevel(s))
    monkeypatch.setenv("DOS_LAB_THREADS", "1")
    a = replicate(sim, c, 4)
    monkeypatch.setenv("DOS_LAB_THREADS", "3")
    b = replicate(sim, c, 4)
    assert a.to_dict() == b.to_dict()
    assert a.n_reps == 4 and len(set(a.replicate_throughputs)) == 4
    assert a.n_rounds == 80_000


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("DOS_LAB_THREADS", "2")
    assert thread_cap() == 2
    monkeypatch.delenv("DOS_LAB_THREADS")
    assert thread_cap(5) == 5


def test_counts_and_time_accounting(setup):
    c, s = setup
    r = run(SimConfig(50_000, 11, TwoLevel(s)), c)
    k = r.decision_counts
    assert k["transmit1"] + k["recontend1"] + k["probe2"] == r.n_rounds
    assert k["transmit2"] + k["recontend2"] == k["probe2"]
    tau = c.tau
    slots = r.mean_contention_slots * r.n_rounds
    expected = slots * tau + k["probe2"] * tau + k["transmit1"] + k["transmit2"] * (1 - tau)
    assert r.total_time == pytest.approx(expected, rel=1e-12)


def test_contention_slots_geometric(setup):
    c, _ = setup
    r = run(SimConfig(ROUNDS, 2, PhyOblivious()), c)
    assert r.mean_contention_slots == pytest.approx(1 / PS, rel=0.01)


def _close(report, value, k=2.0):
    return abs(report.empirical_throughput - value) <= k * report.ci95


def test_phy_oblivious_matches_lower_bound(setup):
    c, s = setup
    r = run(SimConfig(ROUNDS, 21, PhyOblivious(), outage=False), c)
    assert _close(r, s.theta_L)
    assert r.decision_counts["transmit1"] == ROUNDS


def test_one_level_matches_threshold(setup):
    c, s = setup
    r = run(SimConfig(ROUNDS, 22, OneLevel(s.theta_star_B), outage=False), c)
    assert _close(r, s.theta_star_B)


def test_two_level_beats_one_level_with_paired_seeds(setup):
    c, s = setup
    assert s.strategy is Strategy.A
    two = run(SimConfig(ROUNDS, 23, TwoLevel(s), outage=False), c)
    one = run(SimConfig(ROUNDS, 23, OneLevel(s.theta_star_B), outage=False), c)
    assert _close(two, s.theta_star)
    assert two.empirical_throughput > one.empirical_throughput
    # share of rounds that probe twice is the first-level mass of the gray area
    share = two.decision_counts["probe2"] / ROUNDS
    expected = math.exp(-s.x_J / c.mean_R1) - math.exp(-s.x_q / c.mean_R1)
    assert share == pytest.approx(expected, abs=4 * math.sqrt(expected * (1 - expected) / ROUNDS))


def test_feedback_matches_throughput(setup):
    c, _ = setup
    f = solve_two_level_feedback(c)
    r = run(SimConfig(ROUNDS, 24, Feedback(f), outage=False), c)
    assert _close(r, f.gamma_max)


def test_outage_deflates_throughput(setup):
    c, s = setup
    on = run(SimConfig(200_000, 25, TwoLevel(s), outage=True), c)
    off = run(SimConfig(200_000, 25, TwoLevel(s), outage=False), c)
    assert on.empirical_throughput < off.empirical_throughput
    assert on.outage_rate == off.outage_rate > 0
    assert on.outage_rate == pytest.approx(1 - c.delivery_probability(1), rel=0.2)


def test_tiny_backoff_has_no_outage():
    c = derive(base_params(0.5), Fixed(1e-6, 1e-6))
    r = run(SimConfig(100_000, 4, PhyOblivious()), c)
    assert r.outage_rate == 0.0 and r.n_outages == 0


def test_exact_rate_model_runs(setup):
    c, s = setup
    approx = run(SimConfig(50_000, 9, PhyOblivious(), "approx", outage=False), c)
    exact = run(SimConfig(50_000, 9, PhyOblivious(), "exact", outage=False), c)
    # log(1 + s) < s, so the exact rates are smaller on the same draws
    assert exact.empirical_throughput < approx.empirical_throughput


def test_serialization(setup):
    c, s = setup
    r = run(SimConfig(10_000, 1, TwoLevel(s)), c)
    d = json.loads(r.to_json())
    assert d["policy"] == "two-level"
    lines = r.to_csv().strip().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 2
    assert set(DECISIONS) <= set(CSV_COLUMNS)


def test_config_validation():
    with pytest.raises(ContractError):
        SimConfig(0)
    with pytest.raises(ValueError):
        SimConfig(10, rate_model="bogus")


def test_replicate_spread_shrinks(setup):
    c, s = setup
    small = replicate(SimConfig(5_000, 1, OneLevel(s.theta_star_B)), c, 12)
    large = replicate(SimConfig(80_000, 1, OneLevel(s.theta_star_B)), c, 12)
    assert np.std(large.replicate_throughputs) < np.std(small.replicate_throughputs)
    with pytest.raises(ContractError):
        replicate(SimConfig(100, 1), c, 0)
