"""Compare simulated throughput of each policy against its analytic value.

    python3 scripts/validate_closure.py --alpha 1 --rounds 1000000 --reps 20
"""

import argparse
import math

import numpy as np

from dos_lab.config import SystemParams, derive
from dos_lab.feedback_solver import solve_two_level_feedback
from dos_lab.ost_solver import solve_two_level
from dos_lab.simkit import Feedback, OneLevel, PhyOblivious, SimConfig, TwoLevel, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--rounds", type=int, default=10**6)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--rate-model", choices=("approx", "exact"), default="approx")
    ap.add_argument("--outage", action="store_true", help="charge outages (analytic values ignore them)")
    args = ap.parse_args()

    consts = derive(SystemParams(rho=args.alpha / 300, M=300, W=3000.0, tau=0.2, p_s=math.exp(-1.0)))
    sol = solve_two_level(consts)
    fb = solve_two_level_feedback(consts)
    print(f"alpha={args.alpha}  strategy {sol.strategy.value}  feedback strategy {fb.strategy.value}")

    cases = [
        ("phy-oblivious", PhyOblivious(), sol.theta_L),
        ("one-level", OneLevel(sol.theta_star_B), sol.theta_star_B),
        ("two-level", TwoLevel(sol), sol.theta_star),
        ("feedback", Feedback(fb), fb.gamma_max),
    ]
    seeds = np.random.SeedSequence(args.seed).spawn(args.reps)
    print(f"{'policy':<14} {'analytic':>10} {'mean sim':>10} {'max err':>8} {'coverage':>9}")
    for name, policy, target in cases:
        reports = [run(SimConfig(args.rounds, s, policy, args.rate_model, outage=args.outage), consts)
                   for s in seeds]
        values = np.array([r.empirical_throughput for r in reports])
        covered = sum(abs(r.empirical_throughput - target) <= r.ci95 for r in reports)
        err = np.max(np.abs(values - target)) / target
        print(f"{name:<14} {target:10.5f} {values.mean():10.5f} {err:8.2%} {covered:>5}/{args.reps}")


if __name__ == "__main__":
    main()
