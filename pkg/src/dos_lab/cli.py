"""Command-line entry point: ``dos-lab solve | simulate | sweep``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import sweep as sweep_mod
from .config import PARAM_KEYS, derive, load_params, params_from_mapping, parse_backoff
from .errors import DosLabError, ParameterError, RegularityError
from .feedback_solver import solve_R1_hat, solve_two_level_feedback
from .ost_solver import solve_one_level, solve_two_level, theta_lower_bound
from .simkit import Feedback, OneLevel, PhyOblivious, SimConfig, TwoLevel, replicate

# parameter set used when neither a config file nor a flag supplies a value
DEFAULTS = {"p_s": math.exp(-1.0), "M": 300, "W": 3000.0, "tau": 0.2, "tau_t": 0.1}
DEFAULT_ALPHA = 1.0

POLICIES = ("phy-oblivious", "one-level", "two-level", "feedback")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("system parameters")
    g.add_argument("--config", help="JSON file with parameters; flags override it")
    g.add_argument("--ps", dest="p_s", type=float)
    g.add_argument("--link-probs", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma-separated contention probabilities; determines p_s")
    g.add_argument("--m", dest="M", type=int)
    g.add_argument("--w", dest="W", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--tau-t", dest="tau_t", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--alpha", type=float, help="pilot energy rho*M; overrides --rho")
    g.add_argument("--backoff", default="opt", help="opt | fixed:SIGMA_M,SIGMA_2M")
    common.add_argument("--emit", nargs=2, action="append", default=[], metavar=("FORMAT", "PATH"),
                        help="write json, csv or svg output to PATH (repeatable)")

    parser = argparse.ArgumentParser(prog="dos-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", parents=[common], help="solve the scheduling policies")
    p_solve.add_argument("--solver", choices=("one", "two", "feedback", "all"), default="all")
    p_solve.add_argument("--strict", action="store_true",
                         help="refuse a two-level policy whose lower threshold sits at zero")

    p_sim = sub.add_parser("simulate", parents=[common], help="solve, then simulate a policy")
    p_sim.add_argument("--policy", choices=POLICIES, default="two-level")
    p_sim.add_argument("--rate-model", choices=("approx", "exact"), default="approx")
    p_sim.add_argument("--outage", choices=("on", "off"), default="on")
    p_sim.add_argument("--rounds", type=int, default=10**6)
    p_sim.add_argument("--reps", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep", parents=[common], help="relative gain over a grid of alpha")
    p_sweep.add_argument("--alpha-grid", type=lambda s: [float(v) for v in s.split(",")],
                         help="comma-separated alpha values (default: 20 log-spaced points in [0.1, 100])")
    p_sweep.add_argument("--no-feedback", action="store_true", help="skip the (0,1,e) columns")
    p_sweep.add_argument("--no-extend", action="store_true", help="do not extend the grid to find the A/B switch")
    return parser


def params_from_args(args):
    overrides = {k: getattr(args, k, None) for k in PARAM_KEYS}
    overrides["alpha"] = args.alpha
    if args.config:
        return load_params(args.config, overrides)
    data = dict(DEFAULTS)
    if args.link_probs is not None:
        data.pop("p_s")
    if args.rho is None and args.alpha is None:
        data["alpha"] = DEFAULT_ALPHA
    return params_from_mapping(data, overrides)


def _check_emit(args, allowed):
    for fmt, _ in args.emit:
        if fmt not in allowed:
            raise ParameterError(f"--emit {fmt} is not available here (choose from {', '.join(allowed)})")


def _write(path, text):
    Path(path).write_text(text)


def cmd_solve(args) -> int:
    _check_emit(args, ("json",))
    params = params_from_args(args)
    consts = derive(params, parse_backoff(args.backoff))
    out = {"params": consts.to_dict()["params"], "derived": consts.to_dict()}
    out["derived"].pop("params")
    m1 = consts.mean_R1
    out["theta_L"] = theta_lower_bound(m1, params.tau, params.p_s)
    if args.solver in ("one", "all"):
        out["one_level"] = {"theta_star_B": solve_one_level(m1, params.tau, params.p_s)}
    if args.solver in ("two", "all"):
        out["two_level"] = solve_two_level(consts, strict=args.strict).to_dict()
    if args.solver in ("feedback", "all"):
        R1_hat, g_hat = solve_R1_hat(m1, params.tau, params.p_s)
        out["one_bit"] = {"R1_hat": R1_hat, "gamma_hat_max": g_hat}
        out["feedback"] = solve_two_level_feedback(consts).to_dict()
    if "two_level" in out:
        out["strategy"] = out["two_level"]["strategy"]
    text = json.dumps(out, indent=2)
    print(_summary(out))
    for _, path in args.emit:
        _write(path, text + "\n")
    return 0


def _summary(out) -> str:
    lines = [f"theta_L = {out['theta_L']:.10g}"]
    if "one_level" in out:
        lines.append(f"one-level threshold theta*_B = {out['one_level']['theta_star_B']:.10g}")
    if "two_level" in out:
        s = out["two_level"]
        lines.append(f"two-level strategy {s['strategy']}: x_J = {s['x_J']:.10g}, x_q = {s['x_q']:.10g}, "
                     f"theta* = {s['theta_star']:.10g} (theta*_A = {s['theta_star_A']:.10g})")
        lines.append("  residuals: " + ", ".join(f"{k}={v:.2e}" for k, v in s["residuals"].items()))
    if "feedback" in out:
        f = out["feedback"]
        lines.append(f"(0,1,e) strategy {f['strategy']}: R1* = {f['R1_star']:.10g}, x_v* = {f['x_v_star']:.10g}, "
                     f"gamma*_max = {f['gamma_max']:.10g} (one-bit {f['gamma_hat_max']:.10g})")
        lines.append("  residuals: " + ", ".join(f"{k}={v:.2e}" for k, v in f["residuals"].items()))
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    _check_emit(args, ("json", "csv"))
    if args.rounds < 1 or args.reps < 1:
        raise ParameterError("--rounds and --reps must be positive")
    params = params_from_args(args)
    consts = derive(params, parse_backoff(args.backoff))
    m1 = consts.mean_R1
    if args.policy == "phy-oblivious":
        policy, analytic = PhyOblivious(), theta_lower_bound(m1, params.tau, params.p_s)
    elif args.policy == "one-level":
        theta = solve_one_level(m1, params.tau, params.p_s)
        policy, analytic = OneLevel(theta), theta
    elif args.policy == "two-level":
        sol = solve_two_level(consts)
        policy, analytic = TwoLevel(sol), sol.theta_star
    else:
        fb = solve_two_level_feedback(consts)
        policy, analytic = Feedback(fb), fb.gamma_max
    sim = SimConfig(args.rounds, args.seed, policy, args.rate_model, args.outage == "on")
    report = replicate(sim, consts, args.reps)
    rel = (report.empirical_throughput - analytic) / analytic
    print(f"policy {args.policy}: analytic {analytic:.8g}, empirical {report.empirical_throughput:.8g} "
          f"+- {report.ci95:.3g} (relative error {rel:+.3e}), outage rate {report.outage_rate:.3e}")
    csv_text = report.to_csv()
    print(csv_text, end="")
    for fmt, path in args.emit:
        if fmt == "csv":
            _write(path, csv_text)
        else:
            d = report.to_dict()
            d.update(analytic_throughput=analytic, relative_error=rel)
            _write(path, json.dumps(d, indent=2) + "\n")
    return 0


def cmd_sweep(args) -> int:
    _check_emit(args, ("csv", "svg", "json"))
    params = params_from_args(args)
    backoff = parse_backoff(args.backoff)
    grid = tuple(args.alpha_grid) if args.alpha_grid else sweep_mod.DEFAULT_GRID
    try:
        spec = sweep_mod.SweepSpec(params, grid, backoff, feedback=not args.no_feedback, auto_extend=not args.no_extend)
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc
    rows = sweep_mod.run_sweep(spec)
    csv_text = sweep_mod.rows_to_csv(rows)
    print(csv_text, end="")
    for fmt, path in args.emit:
        if fmt == "csv":
            _write(path, csv_text)
        elif fmt == "svg":
            _write(path, sweep_mod.render_svg(rows))
        else:
            _write(path, json.dumps(rows, indent=2, default=float) + "\n")
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} grid point(s) failed", file=sys.stderr)
    return 0


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ParameterError, RegularityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DosLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
