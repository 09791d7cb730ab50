"""Relative-gain sweeps over the pilot energy alpha = rho * M."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import BackoffPolicy, Optimized, SystemParams, derive
from .errors import DosLabError
from .feedback_solver import solve_two_level_feedback
from .ost_solver import solve_two_level
from .simkit import thread_cap

# fixed column order; the plot is rebuilt from these rows alone
COLUMNS = (
    "alpha", "status", "strategy", "theta_L", "theta_one", "theta_two", "Gamma_one", "Gamma_two",
    "feedback_strategy", "gamma_hat_max", "gamma_max", "x_J", "x_q", "error",
)

DEFAULT_GRID = tuple(np.logspace(-1.0, 2.0, 20))


@dataclass(frozen=True)
class SweepSpec:
    base: SystemParams
    alpha_grid: tuple = DEFAULT_GRID
    backoff: BackoffPolicy = field(default_factory=Optimized)
    feedback: bool = True
    auto_extend: bool = True

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        if not grid:
            raise ValueError("alpha grid is empty")
        if any(not a > 0 for a in grid):
            raise ValueError("alpha values must be positive")
        object.__setattr__(self, "alpha_grid", grid)


def solve_point(spec: SweepSpec, alpha: float) -> dict:
    row = dict.fromkeys(COLUMNS, "")
    row["alpha"] = alpha
    try:
        consts = derive(spec.base.with_alpha(alpha), spec.backoff)
        sol = solve_two_level(consts)
        row.update(
            strategy=sol.strategy.value,
            theta_L=sol.theta_L,
            theta_one=sol.theta_star_B,
            theta_two=sol.theta_star,
            Gamma_one=(sol.theta_star_B - sol.theta_L) / sol.theta_L,
            Gamma_two=(sol.theta_star - sol.theta_L) / sol.theta_L,
            x_J=sol.x_J,
            x_q=sol.x_q,
        )
        if spec.feedback:
            fb = solve_two_level_feedback(consts)
            row.update(feedback_strategy=fb.strategy.value, gamma_hat_max=fb.gamma_hat_max, gamma_max=fb.gamma_max)
        row["status"] = "ok"
    except DosLabError as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def _has_transition(rows) -> bool:
    kinds = {r["strategy"] for r in rows if r["status"] == "ok"}
    return kinds == {"A", "B"}


def run_sweep(spec: SweepSpec, threads: int | None = None, max_extensions: int = 3) -> list[dict]:
    """Solve every grid point; rows come back sorted by alpha.

    Without a strategy change on the grid, the grid is extended by decades
    toward the missing strategy (larger alpha when all points use A).
    """
    grid = sorted(set(spec.alpha_grid))
    workers = min(len(grid), thread_cap(threads))

    def solve_all(alphas):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda a: solve_point(spec, a), alphas))

    rows = solve_all(grid)
    for _ in range(max_extensions if spec.auto_extend else 0):
        ok = [r for r in rows if r["status"] == "ok"]
        if not ok or _has_transition(rows):
            break
        lo, hi = min(r["alpha"] for r in rows), max(r["alpha"] for r in rows)
        if all(r["strategy"] == "A" for r in ok):
            extra = list(hi * np.logspace(0.2, 1.0, 5))
        else:
            extra = list(lo * np.logspace(-1.0, -0.2, 5))
        rows += solve_all(extra)
    return sorted(rows, key=lambda r: r["alpha"])


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in COLUMNS})
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        out = {}
        for k in COLUMNS:
            v = r.get(k, "")
            try:
                out[k] = float(v) if k not in ("status", "strategy", "feedback_strategy", "error") and v != "" else v
            except ValueError:
                out[k] = v
        rows.append(out)
    return rows


def render_svg(rows, width: int = 640, height: int = 420) -> str:
    """Line plot of Gamma_one and Gamma_two against alpha (log axis)."""
    ok = [r for r in rows if r["status"] == "ok"]
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">alpha = rho M</text>',
        f'<text x="16" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2})">'
        "relative gain</text>",
    ]
    if ok:
        la = [math.log10(r["alpha"]) for r in ok]
        lo_x, hi_x = min(la), max(la)
        if hi_x == lo_x:
            lo_x, hi_x = lo_x - 0.5, hi_x + 0.5
        hi_y = max(max(r["Gamma_two"], r["Gamma_one"]) for r in ok)
        hi_y = hi_y * 1.05 if hi_y > 0 else 1.0

        def sx(v):
            return left + (v - lo_x) / (hi_x - lo_x) * pw

        def sy(v):
            return top + ph - v / hi_y * ph

        for d in range(math.floor(lo_x), math.ceil(hi_x) + 1):
            if lo_x <= d <= hi_x:
                x = sx(d)
                parts.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 5}" stroke="#444"/>')
                parts.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle">1e{d}</text>')
        for k in range(5):
            v = hi_y * k / 4
            y = sy(v)
            parts.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="#444"/>')
            parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
        for key, colour in (("Gamma_one", "#1f77b4"), ("Gamma_two", "#d62728")):
            pts = " ".join(f"{sx(x):.1f},{sy(r[key]):.1f}" for x, r in zip(la, ok))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
            for x, r in zip(la, ok):
                parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(r[key]):.1f}" r="2.5" fill="{colour}"/>')
        for i, (colour, label) in enumerate((("#1f77b4", "one-level"), ("#d62728", "two-level"))):
            y = top + 15 + 16 * i
            parts.append(f'<line x1="{left + pw - 110}" y1="{y}" x2="{left + pw - 85}" y2="{y}" '
                         f'stroke="{colour}" stroke-width="2"/>')
            parts.append(f'<text x="{left + pw - 80}" y="{y + 4}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
