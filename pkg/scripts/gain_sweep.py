"""Relative throughput gain versus pilot energy, written as CSV and SVG.

    python3 scripts/gain_sweep.py --out results/gain
"""

import argparse
import math
import time
from pathlib import Path

import numpy as np

from dos_lab.config import SystemParams
from dos_lab.sweep import SweepSpec, render_svg, rows_from_csv, rows_to_csv, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/gain", help="output path prefix")
    ap.add_argument("--points", type=int, default=20)
    ap.add_argument("--tau", type=float, default=0.2)
    ap.add_argument("--no-feedback", action="store_true")
    ap.add_argument("--replot", action="store_true", help="redraw the SVG from an existing CSV")
    args = ap.parse_args()

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = prefix.with_suffix(".csv"), prefix.with_suffix(".svg")
    if args.replot:
        svg_path.write_text(render_svg(rows_from_csv(csv_path.read_text())))
        print(f"wrote {svg_path}")
        return

    base = SystemParams(rho=1.0 / 300, M=300, W=3000.0, tau=args.tau, p_s=math.exp(-1.0))
    grid = tuple(np.logspace(-1, 2, args.points))
    t0 = time.perf_counter()
    rows = run_sweep(SweepSpec(base, grid, feedback=not args.no_feedback))
    csv_path.write_text(rows_to_csv(rows))
    svg_path.write_text(render_svg(rows))
    print(f"{len(rows)} points in {time.perf_counter() - t0:.1f} s -> {csv_path}, {svg_path}")
    for r in rows:
        if r["status"] != "ok":
            print(f"  alpha={r['alpha']:.4g} failed: {r['error']}")
            continue
        print(f"  alpha={r['alpha']:8.4g}  {r['strategy']}  Gamma_one={r['Gamma_one']:.4f}  Gamma_two={r['Gamma_two']:.4f}")


if __name__ == "__main__":
    main()
