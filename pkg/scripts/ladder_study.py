"""Truncation-ladder study for the example-d source.

Runs min(psi, M) for a list of levels on the graded mesh and writes a CSV
with the sup-over-time L2 norm per level, the stable increment to the next
level, and the supersolution margin. Use --dt/--ratio to check that the
trend survives refinement.
"""

import argparse
import sys

from blowup_lab import export
from blowup_lab.piecewise_source import build_example_d
from blowup_lab.rd_solver import Mesh, SolverConfig, supersolution_check, truncation_ladder
from blowup_lab.toy_pde import example_d_psi


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--levels", type=float, nargs="+", default=[4, 16, 256, 65536])
    ap.add_argument("--horizon", type=float, default=0.5)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--ratio", type=float, default=0.7)
    ap.add_argument("--finest", type=float, default=2.0**-36)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="ladder_study.csv")
    return ap.parse_args()


def run():
    args = parse_args()
    f = build_example_d(8)
    mesh = Mesh.geometric(args.ratio, args.finest)
    cfg = SolverConfig(dt=args.dt, theta=args.theta, horizon=args.horizon)
    lad = truncation_ladder(f, example_d_psi(8), args.levels, cfg, mesh, jobs=args.jobs)

    rows = []
    for i, (M, run) in enumerate(zip(lad.levels, lad.runs)):
        inc = lad.stable_increments[i] if i < len(lad.stable_increments) else float("nan")
        margin = supersolution_check(run, f).max_violation if not run.blown_up else float("nan")
        rows.append([M, lad.sup_l2[i], inc, margin, run.blown_up])
        print(f"M={M:<10g} sup L2={lad.sup_l2[i]:.12g}  increment={inc:.3e}  violation={margin:.1e}")
    export.write_csv(["M", "sup_L2", "increment", "supersolution_violation", "blown_up"], rows, args.out)
    print(f"monotone={lad.monotone} decreasing={lad.increments_decreasing} -> {args.out}")
    return 0 if lad.ok else 1


if __name__ == "__main__":
    sys.exit(run())
