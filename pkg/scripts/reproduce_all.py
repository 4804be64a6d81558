"""Run every scenario with its shipped defaults and summarize the checks."""

import argparse
import sys
import time
from pathlib import Path

from blowup_lab.cli import SCENARIOS, main


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="reproduce-out")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", nargs="+", choices=sorted(SCENARIOS))
    return ap.parse_args()


def run():
    args = parse_args()
    codes = {}
    for name in args.only or sorted(SCENARIOS):
        t0 = time.perf_counter()
        codes[name] = main([name, "--jobs", str(args.jobs), "--out-dir", str(Path(args.out_dir) / name)])
        print(f"{name}: exit {codes[name]} in {time.perf_counter() - t0:.1f}s")
    bad = [n for n, c in codes.items() if c]
    print("all scenarios passed" if not bad else f"failing scenarios: {', '.join(bad)}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(run())
