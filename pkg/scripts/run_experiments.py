"""Run named experiments (default: all) and print a pass/fail table.

    python scripts/run_experiments.py --out results --cache models wind-circle egg-trajectory
"""
from __future__ import annotations

import argparse
import json
import sys

import torch

from dynvio.experiments.registry import EXPERIMENTS, Context, run_experiment


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=sorted(EXPERIMENTS))
    ap.add_argument("--out", default="results")
    ap.add_argument("--cache", default=None, help="trained-model cache (default <out>/models)")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    torch.set_num_threads(1)
    ctx = Context(args.out, args.cache, None if args.quiet else lambda m: print(m, file=sys.stderr, flush=True))
    failed = 0
    for name in args.names:
        r = run_experiment(name, None, ctx=ctx)
        failed += not r.passed
        scalars = {k: round(v, 4) for k, v in r.metrics.items() if isinstance(v, float)}
        print(f"{name:16s} {'PASS' if r.passed else 'FAIL'} {r.seconds:7.0f}s {json.dumps(scalars)}", flush=True)
        for check, ok in r.checks.items():
            print(f"    {'ok  ' if ok else 'FAIL'} {check}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
