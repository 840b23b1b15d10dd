#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against the pure-numpy fallback.

The fallback is selected at import time via TDLP_NO_NUMBA=1, so each path
runs in its own subprocess and reports median wall time per call.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

WORKLOADS = ["lex_assign_small", "lex_assign_medium", "iou_matrix", "maxcard_large"]


def run_workload(name: str, repeats: int) -> float:
    import numpy as np

    from tdlp._kernels import iou_matrix, lex_assign, maxcard_mincost

    rng = np.random.default_rng(0)
    if name == "lex_assign_small":
        mats = [rng.uniform(0, 1, size=(12, 12)) for _ in range(50)]
        masks = [rng.random((12, 12)) < 0.3 for _ in range(50)]
        fn = lambda: [lex_assign(-m, ~f) for m, f in zip(mats, masks)]
    elif name == "lex_assign_medium":
        mats = [rng.uniform(0, 1, size=(30, 34)) for _ in range(10)]
        masks = [rng.random((30, 34)) < 0.3 for _ in range(10)]
        fn = lambda: [lex_assign(-m, ~f) for m, f in zip(mats, masks)]
    elif name == "maxcard_large":
        mat = rng.uniform(0, 1, size=(120, 120))
        mask = np.ones((120, 120), dtype=bool)
        fn = lambda: maxcard_mincost(-mat, mask)
    elif name == "iou_matrix":
        a = rng.uniform(0, 900, size=(200, 4)) + [0, 0, 40, 40]
        b = rng.uniform(0, 900, size=(200, 4)) + [0, 0, 40, 40]
        fn = lambda: iou_matrix(a, b)
    else:
        raise SystemExit(f"unknown workload {name}")
    fn()  # warmup / jit compile
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--workload", choices=WORKLOADS, default=None,
                        help=argparse.SUPPRESS)  # internal subprocess mode
    args = parser.parse_args()
    if args.workload:
        print(json.dumps(run_workload(args.workload, args.repeats)))
        return 0

    print(f"{'workload':<20} {'numba':>12} {'pure numpy':>12} {'speedup':>9}")
    for name in WORKLOADS:
        results = {}
        for label, env_val in (("numba", "0"), ("numpy", "1")):
            env = dict(os.environ, TDLP_NO_NUMBA=env_val)
            out = subprocess.run(
                [sys.executable, __file__, "--workload", name,
                 "--repeats", str(args.repeats)],
                capture_output=True, text=True, env=env, check=True,
            )
            results[label] = float(json.loads(out.stdout.strip().splitlines()[-1]))
        speedup = results["numpy"] / results["numba"]
        print(f"{name:<20} {results['numba'] * 1e3:>10.2f}ms {results['numpy'] * 1e3:>10.2f}ms "
              f"{speedup:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
