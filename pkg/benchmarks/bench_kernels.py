"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from occtrack.kernels import backends


def cases(rng):
    n, m = 12, 14
    psi = rng.uniform(0, 2, (n, m))
    clutter = rng.uniform(0.1, 1, m)
    W = rng.uniform(0, 2, (8, 10))
    miss, cl = rng.uniform(0.1, 1, 8), rng.uniform(0.1, 1, 10)
    C, K = 4096, 2000
    lo = rng.integers(0, C, K)
    hi = lo + rng.integers(0, 200, K)
    weight = rng.uniform(0, 1, K)
    values = rng.uniform(0, 1, C)
    return {
        "lbp_association 12x14": lambda mod: mod.lbp_association(psi, clutter, 1e-6, 200, 0.5),
        "subset_dp_marginals 8x10": lambda mod: mod.subset_dp_marginals(W, miss, cl),
        "interval_cover 2000 on 4096": lambda mod: mod.interval_cover(lo, hi, weight, C),
        "range_max 2000 on 4096": lambda mod: mod.range_max(values, lo, hi, 1.0),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    mods = backends()
    if len(mods) < 2:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}" + "".join(f"{m.BACKEND + ' (ms)':>16}" for m in mods) + f"{'speedup':>10}")
    for name, fn in cases(rng).items():
        times = []
        for mod in mods:
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, number)) / number * 1e3)
        speed = f"{times[0] / times[-1]:10.1f}" if len(times) > 1 else f"{'-':>10}"
        print(f"{name:<30}" + "".join(f"{t:16.4f}" for t in times) + speed)


if __name__ == "__main__":
    main()
