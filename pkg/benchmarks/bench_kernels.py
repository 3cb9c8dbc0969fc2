"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 20000] [--repeat 3]

Both backends are checked for identical output before timing.
"""

import argparse
import time

import numpy as np

from eca_lab import _kernels
from eca_lab.rng import derive_seed, random_bits


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(n, width=20, radius=2, steps=20):
    subs = np.array([derive_seed(1, 2, i) for i in range(n)], dtype=np.uint64)
    rules = random_bits(subs, 1 << (2 * radius + 1), 0)
    initial = random_bits(subs, width, 1)
    rows = _kernels._pure.evolve(rules, initial, width, radius, steps)
    return {
        "evolve": lambda k: k.evolve(rules, initial, width, radius, steps),
        "neighborhood_indices": lambda k: k.neighborhood_indices(rows[:, :-1], width, radius),
        "presence_masks": lambda k: k.presence_masks(rows, width, radius),
        # tally works on one orbit at a time, as rule inference calls it
        "tally (per orbit)": lambda k: [k.tally(r, width, radius) for r in rows[: max(1, n // 10)]],
    }


def same(a, b):
    if isinstance(a, (tuple, list)):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=20_000, help="orbits per workload (W=20, r=2, T=20)")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    found = _kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy backend is available")
    jobs = workloads(args.n)
    print(f"{'kernel':22s}" + "".join(f"{name:>12s}" for name in found) + ("     speedup" if len(found) > 1 else ""))
    for name, job in jobs.items():
        outs = {b: job(k) for b, k in found.items()}
        ref = outs["numpy"]
        assert all(same(ref, o) for o in outs.values()), f"{name}: backends disagree"
        times = {b: best_of(lambda k=k: job(k), args.repeat) for b, k in found.items()}
        line = f"{name:22s}" + "".join(f"{times[b] * 1e3:10.1f}ms" for b in found)
        if "cython" in times:
            line += f"{times['numpy'] / times['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
