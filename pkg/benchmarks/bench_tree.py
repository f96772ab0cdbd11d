"""Benchmark the compiled tree kernels against the numpy fallback.

Run:  python benchmarks/bench_tree.py [--capacity N] [--draws N]

Exercises the three hot paths of the priority tree: scalar updates (the
per-step refresh in advantage-sampled training), batched sampling (actor
minibatch draws and the analysis estimators), and bulk construction.
"""

import argparse
import time

import numpy as np

import offrl.logtree._fallback as fallback

try:
    import offrl.logtree._kernel as compiled
except ImportError:
    compiled = None


def bench(kernel, capacity, draws, updates, seed=0):
    rng = np.random.default_rng(seed)
    leaf_base = 1 << (capacity - 1).bit_length()
    nodes = np.full(2 * leaf_base, -np.inf)
    nodes[leaf_base:leaf_base + capacity] = rng.uniform(-50, 50, capacity)

    t0 = time.perf_counter()
    kernel.build(nodes, leaf_base)
    t_build = time.perf_counter() - t0

    idx = rng.integers(0, capacity, updates)
    vals = rng.uniform(-50, 50, updates)
    t0 = time.perf_counter()
    for i, v in zip(idx, vals):
        kernel.update(nodes, leaf_base, int(i), float(v))
    t_update = time.perf_counter() - t0

    us = rng.random(draws)
    out = np.empty(draws, dtype=np.int64)
    t0 = time.perf_counter()
    kernel.sample_many(nodes, leaf_base, us, out)
    t_sample = time.perf_counter() - t0

    batch_idx = np.ascontiguousarray(rng.integers(0, capacity, 512))
    batch_vals = rng.uniform(-50, 50, 512)
    t0 = time.perf_counter()
    for _ in range(200):
        kernel.update_many(nodes, leaf_base, batch_idx, batch_vals)
    t_refresh = (time.perf_counter() - t0) / 200

    return {
        "build": t_build,
        "update/s": updates / t_update,
        "sample/s": draws / t_sample,
        "refresh-512": t_refresh,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--capacity", type=int, default=100_000)
    parser.add_argument("--draws", type=int, default=2_000_000)
    parser.add_argument("--updates", type=int, default=100_000)
    args = parser.parse_args()

    results = {"python": bench(fallback, args.capacity, args.draws,
                               args.updates)}
    if compiled is not None:
        results["compiled"] = bench(compiled, args.capacity, args.draws,
                                    args.updates)
    else:
        print("compiled kernels not built; showing the fallback only")

    print(f"capacity {args.capacity}, {args.draws} draws, "
          f"{args.updates} scalar updates")
    header = f"{'backend':<10} {'build (s)':>10} {'updates/s':>12} " \
             f"{'samples/s':>12} {'512-refresh (ms)':>17}"
    print(header)
    for name, r in results.items():
        print(f"{name:<10} {r['build']:>10.4f} {r['update/s']:>12.0f} "
              f"{r['sample/s']:>12.0f} {r['refresh-512'] * 1e3:>17.3f}")
    if len(results) == 2:
        py, cy = results["python"], results["compiled"]
        print(f"compiled speedup: updates x{cy['update/s'] / py['update/s']:.0f}, "
              f"samples x{cy['sample/s'] / py['sample/s']:.1f}, "
              f"refresh x{py['refresh-512'] / cy['refresh-512']:.1f}")


if __name__ == "__main__":
    main()
