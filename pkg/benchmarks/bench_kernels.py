"""Compare the compiled and pure-Python multinomial kernels.

Usage::

    python benchmarks/bench_kernels.py [--rows N] [--keys K] [--nu NU] [--repeat R]

Both backends draw the same ``(1, rows, keys)`` block from the same key;
the script checks that the counts agree exactly and prints rows/second.
"""

import argparse
import time

import numpy as np

from stochattn.kernels import available_backends, get_backend


def bench(backend, pi, nu, repeat):
    best = float("inf")
    out = None
    for r in range(repeat):
        t0 = time.perf_counter()
        out = backend.multinomial_counts(pi, nu, 12345)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20000)
    p.add_argument("--keys", type=int, default=16)
    p.add_argument("--nu", type=int, default=64)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(args.keys), size=(1, args.rows))
    results = {}
    for name in available_backends():
        seconds, counts = bench(get_backend(name), pi, args.nu, args.repeat)
        results[name] = (seconds, counts)
        print(f"{name:>7}: {args.rows / seconds:14,.0f} rows/s  ({seconds:.4f} s for {args.rows} rows, "
              f"{args.keys} keys, nu={args.nu})")
    if len(results) == 2:
        (tc, cc), (tp, cp) = results["cython"], results["python"]
        print(f"identical counts: {bool(np.array_equal(cc, cp))}   speed-up: {tp / tc:.1f}x")


if __name__ == "__main__":
    main()
