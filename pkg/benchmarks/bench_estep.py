"""Compare the compiled E-step kernel with the numpy fallback.

Usage::

    python benchmarks/bench_estep.py [--repeat 5] [--threads 1]

Prints one row per problem size with the median wall time of each backend,
the speedup, and the largest absolute difference between their outputs.
"""

import argparse
import time

import numpy as np

from bbm import _estep_py

try:
    from bbm import _estep
except ImportError:  # extension not built
    _estep = None


def make_problem(Q, V, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((400, Q))
    G = A.T @ A
    C = rng.standard_normal((Q, V)) * 5
    tau2 = rng.uniform(0.5, 2.0, V)
    sigma2 = rng.uniform(0.01, 1.0, (Q, V))
    sigma2[:, : V // 20] = 0.0  # a few pinned locations, as in real priors
    return G, C, tau2, sigma2


def median_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    if _estep is None:
        raise SystemExit("compiled kernel not available; build with `pip install --no-build-isolation -e .`")

    print(f"{'Q':>3} {'V':>7} {'numpy s':>9} {'cython s':>9} {'speedup':>8} {'max diff':>9}")
    for Q in (3, 7, 15, 25):
        for V in (2_000, 20_000):
            problem = make_problem(Q, V)
            t_py = median_time(_estep_py.estep, problem, args.repeat)
            t_cy = median_time(lambda *a: _estep.estep(*a, threads=args.threads), problem, args.repeat)
            diff = max(
                float(np.abs(a - b).max())
                for a, b in zip(_estep_py.estep(*problem), _estep.estep(*problem, threads=args.threads))
            )
            print(f"{Q:>3} {V:>7} {t_py:9.4f} {t_cy:9.4f} {t_py / t_cy:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
