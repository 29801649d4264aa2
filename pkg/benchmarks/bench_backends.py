"""Throughput comparison of the compiled simulation core against the NumPy
fallback: raw Philox normal generation and full Euler-Maruyama sweeps.

Usage: python3 benchmarks/bench_backends.py [--paths N] [--steps N]
"""
import argparse
import time

from hypoheat import _backend, _fallback
from hypoheat.expr import parse


def _time(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_philox(n_paths, n_steps):
    n = n_paths * n_steps
    rows = []
    if _backend.BACKEND == "compiled":
        t = _time(lambda: _backend.philox_normals(0, 0, n_paths, n_steps))
        rows.append(("philox normals", "compiled", n / t))
    t = _time(lambda: _fallback.philox_normals(0, 0, n_paths, n_steps))
    rows.append(("philox normals", "numpy", n / t))
    return rows


def bench_euler(n_paths, n_steps):
    b1 = parse("0")
    b2 = parse("x1 + 0.5*x1^2")
    s1 = parse("1")
    s2 = parse("0")
    n = n_paths * n_steps

    def run(force_numpy):
        _backend.euler_maruyama(
            b1, b2, s1, s2, 0.0, 0.0, 1e-3, n_steps, [n_steps],
            seed=0, path_lo=0, n_paths=n_paths, radius=1e6,
            force_numpy=force_numpy,
        )

    rows = []
    if _backend.BACKEND == "compiled":
        t = _time(lambda: run(False))
        rows.append(("euler-maruyama", "compiled", n / t))
    t = _time(lambda: run(True))
    rows.append(("euler-maruyama", "numpy", n / t))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=500)
    args = ap.parse_args()

    print(f"active backend: {_backend.backend_name()}")
    print(f"workload: {args.paths} paths x {args.steps} steps")
    rows = bench_philox(args.paths, args.steps) + bench_euler(args.paths, args.steps)
    print(f"{'benchmark':<18} {'backend':<10} {'rate':>16}")
    for name, backend, rate in rows:
        unit = "normals/s" if "philox" in name else "steps/s"
        print(f"{name:<18} {backend:<10} {rate:>12.3e} {unit}")
    if _backend.BACKEND == "compiled":
        for name in ("philox normals", "euler-maruyama"):
            pair = [r for r in rows if r[0] == name]
            if len(pair) == 2:
                print(f"{name}: compiled is {pair[0][2] / pair[1][2]:.1f}x faster")


if __name__ == "__main__":
    main()
