"""Wall-clock comparison of the compiled and pure-Python kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from delayflock import _kernels
from delayflock.influence import InfluenceFunction
from delayflock.integrator import IntegratorConfig, integrate
from delayflock.particles import InitialHistory

CASES = [
    # (N, d, tau, t_max, scheme)
    (4, 1, 1.0, 60.0, "euler"),
    (16, 2, 0.25, 10.0, "euler"),
    (64, 2, 0.25, 5.0, "euler"),
    (16, 2, 0.25, 10.0, "rk4"),
]


def history(n, d, tau, seed=0):
    rng = np.random.default_rng(seed)
    return InitialHistory.constant_velocity(rng.uniform(-1, 1, (n, d)), tau,
                                            anchor_positions=rng.uniform(0, 1, (n, d)), anchor_time=-tau)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    psi = InfluenceFunction.exponential()
    print(f"{'N':>4} {'d':>2} {'scheme':>6} {'steps':>7} {'python s':>10} {'compiled s':>11} {'speedup':>8} {'max diff':>9}")
    for n, d, tau, t_max, scheme in CASES:
        h = history(n, d, tau)
        cfg = IntegratorConfig(t_max=t_max, scheme=scheme)
        out = {}

        def run(name):
            out[name] = integrate(h, psi, cfg, backend=name)

        tp = best_time(lambda: run("python"), args.repeat)
        tc = best_time(lambda: run("compiled"), args.repeat)
        diff = float(np.max(np.abs(out["python"].velocities - out["compiled"].velocities)))
        steps = len(out["python"]) - out["python"].zero_index - 1
        print(f"{n:>4} {d:>2} {scheme:>6} {steps:>7} {tp:>10.3f} {tc:>11.3f} {tp / tc:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
