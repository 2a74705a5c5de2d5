"""Compare the compiled and pure-Python kernels.

Times pointwise resolution (velocities, H0, h_a and their gradients) over
random phase points, and a full fixed-step integration, for every corpus
model and every available backend.

    python3 benchmarks/bench_kernels.py --points 2000 --steps 10000
"""

import argparse
import time

import numpy as np

from clairaut.evolution import gauge_report, integrate
from clairaut.kernel import available_backends
from clairaut.models import load_corpus


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_local(system, points, repeat):
    def run():
        for q, p in points:
            system.local_uncached(q, p, np.zeros(system.r))

    return best_of(run, repeat) / len(points)


def bench_integrate(spec, system, steps, repeat):
    initial, guess = spec.initial_point(system)
    if system.m and gauge_report(system, initial).gauge_count:
        return None
    dt = 1e-3
    t1 = initial.t + steps * dt
    return best_of(lambda: integrate(system, initial, initial.t, t1, dt, guess=guess, diagnostics=False), repeat)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=2000, help="random points for the pointwise timing")
    parser.add_argument("--steps", type=int, default=10000, help="RK4 steps for the integration timing")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = available_backends()
    if len(backends) < 2:
        print("note: compiled kernel not built, timing the Python kernel only")
    header = f"{'model':<16}{'backend':<9}{'local [us]':>12}{'integrate [ms]':>16}"
    print(header)
    print("-" * len(header))
    speedups = []
    for spec in load_corpus():
        rng = np.random.default_rng(args.seed)
        row = {}
        for backend in backends:
            system = spec.build_system(backend)
            # keep away from points where a Hessian minor degenerates (quartic at p = 0)
            points = [(rng.uniform(-1, 1, system.n), rng.uniform(0.5, 1.5, system.r)) for _ in range(args.points)]
            local = bench_local(system, points, args.repeat)
            traj = bench_integrate(spec, system, args.steps, args.repeat)
            row[backend] = (local, traj)
            shown = "n/a (gauge)" if traj is None else f"{1e3 * traj:.1f}"
            print(f"{spec.name:<16}{backend:<9}{1e6 * local:>12.2f}{shown:>16}")
        if len(row) == 2 and row["cython"][1] is not None:
            speedups.append(row["python"][1] / row["cython"][1])
    if speedups:
        print(f"\nintegration speed-up of the compiled kernel: {min(speedups):.0f}x to {max(speedups):.0f}x")


if __name__ == "__main__":
    main()
