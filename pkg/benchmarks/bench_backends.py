"""Compare the compiled core with the numpy fallback on the simulation-study cohort.

Usage: python benchmarks/bench_backends.py [--per-cell 100] [--iters 20] [--threads 1]

Reports seconds per Gibbs iteration for each available backend and the
largest coefficient difference after the same number of iterations (the two
backends consume identical random streams, so it should be at rounding level).
"""

import argparse
import time

import numpy as np

from svcprobit import kernels
from svcprobit.sampler import McmcConfig, Problem, gibbs_step, initial_state
from svcprobit.simgen import SimDesign, generate_cohort


def run(problem, config, backend, iters):
    state = initial_state(problem, config, 0)
    gibbs_step(problem, state, config, 0, 0, backend)  # warm-up
    t0 = time.perf_counter()
    for t in range(1, iters + 1):
        gibbs_step(problem, state, config, 0, t, backend)
    return (time.perf_counter() - t0) / iters, state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-cell", type=int, default=100)
    ap.add_argument("--side", type=int, default=100)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cohort = generate_cohort(SimDesign(side=args.side, quadrant=args.side // 2), args.per_cell, seed=0)
    problem = Problem(cohort.dataset)
    config = McmcConfig(iterations=args.iters + 1, burn_in=0, seed=0, threads=args.threads)
    print(f"N={problem.N} M={problem.M} P={problem.P} threads={args.threads}")

    results = {}
    for name in sorted(kernels.BACKENDS):
        sec, state = run(problem, config, kernels.get_backend(name), args.iters)
        results[name] = (sec, state)
        print(f"{name:>9}: {sec * 1e3:9.1f} ms/iteration   12k iterations ~ {sec * 12000 / 60:6.1f} min")
    if len(results) == 2:
        (sc, a), (sp, b) = results["compiled"], results["python"]
        print(f"speedup: {sp / sc:.1f}x")
        print(f"max |beta difference| after {args.iters + 1} iterations: "
              f"{np.max(np.abs(a.beta_star - b.beta_star)):.3e}")


if __name__ == "__main__":
    main()
