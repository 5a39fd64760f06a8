"""Compiled vs numpy plant kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Times a single step, a 28-step horizon rollout (one cost evaluation of the
nonlinear OCP) and one full nonlinear OCP solve, for each backend.
"""
import argparse
import timeit

import numpy as np

from edmdmpc import _kernels_py, plant
from edmdmpc.control import make_ocp_spec, solve_ocp_nonlinear
from edmdmpc.spectral import build_grid

try:
    from edmdmpc import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _inputs(n, n_pop, steps):
    g = build_grid(n)
    rng = np.random.default_rng(0)
    y0 = rng.uniform(0.5, 1.5, size=(n_pop, n)) / np.arange(1, n + 1)
    kappa = 0.2 + 0.1 * rng.random(steps)
    v = 0.15 + 0.05 * rng.random(steps)
    inflow = 0.1 + 0.05 * rng.random(steps)
    return g, y0, kappa, v, inflow


def bench_kernels(mod, n, n_pop, steps, repeat):
    g, y0, kappa, v, inflow = _inputs(n, n_pop, steps)
    one = lambda: mod.advance_chain(g.diff, g.bnd_lo, g.bnd_hi, y0, kappa[0], v[0],
                                    inflow[0], 1.0, 0.5)
    roll = lambda: mod.rollout_chain(g.diff, g.bnd_lo, g.bnd_hi, y0, kappa, v, inflow,
                                     1.0, 0.5)
    t1 = min(timeit.repeat(one, number=50, repeat=repeat)) / 50
    t2 = min(timeit.repeat(roll, number=10, repeat=repeat)) / 10
    return t1, t2


def bench_ocp(mod, repeat):
    p = plant.PlantParams()
    s0 = plant.steady_state(p)
    spec = make_ocp_spec(p, t0=0.0, horizon_steps=28, dose_times=[1, 3, 5, 8, 10, 12],
                         upper=0.05, dose_weight=1.0, track_weight=1.0, term_weight=1.0,
                         target=2.5)
    saved = plant.kernels
    plant.kernels = mod
    try:
        run = lambda: solve_ocp_nonlinear(p, spec, s0, tol=1e-6)
        return min(timeit.repeat(run, number=1, repeat=max(3, repeat // 4)))
    finally:
        plant.kernels = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    backends = [("numpy", _kernels_py)]
    if _kernels_c is not None:
        backends.insert(0, ("cython", _kernels_c))
    else:
        print("compiled extension not built; numpy only")

    print(f"{'case':<28}" + "".join(f"{name:>14}" for name, _ in backends) + "   ratio")
    for n, n_pop in ((16, 2), (32, 2), (32, 5)):
        res = [bench_kernels(mod, n, n_pop, 28, args.repeat) for _, mod in backends]
        for j, label in enumerate(("step", "rollout x28")):
            times = [r[j] for r in res]
            ratio = times[-1] / times[0] if len(times) > 1 else 1.0
            print(f"{label + f' n={n} pop={n_pop}':<28}"
                  + "".join(f"{t * 1e6:>12.1f}us" for t in times) + f"   {ratio:5.1f}x")
    times = [bench_ocp(mod, args.repeat) for _, mod in backends]
    ratio = times[-1] / times[0] if len(times) > 1 else 1.0
    print(f"{'nonlinear OCP solve':<28}" + "".join(f"{t * 1e3:>12.1f}ms" for t in times)
          + f"   {ratio:5.1f}x")


if __name__ == "__main__":
    main()
