"""Time the numba and numpy paths of the two hot kernels side by side.

    python benchmarks/bench_kernels.py [--repeat N]

Both paths are called explicitly, so ``OPTISTATE_NO_NUMBA`` does not matter
here. The first numba call (compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from optistate import allocator
from optistate._accel import HAS_NUMBA
from optistate.allocator import AllocatorParams, solve_allocation, wrench_map
from optistate.sim import render
from optistate.sim.render import Camera, render_depth
from optistate.sim.terrain import Terrain


def allocation_problem(seed=0):
    rng = np.random.default_rng(seed)
    p_b = np.array([[0.19, 0.11, -0.3], [0.19, -0.11, -0.3], [-0.19, 0.11, -0.3], [-0.19, -0.11, -0.3]])
    p_b += rng.normal(scale=0.02, size=p_b.shape)
    contact = np.array([True, False, False, True])
    M = wrench_map(p_b, contact)
    b = np.concatenate([rng.normal(scale=0.5, size=3), [0.0, 0.0, 12.0 * 9.81]])
    return M, b, contact


def best_of(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not installed; only the numpy path can be timed")

    M, b, contact = allocation_problem()
    params = AllocatorParams()
    terrain = Terrain.preset("rough")
    cam = Camera()
    x = np.zeros(12)
    x[5] = 0.3

    cases = {
        "pgd allocation (500 iters)": (
            lambda k: (lambda: solve_allocation(M, b, contact, params, kernel=k)),
            allocator._pgd_jit, allocator._pgd_np, 20),
        f"depth ray cast ({cam.height}x{cam.width})": (
            lambda k: (lambda: render_depth(terrain, x, cam, kernel=k)),
            render._cast_jit, render._cast_np, 3),
    }
    print(f"{'kernel':<30}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (make, jit_k, np_k, number) in cases.items():
        t_np = best_of(make(np_k), number, args.repeat)
        if HAS_NUMBA:
            make(jit_k)()  # compile
            t_jit = best_of(make(jit_k), number, args.repeat)
            print(f"{name:<30}{t_jit * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_jit:>9.1f}x")
        else:
            print(f"{name:<30}{'-':>12}{t_np * 1e3:>12.3f}{'-':>10}")


if __name__ == "__main__":
    main()
