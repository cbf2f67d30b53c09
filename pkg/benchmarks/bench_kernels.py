"""Compare the numba and numpy kernel paths.

    python benchmarks/bench_kernels.py [--sizes 1000 100000] [--end-to-end]

Kernel timings are best-of-5 after JIT warm-up.  ``--end-to-end`` also runs
the FEM example (n_per_side=21, tol=1e-3) once per path in a fresh process,
selecting the path with ADAPTRIS_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from adaptris import _kernels
from adaptris.fem2d import build_mesh

E2E = (
    "import time; from adaptris import *; from adaptris import _kernels; _kernels.warmup(); "
    "m = make_model_fem(build_mesh(21)); t = time.perf_counter(); "
    "tr = adaptive_run(m, 1e-3, None, RunOptions(solver=SolverOptions(kkt_tol=1e-6, newton_tol=1e-11))); "
    "print(time.perf_counter() - t, tr.n_steps)"
)


def best(fn, repeat=5):
    number = max(1, int(0.05 / max(min(timeit.repeat(fn, number=1, repeat=2)), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(n):
    rng = np.random.default_rng(0)
    x = rng.normal(size=n)
    thr = np.abs(rng.normal(size=n))
    batch = rng.normal(size=(16, max(n // 16, 1)))
    w = np.ones(batch.shape[1])
    side = max(int(np.sqrt(n)), 3)
    mesh = build_mesh(side)
    return {
        "soft_threshold": lambda k: k.soft_threshold(x, thr),
        "box_excess_sq": lambda k: k.box_excess_sq(batch, w, w),
        "double_well_grad": lambda k: k.double_well_grad(x, 48.0),
        "double_well_hess": lambda k: k.double_well_hess(x, 48.0),
        "p1_local_stiffness": lambda k: k.p1_local_stiffness(mesh.coords, mesh.triangles),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 100_000])
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        sys.exit("numba is not importable; nothing to compare")
    _kernels.warmup()
    nb, npy = _kernels.numba_impl, _kernels.numpy_impl
    print(f"{'kernel':<20} {'n':>8} {'numpy [us]':>12} {'numba [us]':>12} {'speedup':>8}")
    for n in args.sizes:
        for name, call in kernel_cases(n).items():
            call(nb)
            t_np = best(lambda: call(npy)) * 1e6
            t_nb = best(lambda: call(nb)) * 1e6
            print(f"{name:<20} {n:>8} {t_np:>12.1f} {t_nb:>12.1f} {t_np / t_nb:>8.2f}")
    if args.end_to_end:
        print("\nend-to-end FEM run (n_per_side=21, tol=1e-3)")
        for flag, label in (("1", "numpy"), ("0", "numba")):
            env = {**os.environ, "ADAPTRIS_DISABLE_NUMBA": flag}
            out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
            secs, steps = out.stdout.split()
            print(f"  {label:<6} {float(secs):8.2f} s  ({steps} steps)")


if __name__ == "__main__":
    main()
