#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-numpy fallback.

Times the two hot loops (leapfrog wave update, eikonal Gauss-Seidel sweep)
on production-sized grids and checks that both backends produce the same
fields.  Run after an editable install:

    python benchmarks/kernel_benchmark.py [--reps N] [--size NX]
"""

import argparse
import time

import numpy as np

from convexwave._kernels import _fallback

try:
    from convexwave._kernels import _core
except ImportError:
    _core = None


def _time(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_wave(impl, shape, reps):
    rng = np.random.default_rng(0)
    u_prev = rng.standard_normal(shape)
    u_curr = rng.standard_normal(shape)
    u_next = np.zeros(shape)
    alpha = np.full(shape, 0.2)
    dt = _time(lambda: impl.wave_step(u_next, u_curr, u_prev, alpha), reps)
    return dt, u_next


def bench_eikonal(impl, shape, reps):
    rng = np.random.default_rng(1)
    h = 1.0 / (shape[0] - 1)
    rhs = np.full(shape, h) * (1.0 + 0.2 * rng.random(shape))
    frozen = np.zeros(shape, dtype=np.uint8)
    frozen[shape[0] // 2, shape[1] // 2, shape[2] // 2] = 1
    tau0 = np.full(shape, 1e30)
    tau0[shape[0] // 2, shape[1] // 2, shape[2] // 2] = 0.0

    def run():
        tau = tau0.copy()
        for ordering in range(8):
            impl.eikonal_sweep(tau, rhs, frozen, ordering)
        run.tau = tau

    dt = _time(run, reps)
    return dt, run.tau


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=3, help="repetitions, best-of")
    ap.add_argument("--wave-size", type=int, default=209,
                    help="wave grid nodes per axis")
    ap.add_argument("--eik-size", type=int, default=97,
                    help="eikonal grid nodes per axis")
    args = ap.parse_args()

    if _core is None:
        print("compiled backend not built; benchmarking fallback only")

    wshape = (args.wave_size,) * 3
    eshape = (args.eik_size,) * 3
    rows = []

    t_py, u_py = bench_wave(_fallback, wshape, args.reps)
    rows.append(("wave_step", wshape, "python", t_py, ""))
    if _core is not None:
        t_c, u_c = bench_wave(_core, wshape, args.reps)
        err = float(np.max(np.abs(u_c - u_py)))
        rows.append(("wave_step", wshape, "compiled", t_c,
                     f"x{t_py / t_c:.1f}  maxdiff {err:.1e}"))

    t_py, tau_py = bench_eikonal(_fallback, eshape, args.reps)
    rows.append(("eikonal 8-sweep", eshape, "python", t_py, ""))
    if _core is not None:
        t_c, tau_c = bench_eikonal(_core, eshape, args.reps)
        err = float(np.max(np.abs(tau_c - tau_py)))
        rows.append(("eikonal 8-sweep", eshape, "compiled", t_c,
                     f"x{t_py / t_c:.1f}  maxdiff {err:.1e}"))

    print(f"{'kernel':<16} {'grid':<16} {'backend':<9} {'best s':>9}  notes")
    for name, shape, backend, dt, note in rows:
        dims = "x".join(str(n) for n in shape)
        print(f"{name:<16} {dims:<16} {backend:<9} {dt:9.4f}  {note}")


if __name__ == "__main__":
    main()
