"""Benchmark the hot kernels: numba-compiled vs pure-numpy fallback.

Usage:  python benchmarks/bench_kernels.py [--quick]

The script times each kernel twice: in-process with numba enabled, and in
a subprocess running with GEOLAB_DISABLE_NUMBA=1 so the whole call tree
takes the pure-python fallback path.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(quick):
    from geolab import accel
    from geolab import integrate as it
    from geolab.flow import PhaseState, integrate
    from geolab.kernels import tape_vgh, project_point
    from geolab.surface import ellipsoid

    n_tape = 200 if quick else 2000
    t_flow = 2.0 if quick else 20.0
    el = ellipsoid([2.0, np.sqrt(2.0), 1.0])
    pk = el.pack()
    x = np.array([1.2, 0.7, 0.55])
    g = np.empty(3)
    H = np.empty((3, 3))
    u0 = np.array([0.0, 0.6, 0.8])
    s0 = PhaseState([2.0, 0.0, 0.0], u0 / np.linalg.norm(u0))

    def bench(fn, min_time=0.05):
        fn()  # warm up / compile
        n = 1
        while True:
            t0 = time.perf_counter()
            for _ in range(n):
                fn()
            dt = time.perf_counter() - t0
            if dt >= min_time or n >= 4096:
                return dt / n
            n *= 4

    def tape():
        for _ in range(n_tape):
            tape_vgh(pk.ops, pk.a1, pk.a2, pk.cv, x, g, H)

    def proj():
        for _ in range(n_tape):
            xi = np.array([2.2, 0.3, 0.4])
            project_point(pk, xi, 1e-12, 50)

    def flow():
        integrate(el, s0, t_flow, store=False)

    return {
        "numba": accel.USING_NUMBA,
        f"tape value+grad+hess x{n_tape}": bench(tape) * 1e3,
        f"surface projection x{n_tape}": bench(proj) * 1e3,
        f"geodesic integration t={t_flow}": bench(flow, min_time=0.0) * 1e3,
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        print(json.dumps(measure(args.quick)))
        return
    here = measure(args.quick)
    env = dict(os.environ, GEOLAB_DISABLE_NUMBA="1")
    cmd = [sys.executable, __file__, "--worker"]
    if args.quick:
        cmd.append("--quick")
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    there = json.loads(out.stdout.strip().splitlines()[-1])
    print(f"{'kernel':<38s} {'numba (ms)':>12s} {'python (ms)':>12s} {'speedup':>9s}")
    for key, t_jit in here.items():
        if key == "numba":
            continue
        t_py = there[key]
        print(f"{key:<38s} {t_jit:>12.3f} {t_py:>12.3f} {t_py / t_jit:>8.1f}x")


if __name__ == "__main__":
    main()
