"""Compiled vs numpy network kernels, plus an end-to-end OPF solve per backend.

    python3 benchmarks/bench_kernels.py [--case case14] [--repeat 200]

The end-to-end numbers run in a subprocess so SELMOPF_PURE_PYTHON can pick
the backend at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from selmopf.case_io import load_case
from selmopf.grid import build_admittance
from selmopf.kernels import backends


def kernel_args(case, rng):
    y = build_admittance(case)
    g, b = np.ascontiguousarray(y.g), np.ascontiguousarray(y.b)
    n = case.n_bus
    vm = rng.uniform(0.95, 1.05, n)
    va = rng.uniform(-0.2, 0.2, n)
    lp, lq = rng.normal(size=n), rng.normal(size=n)
    return g, b, vm, va, lp, lq


def bench_kernels(case, repeat):
    rng = np.random.default_rng(0)
    g, b, vm, va, lp, lq = kernel_args(case, rng)
    calls = {
        "injections": lambda m: m.injections(g, b, vm, va),
        "injection_jacobian": lambda m: m.injection_jacobian(g, b, vm, va),
        "injection_hessian": lambda m: m.injection_hessian(g, b, vm, va, lp, lq),
    }
    rows = []
    mods = backends()
    for name, call in calls.items():
        times = {}
        for backend, mod in mods.items():
            t = timeit.repeat(lambda: call(mod), number=repeat, repeat=3)
            times[backend] = min(t) / repeat
        rows.append((name, times))
    return rows


SOLVE = """
import json, timeit
from selmopf.acopf import solve_acopf
from selmopf.case_io import load_case
from selmopf.kernels import BACKEND
case = load_case({case!r})
solve_acopf(case)
t = min(timeit.repeat(lambda: solve_acopf(case), number={n}, repeat=3)) / {n}
print(json.dumps({{"backend": BACKEND, "seconds": t}}))
"""


def bench_solve(case_name, n):
    out = {}
    for pure in ("0", "1"):
        env = {**os.environ, "SELMOPF_PURE_PYTHON": pure}
        res = subprocess.run([sys.executable, "-c", SOLVE.format(case=case_name, n=n)],
                             env=env, capture_output=True, text=True, check=True)
        d = json.loads(res.stdout)
        out[d["backend"]] = d["seconds"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="case14")
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--solves", type=int, default=20)
    args = ap.parse_args()
    case = load_case(args.case)

    print(f"{args.case}: {case.n_bus} buses, {case.n_branch} branches")
    print(f"{'kernel':<22}{'python us':>12}{'cython us':>12}{'speed-up':>10}")
    for name, t in bench_kernels(case, args.repeat):
        py, cy = t["python"] * 1e6, t.get("cython", np.nan) * 1e6
        print(f"{name:<22}{py:>12.1f}{cy:>12.1f}{py / cy:>10.1f}")
    t = bench_solve(args.case, args.solves)
    py, cy = t["python"] * 1e3, t.get("cython", np.nan) * 1e3
    print(f"{'acopf solve (ms)':<22}{py:>12.2f}{cy:>12.2f}{py / cy:>10.1f}")


if __name__ == "__main__":
    main()
