"""Compiled vs pure-Python kernels.

Times each kernel with both backends on identical inputs, checks that the
outputs agree, and times a short DSM-CBF simulation end to end in a
subprocess per backend (the backend is fixed at import time).

    python benchmarks/bench_kernels.py [--repeat 5] [--json results.json]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dsmcbf._backend import get_kernels

PARAMS = (1.0, 0.5, 0.7, 9.81)


def _qp_case():
    # a DSM-CBF-sized problem: 2 variables, 4 margin rows plus the input box
    A = [[0.91, 0.4], [-0.91, -0.2], [0.05, 0.9], [-1.6, -0.04], [1.0, 0.0], [-1.0, 0.0]]
    b = [1.3, 2.1, 7.4, 0.6, 4.0, 4.0]
    H = [[2.0, 0.0], [0.0, 0.02]]
    f = [-20.0, -0.018]
    return H, f, A, b


def cases(k):
    s = (0.3, 0.2, 0.5, -0.4)
    H, f, A, b = _qp_case()
    ok, z0 = k.ldp(A, [-x for x in b])
    axes = [np.linspace(-2, 2, 25), np.linspace(-1.5, 1.5, 25), np.linspace(-3, 3, 25),
            np.linspace(-4, 4, 25)]
    return {
        "crane_rhs": (lambda: k.crane_rhs(s, 1.0, *PARAMS), 20000),
        "crane_rk4": (lambda: k.crane_rk4(s, 1.0, 1e-3, *PARAMS), 10000),
        "crane_rk4_pd": (lambda: k.crane_rk4_pd(s, 1.0, 1.0, 0.1, 1e-3, *PARAMS), 10000),
        "lyap_grad": (lambda: k.lyap_grad(s, 0.1, *PARAMS, 1.0), 20000),
        "ldp": (lambda: k.ldp(A, [-x for x in b]), 2000),
        "qp_active_set": (lambda: k.qp_active_set(H, f, A, b, z0, 1e-8, 200), 2000),
        "kkt_solve": (lambda: k.kkt_solve(H, f, A, b, [3]), 5000),
        "grid_scan_25^4": (lambda: k.grid_scan(4, 1.1, 0.1, 1.0, 0.1, *PARAMS, *axes), 2),
    }


def bench_kernels(repeat):
    py, c = get_kernels("python"), get_kernels("c")
    rows = []
    cp, cc = cases(py), cases(c)
    for name in cp:
        fp, n = cp[name]
        fc, _ = cc[name]
        ref, got = fp(), fc()
        same = np.allclose(np.asarray(ref[1] if name == "ldp" else ref[0] if name in
                                      ("qp_active_set", "kkt_solve") else ref, dtype=float),
                           np.asarray(got[1] if name == "ldp" else got[0] if name in
                                      ("qp_active_set", "kkt_solve") else got, dtype=float),
                           rtol=1e-12, atol=1e-12)
        tp = min(timeit.repeat(fp, number=n, repeat=repeat)) / n
        tc = min(timeit.repeat(fc, number=n, repeat=repeat)) / n
        rows.append({"kernel": name, "python_us": tp * 1e6, "c_us": tc * 1e6,
                     "speedup": tp / tc, "agree": bool(same)})
    return rows


SIM_SNIPPET = """
import time
from dsmcbf._backend import BACKEND
from dsmcbf.sim import run_scenario, scenario_b
cfg = scenario_b(horizon={horizon})
t = time.perf_counter()
log = run_scenario(cfg)
print(BACKEND, time.perf_counter() - t, repr(float(log.x[-1, 0])))
"""


def bench_simulation(horizon):
    out = {}
    for backend in ("python", "c"):
        env = dict(os.environ, DSMCBF_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(horizon=horizon)],
                             capture_output=True, text=True, env=env, check=True)
        name, secs, xf = res.stdout.split()
        out[name] = {"seconds": float(secs), "x_final": float(xf)}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--horizon", type=float, default=2.0, help="simulated seconds (DSM-CBF, scenario B)")
    ap.add_argument("--json", default=None, help="write results to this file")
    args = ap.parse_args()

    rows = bench_kernels(args.repeat)
    print(f"{'kernel':16s} {'python [us]':>12s} {'compiled [us]':>14s} {'speedup':>8s}  agree")
    for r in rows:
        print(f"{r['kernel']:16s} {r['python_us']:12.2f} {r['c_us']:14.2f} "
              f"{r['speedup']:8.1f}  {r['agree']}")
    sim = bench_simulation(args.horizon)
    print(f"\nDSM-CBF simulation, scenario B, {args.horizon:g} s simulated:")
    for name, r in sim.items():
        print(f"  {name:6s} {r['seconds']:.3f} s wall   x(T) = {r['x_final']!r}")
    print(f"  end-to-end speedup {sim['python']['seconds'] / sim['c']['seconds']:.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "simulation": sim}, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
