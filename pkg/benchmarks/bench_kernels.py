"""Compiled kernels against the pure-Python fallback.

Each backend runs in its own interpreter, because the backend is fixed at
import time (``VISCO_PURE_PYTHON=1`` selects the fallback)::

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --m 4 8 16 32 --repeat 7
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
import timeit


def _worker(ms, repeat):
    from viscogalerkin import kernels
    from viscogalerkin.basis import build_basis, random_coefficients
    from viscogalerkin.integrator import IntegratorConfig, run
    from viscogalerkin.rhs import GalerkinSystem
    from viscogalerkin.viscosity import ViscosityModel

    model = ViscosityModel("carreau", mu=1.0, alpha=1.0)
    out = {"backend": kernels.BACKEND, "rhs": {}, "run": {}}
    for m in ms:
        basis = build_basis(2, m)
        d = random_coefficients(basis, seed=1).d
        sys_ = GalerkinSystem(basis, model, 1e-4)
        number = max(1, int(2000 / m**2))
        best = min(timeit.repeat(lambda: sys_.nonlinear(d), number=number, repeat=repeat)) / number
        out["rhs"][m] = best
        cfg = IntegratorConfig(t_end=0.05, dt_init=1e-3, dt_max=1e-3, record_every=10**9, record_j=False)
        u0 = random_coefficients(basis, seed=1)
        t0 = time.perf_counter()
        run(u0, cfg, model, 1e-4)
        out["run"][m] = time.perf_counter() - t0
    print(json.dumps(out))


def _spawn(pure, ms, repeat):
    env = dict(os.environ)
    env.pop("VISCO_PURE_PYTHON", None)
    if pure:
        env["VISCO_PURE_PYTHON"] = "1"
    cmd = [sys.executable, __file__, "--worker", "--repeat", str(repeat), "--m", *map(str, ms)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", nargs="+", type=int, default=[4, 8, 16])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)
    if args.worker:
        _worker(args.m, args.repeat)
        return 0
    fast = _spawn(False, args.m, args.repeat)
    slow = _spawn(True, args.m, args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not built; both columns use the fallback")
    print(f"{'m':>4} {'rhs compiled':>14} {'rhs python':>12} {'speedup':>8}   {'run compiled':>13} {'run python':>11}")
    for m in args.m:
        k = str(m)
        a, b = fast["rhs"][k], slow["rhs"][k]
        print(f"{m:>4} {a * 1e6:>11.1f} us {b * 1e6:>9.1f} us {b / a:>7.2f}x   "
              f"{fast['run'][k]:>11.3f} s {slow['run'][k]:>9.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
