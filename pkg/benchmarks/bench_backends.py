"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_backends.py [--repeat 20] [--scale 1.0]

Prints one row per kernel: median wall time of each flavour and the ratio.
The numba flavour is called once before timing so JIT compilation is excluded.
A final row times a short end-to-end MCP run under each ``TITAN_BACKEND``
in a subprocess.
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from titan import kernels


def _median_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(scale, seed=0):
    rng = np.random.default_rng(seed)
    m, n, r = int(2000 * scale), int(1500 * scale), 8
    nnz = int(0.05 * m * n)
    keys = np.sort(rng.choice(m * n, size=nnz, replace=False))
    rows, cols = (k.astype(np.int64) for k in np.divmod(keys, n))
    vals = rng.standard_normal(nnz)
    U = rng.standard_normal((m, r))
    V = rng.standard_normal((r, n))
    X = rng.random((int(500 * scale), 50))
    v = rng.uniform(-3, 3, int(200_000 * scale))
    gam = np.full_like(v, 0.3)
    theta = np.full_like(v, 5.0)
    return [
        ("mask_residual", (rows, cols, vals, U, V)),
        ("mask_left_product", (rows, cols, vals, V, m)),
        ("mask_right_product", (rows, cols, vals, U, n)),
        ("hard_threshold_columns", (X, 3)),
        ("prox_exponential", (v, gam, theta)),
    ]


_END_TO_END = """
import time
from titan.apps.synth import synthesize_instances
from titan.apps.mcp import mcp_run
from titan.solver import SolverOptions
inst = synthesize_instances("mcp", (500, 300), 8, noise=0.1, density=0.3, seed=0)
opts = SolverOptions(max_iters=5, stop_tol=None, monitor="off")
mcp_run(inst, opts, variant="titan_extra")
t0 = time.perf_counter()
mcp_run(inst, SolverOptions(max_iters=100, stop_tol=None, monitor="off"), variant="titan_extra")
print(time.perf_counter() - t0)
"""


def end_to_end(backend):
    env = dict(os.environ, TITAN_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", _END_TO_END], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'numpy/numba':>13}")
    for name, call_args in kernel_cases(args.scale):
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        a = fast(*call_args)
        b = slow(*call_args)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        tf = _median_time(fast, call_args, args.repeat)
        ts = _median_time(slow, call_args, args.repeat)
        print(f"{name:<24}{1e3 * tf:>12.3f}{1e3 * ts:>12.3f}{ts / tf:>13.2f}")
    if not args.skip_end_to_end:
        tf, ts = end_to_end("numba"), end_to_end("numpy")
        print(f"{'mcp 100 iterations':<24}{1e3 * tf:>12.1f}{1e3 * ts:>12.1f}{ts / tf:>13.2f}")


if __name__ == "__main__":
    main()
