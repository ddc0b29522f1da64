#!/usr/bin/env python3
"""Benchmark the hot per-pipeline kernels: pure numpy vs the compiled core.

Times the per-order coefficient recursion (product/reciprocal update plus
interior stencil) and the characteristics interior sweep on a range of
grid sizes, then a full adaptive run through each backend. Run from a
checkout:

    python3 benchmarks/kernels.py [--repeat N]
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

_SRC = Path(__file__).resolve().parents[1] / "src"
if _SRC.is_dir() and str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from defsim.kernels import backends  # noqa: E402


def time_call(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_recursion(impl, npts, order, repeat):
    rng = np.random.default_rng(0)
    pi = rng.uniform(2e5, 4e5, size=(order + 1, npts))
    m = rng.normal(1.0, 0.3, size=(order + 1, npts))
    mm = np.zeros_like(m)
    rpi = np.zeros_like(pi)
    sign0 = np.sign(m[0])

    def run():
        for k in range(1, order + 1):
            impl.conv_order_update(m, pi, mm, rpi, k - 1)
            impl.pipe_interior_order(pi, m, mm, rpi, sign0, k, 123.4, 5.6e-4, 7.8)

    return time_call(run, repeat)


def bench_moc(impl, npts, repeat):
    rng = np.random.default_rng(1)
    pi_old = rng.uniform(2e5, 4e5, size=npts)
    m_old = rng.normal(1.0, 0.3, size=npts)
    pi_new = np.empty(npts)
    m_new = np.empty(npts)

    def run():
        impl.moc_interior_step(pi_old, m_old, pi_new, m_new, 1700.0, 1 / 1700.0, 0.9)

    return time_call(run, repeat)


def bench_full_run(backend_name):
    """End-to-end adaptive run on the bundled single-pipe case."""
    env = os.environ.get("DEFSIM_KERNELS")
    os.environ["DEFSIM_KERNELS"] = backend_name
    # force re-import with the requested backend
    for mod in [m for m in list(sys.modules) if m.startswith("defsim")]:
        del sys.modules[mod]
    from defsim import io, taylor_solver
    from defsim.fixtures import bundled_path

    system = io.load_network(bundled_path("single_pipe.network.json"))
    scn = io.load_scenario(bundled_path("single_pipe.scenario.json"))
    t0 = time.perf_counter()
    traj = taylor_solver.simulate(system, scn, target_dl_m=1000.0, order=5, sample_dt=60.0)
    wall = time.perf_counter() - t0
    if env is None:
        os.environ.pop("DEFSIM_KERNELS")
    else:
        os.environ["DEFSIM_KERNELS"] = env
    return wall, traj.provenance["windows"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)

    impls = backends()
    print(f"backends available: {', '.join(sorted(impls))}")
    print()
    header = f"{'kernel':<28}{'size':>8}" + "".join(f"{n:>14}" for n in sorted(impls))
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for npts in (64, 256, 1024, 8192):
        times = {n: bench_recursion(impl, npts, 5, args.repeat) for n, impl in impls.items()}
        row = f"{'order recursion (K=5)':<28}{npts:>8}" + "".join(
            f"{times[n] * 1e6:>12.1f}us" for n in sorted(impls)
        )
        if len(times) == 2:
            row += f"{times['pure'] / times['compiled']:>9.1f}x"
        print(row)
    for npts in (64, 256, 1024, 8192):
        times = {n: bench_moc(impl, npts, args.repeat) for n, impl in impls.items()}
        row = f"{'characteristics sweep':<28}{npts:>8}" + "".join(
            f"{times[n] * 1e6:>12.1f}us" for n in sorted(impls)
        )
        if len(times) == 2:
            row += f"{times['pure'] / times['compiled']:>9.1f}x"
        print(row)
    print()
    for name in sorted(impls):
        wall, windows = bench_full_run(name)
        print(f"full 3h single-pipe run [{name:>8}]: {wall:6.2f} s  ({windows} windows)")


if __name__ == "__main__":
    main()
