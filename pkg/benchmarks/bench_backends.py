#!/usr/bin/env python3
"""Benchmark the numba kernel backend against the pure-numpy fallback.

Times the three hot per-iteration kernels (block evaluation, adjoint,
Schur-contribution gather) on a reference-scale edge-wise relaxation, then
a full end-to-end solve under each backend.

Usage:
    python benchmarks/bench_backends.py [--sensors N] [--trials K]

Backend selection inside the solver honors NLOSLOC_BACKEND; this script
swaps backends in-process instead so one run covers both.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from nlosloc.builders import CoefficientMode, build_esdp
from nlosloc.geometry import NoiseBoundPolicy, derive_bounds
from nlosloc.simulate import NoiseModel, measure, paper_scenario
from nlosloc.solver import backend
from nlosloc.solver.compile import compile_problem
from nlosloc.solver.ipm import SolverSettings, _nt_scaling, _Workspace, solve
from nlosloc.solver import kernels_numpy

try:
    from nlosloc.solver import kernels_numba
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def build_reference_problem(n_sensors):
    scenario = paper_scenario(seed=1, n_sensors=n_sensors)
    ms = measure(scenario, NoiseModel(), seed=2)
    bounds = derive_bounds(ms, scenario.anchor_positions, NoiseBoundPolicy(), 0.01)
    return build_esdp(bounds, scenario.anchor_positions, n_sensors, CoefficientMode.PAPER_LITERAL)


def kernel_inputs(problem):
    comp = compile_problem(problem)
    ws = _Workspace(comp)
    s_list, z_list = [], []
    for g in comp.groups:
        eta = 1.0 + np.abs(g.f0_hat).reshape(g.count, -1).max(axis=1)
        eye = np.broadcast_to(np.eye(g.rdim), (g.count, g.rdim, g.rdim))
        s_list.append(eta[:, None, None] * eye)
        z_list.append(np.ones((g.count, 1, 1)) * eye)
    nt = [_nt_scaling(s, z) for s, z in zip(s_list, z_list)]
    b_hat = [t[1].transpose(0, 2, 1) @ t[1] for t in nt]
    b_lift = ws.lift_flat(b_hat)
    x = np.linspace(-1.0, 1.0, comp.nvars)
    return comp, ws, b_lift, x


def time_kernel(fn, repeats=20):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sensors", type=int, default=80)
    parser.add_argument("--trials", type=int, default=20, help="timing repeats per kernel")
    args = parser.parse_args()

    print(f"building reference edge-wise problem ({args.sensors} sensors)...")
    problem = build_reference_problem(args.sensors)
    comp, ws, b_lift, x = kernel_inputs(problem)
    z_flat = np.abs(b_lift) + 1.0
    print(f"  vars={comp.nvars} blocks={sum(g.count for g in comp.groups)} "
          f"schur-pairs={comp.q_coef.size}")

    backends = [("numpy", kernels_numpy)]
    if HAS_NUMBA:
        backends.append(("numba", kernels_numba))
    else:
        print("numba not installed; benchmarking the fallback only")

    rows = []
    for name, mod in backends:
        # warm up the JIT before timing
        mod.eval_affine(comp.f0_flat, comp.ev_off, comp.ev_var, comp.ev_coef, x)
        mod.adjoint(z_flat, comp.ad_off, comp.ad_var, comp.ad_coef, comp.nvars)
        mod.schur_vals(b_lift, comp.q_i1, comp.q_i2, comp.q_i3, comp.q_i4, comp.q_coef)
        rows.append((
            name,
            time_kernel(lambda: mod.eval_affine(comp.f0_flat, comp.ev_off, comp.ev_var,
                                                comp.ev_coef, x), args.trials),
            time_kernel(lambda: mod.adjoint(z_flat, comp.ad_off, comp.ad_var,
                                            comp.ad_coef, comp.nvars), args.trials),
            time_kernel(lambda: mod.schur_vals(b_lift, comp.q_i1, comp.q_i2, comp.q_i3,
                                               comp.q_i4, comp.q_coef), args.trials),
        ))

    print(f"\n{'backend':<8} {'eval (ms)':>10} {'adjoint (ms)':>13} {'schur (ms)':>11}")
    base = rows[0]
    for name, ev, ad, sc in rows:
        print(f"{name:<8} {ev * 1e3:>10.3f} {ad * 1e3:>13.3f} {sc * 1e3:>11.3f}")
    if len(rows) == 2:
        print(f"{'speedup':<8} {base[1] / rows[1][1]:>9.2f}x {base[2] / rows[1][2]:>12.2f}x "
              f"{base[3] / rows[1][3]:>10.2f}x")

    print("\nend-to-end solve:")
    results = {}
    for name, mod in backends:
        backend._kernels, backend._name = mod, name
        t0 = time.perf_counter()
        sol = solve(problem, SolverSettings())
        elapsed = time.perf_counter() - t0
        results[name] = sol
        print(f"  {name:<6} {elapsed:7.2f}s  status={sol.status} iters={sol.iterations} "
              f"obj={sol.objective_value:.6e}")
    if len(results) == 2:
        diff = abs(results["numpy"].objective_value - results["numba"].objective_value)
        print(f"  |objective difference| = {diff:.3e}")


if __name__ == "__main__":
    main()
