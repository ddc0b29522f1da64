"""Acceptance suite: ten end-to-end criteria, each printed as one
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.

The desk-scale numbers here are regenerated against the in-repo
characteristics reference on the bundled fixtures (documented pipe
defaults D = 0.5 m, friction factor 0.01, sound speed 340 m/s); the
published tables the orderings mirror are not reproducible in absolute
terms without the original pipe parameters and network datasets.
"""

import time

import numpy as np
import pytest

from defsim import baselines as bl
from defsim import discretization as disc
from defsim import linalg
from defsim import scenario as sc
from defsim import series
from defsim import taylor_solver as ts
from defsim.closure import residual_report

from oracles import monolithic_order_solve
from systems import (
    coupled_demo_scenario,
    coupled_demo_system,
    loop_triangle_scenario,
    loop_triangle_system,
    single_pipe_scenario,
    single_pipe_steady_scenario,
    single_pipe_system,
)
from test_taylor_solver import one_sided_boundary_matrix

DX = 1000.0
SAMPLE_DT = 30.0


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def rmse(a, b, col):
    return float(np.sqrt(np.mean((a.column(col) - b.column(col)) ** 2)))


@pytest.fixture(scope="module")
def single_pipe_runs():
    system = single_pipe_system()
    scn = single_pipe_scenario()
    t0 = time.perf_counter()
    moc = bl.moc_solve(system, scn, target_dl_m=DX, sample_dt=SAMPLE_DT)
    moc_wall = time.perf_counter() - t0
    t0 = time.perf_counter()
    dt_run = ts.simulate(
        system, scn, target_dl_m=DX, order=5, sample_dt=SAMPLE_DT, window_history=True
    )
    dt_wall = time.perf_counter() - t0
    return {
        "system": system,
        "scenario": scn,
        "moc": moc,
        "dt": dt_run,
        "dt_wall": dt_wall,
        "moc_wall": moc_wall,
    }


def test_criterion_1_single_pipe_cross_validation(single_pipe_runs):
    """DT at bundled defaults vs the characteristics reference over 3 h."""
    r = single_pipe_runs
    rm = rmse(r["dt"], r["moc"], "pipe.p1.m.0")
    rp = rmse(r["dt"], r["moc"], "pipe.p1.pi.50")
    ok = rm <= 1e-3 and rp <= 0.5e3 and r["dt_wall"] <= 10.0
    report(
        1,
        ok,
        f"inlet flow RMSE {rm:.3e} kg/s (<=1e-3), outlet pressure RMSE "
        f"{rp:.3e} Pa (<=500), wall {r['dt_wall']:.2f} s (<=10)",
    )


def test_criterion_2_fixed_step_ordering(single_pipe_runs):
    """Accuracy ordering against implicit Euler at 180 s and 9 s steps."""
    r = single_pipe_runs
    ie180 = bl.fdm_solve(
        r["system"], r["scenario"], scheme="implicit_euler", target_dl_m=DX,
        dt_s=180.0, sample_dt=SAMPLE_DT,
    )
    ie9 = bl.fdm_solve(
        r["system"], r["scenario"], scheme="implicit_euler", target_dl_m=DX,
        dt_s=9.0, sample_dt=SAMPLE_DT,
    )
    r_dt = rmse(r["dt"], r["moc"], "pipe.p1.m.0")
    r180 = rmse(ie180, r["moc"], "pipe.p1.m.0")
    r9 = rmse(ie9, r["moc"], "pipe.p1.m.0")
    ok = (r180 >= 10.0 * r_dt) and (r9 <= 5.0 * r_dt) and (r180 > r9 > r_dt)
    report(
        2,
        ok,
        f"RMSE ordering ieuler@180s {r180:.3e} >= 10x dt {r_dt:.3e} "
        f"(ratio {r180 / r_dt:.1f}); ieuler@9s {r9:.3e} within 5x "
        f"(ratio {r9 / r_dt:.2f})",
    )


def test_criterion_3_block_vs_monolithic():
    """Staged per-order solves match a dense one-shot solve over 20 windows."""
    system = coupled_demo_system()
    scn = coupled_demo_scenario()
    bound = scn.bind(system)
    grids = disc.make_grids(system, 2000.0)
    layout = disc.build_layout(system, grids)
    blocks = ts.assemble_blocks(system, grids, layout, 5)
    traj = ts.simulate(system, scn, target_dl_m=2000.0, order=5, sample_dt=180.0)
    work = ts.WindowWorkspace(blocks)
    worst = 0.0
    n_windows = 0
    for i, t0 in enumerate(traj.times[:-1]):
        if n_windows >= 20:
            break
        t0 = float(t0) + 7.0  # inside a window, away from breakpoints
        work.coeffs[0] = traj.values[i]
        work.coeffs[0] = ts.restart_algebraic(system, grids, layout, bound,
                                              work.coeffs[0], t0)
        ts.run_window_recursion(blocks, work, bound, t0)
        for k in range(1, 6):
            mono = monolithic_order_solve(system, grids, layout, bound, work.coeffs, t0, k)
            scale = np.max(np.abs(mono)) + 1e-30
            worst = max(worst, float(np.max(np.abs(work.coeffs[k] - mono))) / scale)
        n_windows += 1
    ok = worst <= 1e-10 and n_windows == 20
    report(3, ok, f"max staged-vs-monolithic deviation {worst:.2e} (<=1e-10) over "
                  f"{n_windows} windows, orders 1..5")


def test_criterion_4_spatial_order():
    """Observed spatial convergence on the smooth pre-disturbance portion."""
    system = single_pipe_system()
    scn = single_pipe_scenario()
    tight = ts.WindowControlConfig(
        atol_pressure=1e-3, atol_flow=1e-6, atol_voltage=1e-10, rtol=1e-6
    )
    moc_ref = bl.moc_solve(system, scn, target_dl_m=500.0, sample_dt=60.0)
    pi_ref = moc_ref.column("pipe.p1.pi.100")
    sel = (moc_ref.times >= 1800.0) & (moc_ref.times <= 5400.0)
    errs = []
    for dl, n_out in ((2000.0, 25), (1000.0, 50), (500.0, 100)):
        d = ts.simulate(system, scn, target_dl_m=dl, order=5, cfg=tight, sample_dt=60.0)
        errs.append(
            float(np.sqrt(np.mean((d.column(f"pipe.p1.pi.{n_out}")[sel] - pi_ref[sel]) ** 2)))
        )
    slope = float(np.log2(errs[0] / errs[2]) / 2.0)
    ok = 1.7 <= slope <= 2.3
    report(4, ok, f"outlet-pressure error {errs[0]:.3e}/{errs[1]:.3e}/{errs[2]:.3e} Pa "
                  f"at dl=2000/1000/500 m, observed order {slope:.2f} (in [1.7, 2.3])")


def test_criterion_5_loop_regularity_regression():
    """Central stencil + end-point extrapolation factorizes on loops; the
    one-sided variant hits a singular pivot."""
    system = loop_triangle_system()
    grids = disc.make_grids(system, 2000.0)
    layout = disc.build_layout(system, grids)
    blocks = ts.assemble_blocks(system, grids, layout, 5)
    one_sided = linalg.lu_factor(one_sided_boundary_matrix(system, layout))
    ok = (not blocks.w22_factor.singular) and one_sided.singular
    report(5, ok, f"shipped assembly regular: {not blocks.w22_factor.singular}; "
                  f"one-sided variant singular: {one_sided.singular} "
                  f"(pivot {one_sided.pivot_index})")


def test_criterion_6_steady_state_preservation():
    """Constant boundaries: 1 h drift and the higher-order coefficients.

    Run at tight tolerances; the controller's error budget bounds the
    trajectory noise, so the drift criterion is a property of the scheme
    only when the budget is below the drift bound.
    """
    system = single_pipe_system()
    scn = single_pipe_steady_scenario()
    cfg = ts.WindowControlConfig(
        atol_pressure=1e-3, atol_flow=1e-7, atol_voltage=1e-10, rtol=1e-7
    )
    traj = ts.simulate(system, scn, target_dl_m=DX, order=5, cfg=cfg, sample_dt=600.0)
    drift = max(
        float(np.max(np.abs(traj.column(n) - traj.column(n)[0])))
        / max(abs(traj.column(n)[0]), 1e-3)
        for n in traj.columns
    )
    bound = scn.bind(system)
    grids = disc.make_grids(system, DX)
    layout = disc.build_layout(system, grids)
    state = sc.steady_state_init(system, grids, bound)
    blocks = ts.assemble_blocks(system, grids, layout, 5)
    ws = ts.simulate_window(
        system, grids, layout, blocks, bound, state.to_layout_vector(layout), 0.0, 1.0
    )
    scale = np.maximum(np.abs(ws.coeffs[0]), 1e-6)
    coeff_rel = max(float(np.max(np.abs(ws.coeffs[k]) / scale)) for k in range(1, 6))
    ok = drift <= 1e-6 and coeff_rel <= 1e-9
    report(6, ok, f"max relative drift {drift:.2e} (<=1e-6); max order>=1 "
                  f"coefficient {coeff_rel:.2e} relative (<=1e-9)")


def test_criterion_7_conservation_on_trajectories():
    """Nodal balance, pressure consistency, power flow and coupling residuals
    on the sampled trajectories of every bundled scenario."""
    cases = [
        (single_pipe_system(), single_pipe_scenario(), 1000.0),
        (coupled_demo_system(), coupled_demo_scenario(), 1000.0),
        (loop_triangle_system(), loop_triangle_scenario(), 2000.0),
    ]
    worst = {}
    for system, scn, dl in cases:
        bound = scn.bind(system)
        grids = disc.make_grids(system, dl)
        layout = disc.build_layout(system, grids)
        traj = ts.simulate(system, scn, target_dl_m=dl, order=5, sample_dt=60.0)
        for i, t in enumerate(traj.times):
            rep = residual_report(
                system, layout, traj.values[i], bound.values_at(min(float(t), bound.horizon_s))
            )
            for k, v in rep.items():
                worst[k] = max(worst.get(k, 0.0), v)
    ok = all(v <= 1e-6 for v in worst.values())
    report(7, ok, "worst residuals over all bundled scenarios: "
                  + ", ".join(f"{k}={v:.2e}" for k, v in sorted(worst.items()))
                  + " (all <=1e-6)")


def test_criterion_8_window_controller(single_pipe_runs):
    """Windows shrink after the 0.5 h disturbance; accepted error estimates
    stay at most one; controller growth/shrink clamps hold.

    Run at a tight tolerance so the disturbance truncation error, not the
    tolerance budget, limits the window; the window immediately before the
    breakpoint is excluded from the pre-step statistic because it is
    clamped to land on the breakpoint.
    """
    r = single_pipe_runs
    cfg = ts.WindowControlConfig(
        atol_pressure=1e-3, atol_flow=1e-6, atol_voltage=1e-10, rtol=1e-6
    )
    d = ts.simulate(
        r["system"], r["scenario"], target_dl_m=DX, order=5, cfg=cfg,
        sample_dt=600.0, window_history=True,
    )
    log = d.provenance["window_log"]
    pre_free = [dt for (t, dt, err, rej) in log if t + dt < 1800.0 - 1e-6]
    post = [dt for (t, dt, err, rej) in log if 1800.0 <= t < 2400.0]
    shrink_ok = max(post) < max(pre_free)
    err_ok = all(err <= 1.0 + 1e-12 for (_, _, err, _) in log)
    fuzz = 1e-9
    clamp_ok = True
    breaks = set(r["scenario"].gas_load["B"].breakpoints) | {r["scenario"].horizon_s}
    for (t0, dt0, _, _), (t1, dt1, _, rej1) in zip(log, log[1:]):
        ratio = dt1 / dt0
        if ratio > cfg.fac_max * (1 + fuzz):
            clamp_ok = False
        lower = cfg.fac_min ** (1 + rej1) * (1 - fuzz)
        capped = any(abs((t1 + dt1) - b) <= 1e-6 * max(1.0, b) for b in breaks) or dt1 >= cfg.dt_max * (1 - fuzz)
        if ratio < lower and not capped:
            clamp_ok = False
    ok = shrink_ok and err_ok and clamp_ok
    report(
        8,
        ok,
        f"largest free pre-step window {max(pre_free):.2f} s -> largest post-step "
        f"{max(post):.2f} s (shrink: {shrink_ok}); accepted err <= 1: {err_ok}; "
        f"clamps held: {clamp_ok}",
    )


def test_criterion_9_matched_accuracy_runtime(single_pipe_runs):
    """At matched accuracy the non-iterative solver costs no more wall clock
    than implicit Euler with Newton."""
    r = single_pipe_runs
    t0 = time.perf_counter()
    ie9 = bl.fdm_solve(
        r["system"], r["scenario"], scheme="implicit_euler", target_dl_m=DX,
        dt_s=9.0, sample_dt=SAMPLE_DT,
    )
    ie_wall = time.perf_counter() - t0
    # match the adaptive solver's accuracy to the fixed-step run by loosening
    # its tolerance; the window count barely changes, so this is not a
    # handicap run
    cfg = ts.WindowControlConfig(atol_flow=3e-2, rtol=3e-4)
    t0 = time.perf_counter()
    d = ts.simulate(r["system"], r["scenario"], target_dl_m=DX, cfg=cfg, sample_dt=SAMPLE_DT)
    dt_wall = time.perf_counter() - t0
    r_ie = rmse(ie9, r["moc"], "pipe.p1.m.0")
    r_dt = rmse(d, r["moc"], "pipe.p1.m.0")
    matched = max(r_ie, r_dt) / min(r_ie, r_dt) <= 2.0
    ok = matched and dt_wall <= ie_wall
    report(
        9,
        ok,
        f"RMSE dt {r_dt:.3e} vs ieuler@9s {r_ie:.3e} "
        f"(ratio {max(r_ie, r_dt) / min(r_ie, r_dt):.2f}, matched<=2); "
        f"wall dt {dt_wall:.2f} s <= ieuler {ie_wall:.2f} s",
    )


def test_criterion_10_series_arithmetic_suite():
    """Exhaustive low-order identities over 1000 random series plus the
    friction-coefficient divided-difference oracle."""
    rng = np.random.default_rng(12345)
    ok = True
    detail = []
    worst_ring = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 6))  # orders 1..4
        x, y = rng.normal(size=(2, n))
        x0 = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
        x[0] = x0
        # rule symmetry
        for k in range(n):
            a = series.conv(x, y, k)
            b = series.conv(y, x, k)
            worst_ring = max(worst_ring, abs(a - b))
        # reciprocal defining identity
        r = series.recip(x)
        for k in range(n):
            want = 1.0 if k == 0 else 0.0
            worst_ring = max(worst_ring, abs(series.conv(x, r, k) - want))
        # polynomial evaluation exactness
        t = rng.uniform(-0.5, 0.5)
        direct = sum(c * t**i for i, c in enumerate(x))
        worst_ring = max(worst_ring, abs(series.eval_at(x, t) - direct))
    if worst_ring > 1e-9:
        ok = False
    detail.append(f"ring identities worst |err| {worst_ring:.2e} over 1000 series")

    worst_fric = 0.0
    for _ in range(200):
        cm = rng.normal(size=4)
        cm[0] = rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 2.0)
        cpi = rng.normal(size=4)
        cpi[0] = rng.uniform(2.0, 4.0)

        def f(t):
            m = series.eval_at(cm, t)
            return m * abs(m) / series.eval_at(cpi, t)

        h = 1e-3
        vals = np.array([f(i * h) for i in (-2, -1, 0, 1, 2)])
        expected = [
            vals[2],
            (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h),
            (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (24 * h * h),
        ]
        for k in range(3):
            got = series.friction_coeff(series.Series(cm), series.Series(cpi), cm[0], k)
            denom = max(abs(expected[k]), 1e-6)
            worst_fric = max(worst_fric, abs(got - expected[k]) / denom)
    if worst_fric > 1e-6:
        ok = False
    detail.append(f"friction coefficients vs divided differences worst rel {worst_fric:.2e}")
    report(10, ok, "; ".join(detail))
