"""Iterative reference solvers.

Three transient schemes close the same algebraic system (nodal balance,
boundary closures, power flow, couplings) with Newton at every time level:

* ``moc_solve`` integrates along the characteristic directions dl/dt = +-c
  with unit CFL, so the advective part is exact and only the friction
  integral (implicit trapezoid) carries truncation error. It serves as the
  accuracy reference for everything else.
* ``fdm_solve`` with the one-sided fully implicit scheme (first order) or
  the four-point centered box scheme (second order, oscillatory).

``powerflow_rect`` is the standalone steady power-flow solve in
rectangular voltage coordinates used for cross-checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .closure import ClosureAssembler, ClosureIndex, eps_injections, eps_jacobian
from .discretization import build_layout, make_grids
from .errors import DefsimError, SolverError, ValidationFailure
from .model import IegsSystem, validate
from .newton import NewtonConfig, NewtonResult, newton
from .scenario import BoundScenario, Scenario, resolve_initial_state
from .trajectory import Trajectory, column_names, sample_grid

# re-exported: the Newton driver is part of this module's surface
__all__ = [
    "NewtonConfig",
    "NewtonResult",
    "newton",
    "powerflow_rect",
    "moc_solve",
    "fdm_solve",
    "characteristic_variables",
    "physical_variables",
]


def characteristic_variables(pi, m, s_over_c):
    """Invariants advected along +c and -c: w1 = (S pi / c + m)/2, w2 = (-S pi / c + m)/2."""
    w1 = 0.5 * (s_over_c * np.asarray(pi) + np.asarray(m))
    w2 = 0.5 * (-s_over_c * np.asarray(pi) + np.asarray(m))
    return w1, w2


def physical_variables(w1, w2, s_over_c):
    """Inverse of characteristic_variables."""
    pi = (np.asarray(w1) - np.asarray(w2)) / s_over_c
    m = np.asarray(w1) + np.asarray(w2)
    return pi, m


@dataclass
class CharacteristicState:
    """Per-pipeline characteristic variables on a unit-CFL grid."""

    w1: np.ndarray
    w2: np.ndarray

    @classmethod
    def from_physical(cls, pi, m, s_over_c):
        w1, w2 = characteristic_variables(pi, m, s_over_c)
        return cls(w1=w1, w2=w2)

    def to_physical(self, s_over_c):
        return physical_variables(self.w1, self.w2, s_over_c)


@dataclass
class PowerflowResult:
    e: np.ndarray
    f: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int


def powerflow_rect(eps, admittance, pv, pq, slack, start=None,
                   cfg: NewtonConfig = NewtonConfig(tol=1e-10)) -> PowerflowResult:
    """Steady rectangular power flow.

    ``pv`` maps bus id -> (p, U), ``pq`` maps bus id -> (p, q), ``slack`` is
    the (e, f) pair of the single slack bus. Injections at every bus are
    returned so callers can read off the slack (and any other) power.
    """
    buses = eps.buses
    n = len(buses)
    g, b = admittance.g, admittance.b
    kinds = []
    vals = []
    for bus in buses:
        if bus.kind == "slack":
            kinds.append("slack")
            vals.append(slack)
        elif bus.kind == "PV":
            kinds.append("pv")
            vals.append(pv[bus.id])
        else:
            kinds.append("pq")
            vals.append(pq[bus.id])

    def split(x):
        return x[:n], x[n:]

    def residual(x):
        e, f = split(x)
        p_calc, q_calc, _, _ = eps_injections(g, b, e, f)
        r = np.empty(2 * n)
        for i, kind in enumerate(kinds):
            if kind == "slack":
                r[2 * i] = e[i] - vals[i][0]
                r[2 * i + 1] = f[i] - vals[i][1]
            elif kind == "pv":
                r[2 * i] = p_calc[i] - vals[i][0]
                r[2 * i + 1] = e[i] ** 2 + f[i] ** 2 - vals[i][1] ** 2
            else:
                r[2 * i] = p_calc[i] - vals[i][0]
                r[2 * i + 1] = q_calc[i] - vals[i][1]
        return r

    def jacobian(x):
        e, f = split(x)
        _, _, ir, ii = eps_injections(g, b, e, f)
        dp_de, dp_df, dq_de, dq_df = eps_jacobian(g, b, e, f, ir, ii)
        jac = np.zeros((2 * n, 2 * n))
        for i, kind in enumerate(kinds):
            if kind == "slack":
                jac[2 * i, i] = 1.0
                jac[2 * i + 1, n + i] = 1.0
            elif kind == "pv":
                jac[2 * i, :n] = dp_de[i]
                jac[2 * i, n:] = dp_df[i]
                jac[2 * i + 1, i] = 2 * e[i]
                jac[2 * i + 1, n + i] = 2 * f[i]
            else:
                jac[2 * i, :n] = dp_de[i]
                jac[2 * i, n:] = dp_df[i]
                jac[2 * i + 1, :n] = dq_de[i]
                jac[2 * i + 1, n:] = dq_df[i]
        return jac

    x0 = np.concatenate([np.ones(n), np.zeros(n)]) if start is None else np.asarray(start)
    try:
        res = newton(residual, jacobian, x0, cfg)
    except SolverError as exc:
        x_last = getattr(exc, "last_x", x0)
        worst = int(np.argmax(np.abs(residual(x_last)))) // 2
        raise SolverError(
            f"power flow diverged (worst bus '{buses[worst].id}'): {exc}"
        ) from exc
    e, f = split(res.x)
    p_calc, q_calc, _, _ = eps_injections(g, b, e, f)
    return PowerflowResult(e=e, f=f, p=p_calc, q=q_calc, iterations=res.iterations)


# ---------------------------------------------------------------------------
# shared transient machinery


class _TransientBase:
    """State layout, closure rows and sampling shared by MOC and FDM."""

    def __init__(self, system: IegsSystem, bound: BoundScenario, grids):
        diags = validate(system)
        if diags:
            raise ValidationFailure(diags)
        self.system = system
        self.bound = bound
        self.grids = grids
        self.layout = build_layout(system, grids)
        layout = self.layout
        n_pipes = len(system.gas.pipelines)
        self.idx = ClosureIndex(
            head_pi=np.array([layout.pipe_pi(j, 0) for j in range(n_pipes)], int),
            head_m=np.array([layout.pipe_m(j, 0) for j in range(n_pipes)], int),
            tail_pi=np.array(
                [layout.pipe_pi(j, layout.n_points[j] - 1) for j in range(n_pipes)], int
            ),
            tail_m=np.array(
                [layout.pipe_m(j, layout.n_points[j] - 1) for j in range(n_pipes)], int
            ),
            node_pi=np.arange(layout.node_pi_base, layout.node_pi_base + layout.n_nodes),
            node_m=np.arange(layout.node_m_base, layout.node_m_base + layout.n_nodes),
            e=np.arange(layout.e_base, layout.e_base + layout.n_buses),
            f=np.arange(layout.f_base, layout.f_base + layout.n_buses),
            pcp=np.arange(layout.pcp_base, layout.pcp_base + layout.n_pcp),
        )
        self.closure = ClosureAssembler(system, self.idx)

    def sample(self, level_times, levels, sample_dt, columns, provenance):
        times = sample_grid(self.bound.horizon_s, sample_dt)
        levels = np.asarray(levels)
        out = np.empty((times.shape[0], levels.shape[1]))
        for c in range(levels.shape[1]):
            out[:, c] = np.interp(times, level_times, levels[:, c])
        return Trajectory(times=times, columns=columns, values=out, provenance=provenance)


def moc_solve(
    system: IegsSystem,
    scenario: Scenario | BoundScenario,
    *,
    target_dl_m: float,
    sample_dt: float = 60.0,
    newton_cfg: NewtonConfig = NewtonConfig(tol=1e-9, max_iter=50),
) -> Trajectory:
    """Characteristics reference solver on a unit-CFL grid.

    The common time step is target_dl_m / c; each pipeline's segment count
    rounds its length to the nearest multiple, and its wave speed is
    adjusted to dl / dt (recorded in the provenance; zero adjustment when
    the lengths divide evenly).
    """
    t_wall = time.perf_counter()
    bound = scenario if isinstance(scenario, BoundScenario) else scenario.bind(system)
    gas = system.gas
    c = gas.sound_speed_mps
    dt = target_dl_m / c
    from .discretization import PipelineGrid

    grids = []
    c_eff = []
    for p in gas.pipelines:
        n = max(1, round(p.length_m / target_dl_m))
        grids.append(PipelineGrid(pipeline_id=p.id, n_seg=int(n), length_m=p.length_m))
        c_eff.append(grids[-1].dl_m / dt)
    base = _TransientBase(system, bound, grids)
    layout = base.layout
    state = resolve_initial_state(system, grids, layout, bound).to_layout_vector(layout)

    n_pipes = len(gas.pipelines)
    pipe_par = []
    for j, p in enumerate(gas.pipelines):
        s = p.cross_section_m2
        cj = c_eff[j]
        pipe_par.append(
            (
                s / cj,  # s_over_c
                cj / s,  # c_over_s
                dt * p.friction * cj * cj / (4.0 * p.diameter_m * s),  # fric_quarter_dt
            )
        )

    # boundary-stage unknowns: pipe ends then nodes then buses then pcp
    bidx = []
    for j in range(n_pipes):
        bidx += [base.idx.head_pi[j], base.idx.head_m[j], base.idx.tail_pi[j], base.idx.tail_m[j]]
    bidx += list(base.idx.node_pi) + list(base.idx.node_m)
    bidx += list(base.idx.e) + list(base.idx.f) + list(base.idx.pcp)
    bidx = np.array(bidx, dtype=int)
    nb = bidx.shape[0]
    sub = {g: i for i, g in enumerate(bidx)}
    cl_idx = ClosureIndex(
        head_pi=np.array([sub[g] for g in base.idx.head_pi], int),
        head_m=np.array([sub[g] for g in base.idx.head_m], int),
        tail_pi=np.array([sub[g] for g in base.idx.tail_pi], int),
        tail_m=np.array([sub[g] for g in base.idx.tail_m], int),
        node_pi=np.array([sub[g] for g in base.idx.node_pi], int),
        node_m=np.array([sub[g] for g in base.idx.node_m], int),
        e=np.array([sub[g] for g in base.idx.e], int),
        f=np.array([sub[g] for g in base.idx.f], int),
        pcp=np.array([sub[g] for g in base.idx.pcp], int),
    )
    closure = ClosureAssembler(system, cl_idx)
    n_rows = 2 * n_pipes + closure.n_rows
    if n_rows != nb:
        raise DefsimError(f"characteristic closure mismatch: {n_rows} rows vs {nb} unknowns")
    row_scale = np.concatenate([np.full(2 * n_pipes, 1.0), closure.row_scale()])

    horizon = bound.horizon_s
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    level_times = np.empty(n_steps + 1)
    levels = np.empty((n_steps + 1, layout.n_state))
    level_times[0] = 0.0
    levels[0] = state

    cur = state.copy()
    nxt = state.copy()
    newton_iters = 0
    for step in range(n_steps):
        t_new = min((step + 1) * dt, horizon)
        # interior sweep per pipe
        targets = []
        for j in range(n_pipes):
            off = layout.pipe_offsets[j]
            npts = layout.n_points[j]
            pi_old = cur[off : off + npts]
            m_old = cur[off + npts : off + 2 * npts]
            pi_new = nxt[off : off + npts]
            m_new = nxt[off + npts : off + 2 * npts]
            s_over_c, c_over_s, fqd = pipe_par[j]
            ok = kernels.moc_interior_step(
                pi_old, m_old, pi_new, m_new, c_over_s, s_over_c, fqd
            )
            if not ok:
                raise SolverError("nonpositive pressure in characteristics sweep",
                                  time_s=t_new)
            # incoming invariants for the two end closures
            w1, w2 = characteristic_variables(pi_old, m_old, s_over_c)
            phi = fqd * m_old * np.abs(m_old) / pi_old
            a_tail = 2.0 * w1[-2] - phi[-2]
            b_head = 2.0 * w2[1] - phi[1]
            targets.append((a_tail, b_head))

        bv = bound.values_at(t_new)

        def residual(x):
            r = np.empty(n_rows)
            for j in range(n_pipes):
                s_over_c, _, fqd = pipe_par[j]
                pi0, m0 = x[4 * j], x[4 * j + 1]
                pin, mn = x[4 * j + 2], x[4 * j + 3]
                if pi0 <= 0.0 or pin <= 0.0:
                    r[2 * j] = np.nan
                    r[2 * j + 1] = np.nan
                    continue
                a_tail, b_head = targets[j]
                r[2 * j] = s_over_c * pin + mn + fqd * mn * abs(mn) / pin - a_tail
                r[2 * j + 1] = -s_over_c * pi0 + m0 + fqd * m0 * abs(m0) / pi0 - b_head
            r[2 * n_pipes :] = closure.residual(x, bv)
            return r

        def jacobian(x):
            rows, cols, vals = closure.jacobian_triplets(x)
            rows = rows + 2 * n_pipes
            extra_r, extra_c, extra_v = [], [], []
            for j in range(n_pipes):
                s_over_c, _, fqd = pipe_par[j]
                pi0, m0 = x[4 * j], x[4 * j + 1]
                pin, mn = x[4 * j + 2], x[4 * j + 3]
                extra_r += [2 * j, 2 * j]
                extra_c += [4 * j + 2, 4 * j + 3]
                extra_v += [
                    s_over_c - fqd * mn * abs(mn) / pin**2,
                    1.0 + 2.0 * fqd * abs(mn) / pin,
                ]
                extra_r += [2 * j + 1, 2 * j + 1]
                extra_c += [4 * j, 4 * j + 1]
                extra_v += [
                    -s_over_c - fqd * m0 * abs(m0) / pi0**2,
                    1.0 + 2.0 * fqd * abs(m0) / pi0,
                ]
            all_r = np.concatenate([np.array(extra_r, int), rows])
            all_c = np.concatenate([np.array(extra_c, int), cols])
            all_v = np.concatenate([np.array(extra_v, float), vals])
            jac = np.zeros((nb, nb))
            np.add.at(jac, (all_r, all_c), all_v)
            return jac

        try:
            res = newton(residual, jacobian, cur[bidx], newton_cfg, row_scale=row_scale)
        except SolverError as exc:
            raise SolverError(f"characteristics step failed at t={t_new:.6g}s: {exc}",
                              time_s=t_new) from exc
        newton_iters += res.iterations
        nxt[bidx] = res.x
        cur, nxt = nxt, cur
        level_times[step + 1] = t_new
        levels[step + 1] = cur

    prov = {
        "method": "moc",
        "target_dl_m": target_dl_m,
        "dt_s": dt,
        "steps": n_steps,
        "sample_dt": sample_dt,
        "newton_iterations": newton_iters,
        "kernel_backend": kernels.BACKEND,
        "dl_m": {g.pipeline_id: g.dl_m for g in grids},
        "wave_speed_adjusted_mps": {
            g.pipeline_id: ce for g, ce in zip(grids, c_eff)
        },
        "wall_clock_s": 0.0,
    }
    prov["wall_clock_s"] = time.perf_counter() - t_wall
    return base.sample(level_times, levels, sample_dt, column_names(system, layout), prov)


def fdm_solve(
    system: IegsSystem,
    scenario: Scenario | BoundScenario,
    *,
    scheme: str,
    target_dl_m: float,
    dt_s: float,
    sample_dt: float = 60.0,
    newton_cfg: NewtonConfig = NewtonConfig(tol=1e-8, max_iter=50),
) -> Trajectory:
    """Fully implicit finite differences over the whole coupled system.

    ``scheme`` selects the spatial/temporal stencil: ``implicit_euler``
    (one-sided, first order) or ``implicit_central`` (box average, second
    order). Every time level solves the complete nonlinear system by
    Newton, warm-started from the previous level.
    """
    if scheme not in ("implicit_euler", "implicit_central"):
        raise DefsimError(f"unknown scheme '{scheme}'")
    if dt_s <= 0:
        raise DefsimError("time step must be positive")
    t_wall = time.perf_counter()
    bound = scenario if isinstance(scenario, BoundScenario) else scenario.bind(system)
    grids = make_grids(system, target_dl_m)
    if scheme == "implicit_euler":
        # The one-sided stencil runs downwind for the upstream-travelling
        # wave; below unit CFL its per-step spatial system carries an
        # exponentially growing mode and the solve degenerates.
        cfl = system.gas.sound_speed_mps * dt_s / max(g.dl_m for g in grids)
        if cfl < 1.0:
            raise DefsimError(
                f"implicit_euler needs c dt/dl >= 1 (got {cfl:.3g}); "
                "reduce --dx or increase --dt"
            )
    base = _TransientBase(system, bound, grids)
    layout = base.layout
    gas = system.gas
    c = gas.sound_speed_mps
    state = resolve_initial_state(system, grids, layout, bound).to_layout_vector(layout)

    n_state = layout.n_state
    n_pipes = len(gas.pipelines)
    pde_rows = sum(2 * g.n_seg for g in grids)
    n_rows = pde_rows + base.closure.n_rows
    if n_rows != n_state:
        raise DefsimError(f"scheme assembly mismatch: {n_rows} rows vs {n_state} unknowns")

    pipe_meta = []
    row = 0
    for j, (p, g) in enumerate(zip(gas.pipelines, grids)):
        s = p.cross_section_m2
        pipe_meta.append(
            {
                "row0": row,
                "off": layout.pipe_offsets[j],
                "npts": g.n_points,
                "s": s,
                "dl": g.dl_m,
                "adv_pi": c * c / s,
                "fric": p.friction * c * c / (2.0 * p.diameter_m * s),
            }
        )
        row += 2 * g.n_seg
    row_scale = _fdm_row_scale(grids, base)

    horizon = bound.horizon_s
    n_steps = int(np.ceil(horizon / dt_s - 1e-9))
    level_times = np.empty(n_steps + 1)
    levels = np.empty((n_steps + 1, n_state))
    level_times[0] = 0.0
    levels[0] = state

    cur = state.copy()
    newton_iters = 0
    central = scheme == "implicit_central"
    for step in range(n_steps):
        t_new = min((step + 1) * dt_s, horizon)
        dt_eff = t_new - step * dt_s if t_new < (step + 1) * dt_s else dt_s
        bv = bound.values_at(t_new)
        old = cur

        def residual(x):
            r = np.empty(n_rows)
            for meta in pipe_meta:
                _pde_residual(r, x, old, meta, dt_eff, central)
            r[pde_rows:] = base.closure.residual(x, bv)
            return r

        def jacobian(x):
            rows, cols, vals = base.closure.jacobian_triplets(x)
            rows = rows + pde_rows
            pr, pc, pv = [], [], []
            for meta in pipe_meta:
                _pde_jacobian(pr, pc, pv, x, old, meta, dt_eff, central)
            all_r = np.concatenate([np.array(pr, int), rows])
            all_c = np.concatenate([np.array(pc, int), cols])
            all_v = np.concatenate([np.array(pv, float), vals])
            return sp.coo_matrix((all_v, (all_r, all_c)), shape=(n_rows, n_state)).tocsr()

        try:
            res = newton(residual, jacobian, cur.copy(), newton_cfg, row_scale=row_scale)
        except SolverError as exc:
            raise SolverError(f"{scheme} step failed at t={t_new:.6g}s: {exc}",
                              time_s=t_new) from exc
        newton_iters += res.iterations
        cur = res.x
        level_times[step + 1] = t_new
        levels[step + 1] = cur

    prov = {
        "method": "ieuler" if scheme == "implicit_euler" else "icentral",
        "target_dl_m": target_dl_m,
        "dt_s": dt_s,
        "steps": n_steps,
        "sample_dt": sample_dt,
        "newton_iterations": newton_iters,
        "kernel_backend": kernels.BACKEND,
        "dl_m": {g.pipeline_id: g.dl_m for g in grids},
        "wall_clock_s": 0.0,
    }
    prov["wall_clock_s"] = time.perf_counter() - t_wall
    return base.sample(level_times, levels, sample_dt, column_names(system, layout), prov)


def _fdm_row_scale(grids, base):
    parts = []
    for g in grids:
        parts.append(np.full(g.n_seg, 1e-5))  # continuity rows carry Pa/s
        parts.append(np.ones(g.n_seg))
    parts.append(base.closure.row_scale())
    return np.concatenate(parts) if parts else np.zeros(0)


def _pde_residual(r, x, old, meta, dt, central):
    off, npts = meta["off"], meta["npts"]
    pi = x[off : off + npts]
    m = x[off + npts : off + 2 * npts]
    pi_o = old[off : off + npts]
    m_o = old[off + npts : off + 2 * npts]
    dl, s = meta["dl"], meta["s"]
    row0 = meta["row0"]
    nseg = npts - 1
    if central:
        dpdt = (pi[1:] - pi_o[1:] + pi[:-1] - pi_o[:-1]) / (2 * dt)
        dmdl = (m[1:] - m[:-1] + m_o[1:] - m_o[:-1]) / (2 * dl)
        dmdt = (m[1:] - m_o[1:] + m[:-1] - m_o[:-1]) / (2 * dt)
        dpdl = (pi[1:] - pi[:-1] + pi_o[1:] - pi_o[:-1]) / (2 * dl)
        pi_bar = 0.25 * (pi[1:] + pi[:-1] + pi_o[1:] + pi_o[:-1])
        m_bar = 0.25 * (m[1:] + m[:-1] + m_o[1:] + m_o[:-1])
        fric = meta["fric"] * m_bar * np.abs(m_bar) / pi_bar
    else:
        dpdt = (pi[1:] - pi_o[1:]) / dt
        dmdl = (m[1:] - m[:-1]) / dl
        dmdt = (m[1:] - m_o[1:]) / dt
        dpdl = (pi[1:] - pi[:-1]) / dl
        fric = meta["fric"] * m[1:] * np.abs(m[1:]) / pi[1:]
    # continuity: dpi/dt + (c^2/S) dm/dl; momentum: dm/dt + S dpi/dl + friction
    r[row0 : row0 + nseg] = dpdt + meta["adv_pi"] * dmdl
    r[row0 + nseg : row0 + 2 * nseg] = dmdt + s * dpdl + fric


def _pde_jacobian(pr, pc, pv, x, old, meta, dt, central):
    off, npts = meta["off"], meta["npts"]
    pi = x[off : off + npts]
    m = x[off + npts : off + 2 * npts]
    old_pi = old[off : off + npts]
    old_m = old[off + npts : off + 2 * npts]
    dl, s = meta["dl"], meta["s"]
    row0 = meta["row0"]
    nseg = npts - 1
    adv = meta["adv_pi"]
    if central:
        pi_bar = 0.25 * (pi[1:] + pi[:-1] + old_pi[1:] + old_pi[:-1])
        m_bar = 0.25 * (m[1:] + m[:-1] + old_m[1:] + old_m[:-1])
        dfric_dm = meta["fric"] * 2.0 * np.abs(m_bar) / pi_bar * 0.25
        dfric_dpi = -meta["fric"] * m_bar * np.abs(m_bar) / pi_bar**2 * 0.25
        for n in range(nseg):
            rc = row0 + n
            rm = row0 + nseg + n
            pr += [rc, rc, rc, rc]
            pc += [off + n, off + n + 1, off + npts + n, off + npts + n + 1]
            pv += [1 / (2 * dt), 1 / (2 * dt), -adv / (2 * dl), adv / (2 * dl)]
            pr += [rm, rm, rm, rm]
            pc += [off + npts + n, off + npts + n + 1, off + n, off + n + 1]
            pv += [
                1 / (2 * dt) + dfric_dm[n],
                1 / (2 * dt) + dfric_dm[n],
                -s / (2 * dl) + dfric_dpi[n],
                s / (2 * dl) + dfric_dpi[n],
            ]
    else:
        dfric_dm = meta["fric"] * 2.0 * np.abs(m[1:]) / pi[1:]
        dfric_dpi = -meta["fric"] * m[1:] * np.abs(m[1:]) / pi[1:] ** 2
        for n in range(nseg):
            rc = row0 + n
            rm = row0 + nseg + n
            pr += [rc, rc, rc]
            pc += [off + n + 1, off + npts + n, off + npts + n + 1]
            pv += [1 / dt, -adv / dl, adv / dl]
            pr += [rm, rm, rm]
            pc += [off + npts + n + 1, off + n, off + n + 1]
            pv += [1 / dt + dfric_dm[n], -s / dl, s / dl + dfric_dpi[n]]
