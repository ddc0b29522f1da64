"""Boundary conditions, their local Taylor expansions, and consistent
initial states.

Boundary signals are piecewise polynomials so their Taylor coefficients at
any window start are exact: a window never straddles a breakpoint (the
solver clamps to them), and within one segment the expansion is just a
binomial re-centering of the stored coefficients.

Load signals are positive withdrawals; the nodal injection they impose is
their negative (see the sign convention in defsim.model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .closure import BoundaryValues, ClosureAssembler, ClosureIndex
from .errors import ScenarioError, SolverError
from .model import IegsSystem
from .newton import NewtonConfig, newton


@dataclass(frozen=True)
class PiecewisePolySignal:
    """Polynomial segments over [breakpoints[i], breakpoints[i+1]) in local time.

    Right-continuous at breakpoints; the final edge closes the domain and the
    last segment also covers it.
    """

    breakpoints: tuple[float, ...]
    segments: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        bp = tuple(float(t) for t in self.breakpoints)
        seg = tuple(tuple(float(c) for c in s) for s in self.segments)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "segments", seg)
        if len(bp) != len(seg) + 1:
            raise ScenarioError(
                f"signal needs len(breakpoints) == len(segments) + 1, "
                f"got {len(bp)} and {len(seg)}"
            )
        if bp[0] != 0.0:
            raise ScenarioError("signal domain must start at t = 0")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ScenarioError("signal breakpoints must be strictly increasing")
        if any(len(s) == 0 for s in seg):
            raise ScenarioError("every signal segment needs at least one coefficient")

    @property
    def domain_end(self) -> float:
        return self.breakpoints[-1]

    @classmethod
    def constant(cls, value: float, domain_end: float = math.inf):
        return cls((0.0, domain_end), ((float(value),),))

    def _segment(self, t: float) -> int:
        if t < 0.0 or t > self.domain_end:
            raise ScenarioError(f"time {t} outside signal domain [0, {self.domain_end}]")
        s = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(s, len(self.segments) - 1)

    def eval(self, t: float) -> float:
        s = self._segment(t)
        tau = t - self.breakpoints[s]
        acc = 0.0
        for c in reversed(self.segments[s]):
            acc = acc * tau + c
        return acc

    def taylor(self, t0: float, order: int) -> np.ndarray:
        """Expansion coefficients of the segment containing [t0, t0+eps)."""
        s = self._segment(t0)
        tau0 = t0 - self.breakpoints[s]
        coeffs = self.segments[s]
        out = np.zeros(order + 1)
        for k in range(min(order, len(coeffs) - 1) + 1):
            acc = 0.0
            for i in range(k, len(coeffs)):
                acc += coeffs[i] * math.comb(i, k) * tau0 ** (i - k)
            out[k] = acc
        return out


def eval_signal(sig: PiecewisePolySignal, t: float) -> float:
    return sig.eval(t)


def signal_taylor(sig: PiecewisePolySignal, t0: float, order: int) -> np.ndarray:
    return sig.taylor(t0, order)


def smoothstep_segments(t0, t1, v0, v1):
    """Breakpoint/segment pair for a C1 cubic transition from v0 to v1.

    Returns the segment coefficients in local time for [t0, t1): the cubic
    3x^2 - 2x^3 scaled to the interval, handy for building scenario files.
    """
    d = t1 - t0
    dv = v1 - v0
    return (v0, 0.0, 3.0 * dv / d**2, -2.0 * dv / d**3)


@dataclass
class ExplicitInit:
    pipe_pi: dict
    pipe_m: dict
    node_pi: dict
    node_m: dict
    e: dict = field(default_factory=dict)
    f: dict = field(default_factory=dict)
    pcp: dict = field(default_factory=dict)


@dataclass
class Scenario:
    horizon_s: float
    gas_pressure: dict = field(default_factory=dict)
    gas_load: dict = field(default_factory=dict)
    eps_pv: dict = field(default_factory=dict)  # bus -> (p, U) signals
    eps_pq: dict = field(default_factory=dict)  # bus -> (p, q) signals
    eps_slack: tuple | None = None  # (e, f) signals
    initialization: str | ExplicitInit = "steady"

    def bind(self, system: IegsSystem) -> "BoundScenario":
        return BoundScenario(system, self)


class BoundScenario:
    """Scenario resolved against one system: validated key coverage, fast
    per-instant evaluation, local Taylor expansion, breakpoint lookup."""

    def __init__(self, system: IegsSystem, scenario: Scenario):
        self.system = system
        self.scenario = scenario
        self.horizon_s = float(scenario.horizon_s)
        problems = []
        gas = system.gas

        coupled_nodes = {c.gas_node for c in system.couplings}
        sources = {n.id for n in gas.nodes if n.kind == "source"}
        plain_loads = {
            n.id for n in gas.nodes if n.kind == "load" and n.id not in coupled_nodes
        }
        if sources != set(scenario.gas_pressure):
            problems.append(
                f"gas_pressure keys {sorted(scenario.gas_pressure)} must equal the "
                f"source nodes {sorted(sources)}"
            )
        if plain_loads != set(scenario.gas_load):
            problems.append(
                f"gas_load keys {sorted(scenario.gas_load)} must equal the uncoupled "
                f"load nodes {sorted(plain_loads)}"
            )

        buses = system.eps.buses
        pv = {b.id for b in buses if b.kind == "PV"}
        cmp_buses = {
            c.eps_bus for c in system.couplings if c.kind == "electric_compressor"
        }
        pq = {b.id for b in buses if b.kind == "PQ"} - cmp_buses
        if pv != set(scenario.eps_pv):
            problems.append(
                f"eps_pv keys {sorted(scenario.eps_pv)} must equal the PV buses {sorted(pv)}"
            )
        if pq != set(scenario.eps_pq):
            problems.append(
                f"eps_pq keys {sorted(scenario.eps_pq)} must equal the non-compressor "
                f"PQ buses {sorted(pq)}"
            )
        if buses and scenario.eps_slack is None:
            problems.append("eps_slack signals required when the grid declares buses")

        self._signals = []
        for sig in scenario.gas_pressure.values():
            self._signals.append(sig)
        for sig in scenario.gas_load.values():
            self._signals.append(sig)
        for p_sig, u_sig in scenario.eps_pv.values():
            self._signals.extend((p_sig, u_sig))
        for p_sig, q_sig in scenario.eps_pq.values():
            self._signals.extend((p_sig, q_sig))
        if scenario.eps_slack is not None:
            self._signals.extend(scenario.eps_slack)
        for sig in self._signals:
            if sig.domain_end < self.horizon_s:
                problems.append(
                    f"a signal domain ends at {sig.domain_end}s, before the "
                    f"horizon {self.horizon_s}s"
                )
                break
        if problems:
            raise ScenarioError("; ".join(problems))

        bps = {0.0, self.horizon_s}
        for sig in self._signals:
            bps.update(b for b in sig.breakpoints if 0.0 < b < self.horizon_s)
        self.breakpoints = np.array(sorted(bps))

        n_nodes, n_buses = len(gas.nodes), len(buses)
        self._src = [
            (gas.node_index(nid), sig) for nid, sig in scenario.gas_pressure.items()
        ]
        self._ld = [(gas.node_index(nid), sig) for nid, sig in scenario.gas_load.items()]
        self._pv = [
            (system.eps.bus_index(bid), ps, us)
            for bid, (ps, us) in scenario.eps_pv.items()
        ]
        self._pq = [
            (system.eps.bus_index(bid), ps, qs)
            for bid, (ps, qs) in scenario.eps_pq.items()
        ]
        self._n_nodes, self._n_buses = n_nodes, n_buses

    def next_breakpoint(self, t: float) -> float:
        fuzz = 1e-9 * max(1.0, abs(t))
        i = int(np.searchsorted(self.breakpoints, t + fuzz, side="right"))
        if i >= len(self.breakpoints):
            return self.horizon_s
        return float(self.breakpoints[i])

    def values_at(self, t: float) -> BoundaryValues:
        nodes_p = np.full(self._n_nodes, np.nan)
        nodes_l = np.full(self._n_nodes, np.nan)
        bus_p = np.full(self._n_buses, np.nan)
        bus_q = np.full(self._n_buses, np.nan)
        bus_u = np.full(self._n_buses, np.nan)
        for i, sig in self._src:
            nodes_p[i] = sig.eval(t)
        for i, sig in self._ld:
            nodes_l[i] = sig.eval(t)
        for b, ps, us in self._pv:
            bus_p[b] = ps.eval(t)
            bus_u[b] = us.eval(t)
        for b, ps, qs in self._pq:
            bus_p[b] = ps.eval(t)
            bus_q[b] = qs.eval(t)
        se = sf = 0.0
        if self.scenario.eps_slack is not None:
            se = self.scenario.eps_slack[0].eval(t)
            sf = self.scenario.eps_slack[1].eval(t)
        return BoundaryValues(
            node_pressure=nodes_p,
            node_load=nodes_l,
            bus_p=bus_p,
            bus_q=bus_q,
            bus_u=bus_u,
            slack_e=se,
            slack_f=sf,
        )

    def taylor_at(self, t0: float, order: int) -> "BoundaryTaylor":
        shape_n = (order + 1, self._n_nodes)
        shape_b = (order + 1, self._n_buses)
        node_pressure = np.zeros(shape_n)
        node_load = np.zeros(shape_n)
        bus_p = np.zeros(shape_b)
        bus_q = np.zeros(shape_b)
        bus_u = np.zeros(shape_b)
        for i, sig in self._src:
            node_pressure[:, i] = sig.taylor(t0, order)
        for i, sig in self._ld:
            node_load[:, i] = sig.taylor(t0, order)
        for b, ps, us in self._pv:
            bus_p[:, b] = ps.taylor(t0, order)
            bus_u[:, b] = us.taylor(t0, order)
        for b, ps, qs in self._pq:
            bus_p[:, b] = ps.taylor(t0, order)
            bus_q[:, b] = qs.taylor(t0, order)
        slack_e = np.zeros(order + 1)
        slack_f = np.zeros(order + 1)
        if self.scenario.eps_slack is not None:
            slack_e = self.scenario.eps_slack[0].taylor(t0, order)
            slack_f = self.scenario.eps_slack[1].taylor(t0, order)
        return BoundaryTaylor(node_pressure, node_load, bus_p, bus_q, bus_u, slack_e, slack_f)


@dataclass
class BoundaryTaylor:
    """Per-entity boundary-signal expansion coefficients at one window start."""

    node_pressure: np.ndarray
    node_load: np.ndarray
    bus_p: np.ndarray
    bus_q: np.ndarray
    bus_u: np.ndarray
    slack_e: np.ndarray
    slack_f: np.ndarray


@dataclass
class InitialState:
    """Full system state: per-pipeline grid arrays plus nodal/bus quantities."""

    pipe_pi: list
    pipe_m: list
    node_pi: np.ndarray
    node_m: np.ndarray
    e: np.ndarray
    f: np.ndarray
    pcp: np.ndarray

    def to_layout_vector(self, layout) -> np.ndarray:
        x = np.empty(layout.n_state)
        for j, (pi, m) in enumerate(zip(self.pipe_pi, self.pipe_m)):
            base = layout.pipe_offsets[j]
            npts = layout.n_points[j]
            x[base : base + npts] = pi
            x[base + npts : base + 2 * npts] = m
        x[layout.node_pi_base : layout.node_pi_base + layout.n_nodes] = self.node_pi
        x[layout.node_m_base : layout.node_m_base + layout.n_nodes] = self.node_m
        x[layout.e_base : layout.e_base + layout.n_buses] = self.e
        x[layout.f_base : layout.f_base + layout.n_buses] = self.f
        x[layout.pcp_base : layout.pcp_base + layout.n_pcp] = self.pcp
        return x

    @classmethod
    def from_layout_vector(cls, layout, x) -> "InitialState":
        pipe_pi, pipe_m = [], []
        for j in range(len(layout.n_points)):
            base = layout.pipe_offsets[j]
            npts = layout.n_points[j]
            pipe_pi.append(x[base : base + npts].copy())
            pipe_m.append(x[base + npts : base + 2 * npts].copy())
        return cls(
            pipe_pi=pipe_pi,
            pipe_m=pipe_m,
            node_pi=x[layout.node_pi_base : layout.node_pi_base + layout.n_nodes].copy(),
            node_m=x[layout.node_m_base : layout.node_m_base + layout.n_nodes].copy(),
            e=x[layout.e_base : layout.e_base + layout.n_buses].copy(),
            f=x[layout.f_base : layout.f_base + layout.n_buses].copy(),
            pcp=x[layout.pcp_base : layout.pcp_base + layout.n_pcp].copy(),
        )


def steady_state_init(
    system: IegsSystem,
    grids,
    bound: BoundScenario,
    cfg: NewtonConfig = NewtonConfig(tol=1e-10, max_iter=80),
) -> InitialState:
    """Time-invariant solution of the full model at the t=0 boundary values.

    Per pipeline the isothermal steady profile is closed-form: flow is
    spatially uniform and pi(l)^2 = pi(0)^2 - lam c^2 m|m| l / (D S^2).
    The network unknowns (per-pipe flow, squared nodal pressures, nodal
    injections, bus voltages, coupled injections) are solved by damped
    Newton, warm-started from a linear-resistance pass so loop flow splits
    are well-defined away from m = 0.
    """
    gas = system.gas
    bv = bound.values_at(0.0)
    n_pipes, n_nodes, n_buses = len(gas.pipelines), len(gas.nodes), len(system.eps.buses)
    n_pcp = len(system.pcp_buses())

    src_vals = bv.node_pressure[~np.isnan(bv.node_pressure)]
    if src_vals.size == 0:
        raise ScenarioError("steady initialization needs at least one source pressure")
    pref = float(np.max(src_vals))
    if pref <= 0:
        raise ScenarioError("source pressures must be positive")

    c = gas.sound_speed_mps
    w = np.array([p.resistance(c) * p.length_m for p in gas.pipelines]) / pref**2
    from_pos = np.array([gas.node_index(p.from_node) for p in gas.pipelines], dtype=int)
    to_pos = np.array([gas.node_index(p.to_node) for p in gas.pipelines], dtype=int)
    kf2 = system.incidence.k_cmp[from_pos] ** 2 if n_pipes else np.zeros(0)

    # Unknowns: [m_pipe (J), y_node (I, squared normalized pressure),
    #            m_nd (I), e (B), f (B), pcp (C)].
    off_y = n_pipes
    off_mnd = off_y + n_nodes
    off_e = off_mnd + n_nodes
    off_f = off_e + n_buses
    off_pcp = off_f + n_buses
    n_x = off_pcp + n_pcp

# Reuse the shared closure rows on the steady unknown layout: head and
    # tail flows both map onto the uniform per-pipe flow, the helper's
    # pressure-consistency and source-closure rows are replaced below by
    # their squared-pressure counterparts.
    scratch = np.zeros(n_pipes, dtype=int)
    helper = ClosureAssembler(
        system,
        ClosureIndex(
            head_pi=scratch,
            head_m=np.arange(n_pipes),
            tail_pi=scratch,
            tail_m=np.arange(n_pipes),
            node_pi=np.zeros(n_nodes, dtype=int),
            node_m=np.arange(off_mnd, off_e),
            e=np.arange(off_e, off_f),
            f=np.arange(off_f, off_pcp),
            pcp=np.arange(off_pcp, n_x),
        ),
    )
    rb_close = n_pipes + n_nodes
    src_rows = {rb_close + i for i, _ in bound._src}

    def residual(z, quadratic=True):
        m = z[:n_pipes]
        y = z[off_y:off_mnd]
        r = np.empty(n_x)
        flow = m * np.abs(m) if quadratic else m
        r[:n_pipes] = kf2 * y[from_pos] - y[to_pos] - w * flow
        rest = helper.residual(z, bv)
        r[n_pipes:] = rest[2 * n_pipes :]
        for i, _ in bound._src:
            r[rb_close + i] = y[i] - (bv.node_pressure[i] / pref) ** 2
        return r

    def jacobian(z, quadratic=True):
        m = z[:n_pipes]
        jac = np.zeros((n_x, n_x))
        dflow = 2.0 * np.abs(m) if quadratic else np.ones(n_pipes)
        for j in range(n_pipes):
            jac[j, off_y + from_pos[j]] += kf2[j]
            jac[j, off_y + to_pos[j]] += -1.0
            jac[j, j] += -w[j] * dflow[j]
        rr, cc, vv = helper.jacobian_triplets(z)
        keep = rr >= 2 * n_pipes
        rr = rr[keep] - n_pipes
        cc = cc[keep]
        vv = vv[keep]
        if src_rows:
            keep2 = ~np.isin(rr, list(src_rows))
            rr, cc, vv = rr[keep2], cc[keep2], vv[keep2]
        np.add.at(jac, (rr, cc), vv)
        for i, _ in bound._src:
            jac[rb_close + i, off_y + i] = 1.0
        return jac

    z0 = np.zeros(n_x)
    z0[:n_pipes] = 0.0
    z0[off_y:off_mnd] = 1.0
    if n_buses:
        z0[off_e:off_f] = 1.0

    lin = newton(lambda z: residual(z, False), lambda z: jacobian(z, False), z0, cfg)
    try:
        res = newton(lambda z: residual(z), lambda z: jacobian(z), lin.x, cfg)
    except SolverError as exc:
        raise SolverError(
            f"steady-state initialization did not converge: {exc}", residual=exc.residual
        ) from exc
    z = res.x

    node_pi = np.sqrt(np.maximum(z[off_y:off_mnd], 0.0)) * pref
    m = z[:n_pipes]
    pipe_pi, pipe_m = [], []
    for j, (pipe, grid) in enumerate(zip(gas.pipelines, grids)):
        head = system.incidence.k_cmp[from_pos[j]] * node_pi[from_pos[j]]
        drop = pipe.resistance(c) * m[j] * abs(m[j])
        l = np.arange(grid.n_points) * grid.dl_m
        arg = head**2 - drop * l
        if np.any(arg <= 0.0):
            raise ScenarioError(
                f"steady profile of pipeline '{pipe.id}' collapses to vacuum; "
                "check loads and pressures"
            )
        pipe_pi.append(np.sqrt(arg))
        pipe_m.append(np.full(grid.n_points, m[j]))
    return InitialState(
        pipe_pi=pipe_pi,
        pipe_m=pipe_m,
        node_pi=node_pi,
        node_m=z[off_mnd:off_e].copy(),
        e=z[off_e:off_f].copy(),
        f=z[off_f:off_pcp].copy(),
        pcp=z[off_pcp:].copy(),
    )


def resolve_initial_state(system, grids, layout, bound: BoundScenario) -> InitialState:
    """Initial state per the scenario: steady solve or explicit arrays."""
    init = bound.scenario.initialization
    if init == "steady" or init is None:
        return steady_state_init(system, grids, bound)
    if not isinstance(init, ExplicitInit):
        raise ScenarioError(f"unknown initialization mode {init!r}")
    gas = system.gas
    pipe_pi, pipe_m = [], []
    for j, p in enumerate(gas.pipelines):
        npts = layout.n_points[j]
        try:
            pi = np.asarray(init.pipe_pi[p.id], dtype=float)
            m = np.asarray(init.pipe_m[p.id], dtype=float)
        except KeyError as exc:
            raise ScenarioError(f"explicit initialization misses pipeline {exc}") from exc
        if pi.shape[0] != npts or m.shape[0] != npts:
            raise ScenarioError(
                f"explicit arrays for pipeline '{p.id}' must have {npts} points "
                f"for this grid, got {pi.shape[0]}/{m.shape[0]}"
            )
        pipe_pi.append(pi)
        pipe_m.append(m)
    node_pi = np.array([init.node_pi[n.id] for n in gas.nodes], dtype=float)
    node_m = np.array([init.node_m[n.id] for n in gas.nodes], dtype=float)
    e = np.array([init.e.get(b.id, 1.0) for b in system.eps.buses], dtype=float)
    f = np.array([init.f.get(b.id, 0.0) for b in system.eps.buses], dtype=float)
    pcp = np.array([init.pcp.get(bid, 0.0) for bid in system.pcp_buses()], dtype=float)
    state = InitialState(
        pipe_pi=pipe_pi, pipe_m=pipe_m, node_pi=node_pi, node_m=node_m, e=e, f=f, pcp=pcp
    )
    verify_initial_state(system, grids, layout, state, bound.values_at(0.0), tol=1e-6)
    return state


def verify_initial_state(system, grids, layout, state: InitialState, bv: BoundaryValues,
                         tol: float = 1e-6):
    """Raise if an (explicit) initial state violates the algebraic closures."""
    from .closure import residual_report

    x = state.to_layout_vector(layout)
    rep = residual_report(system, layout, x, bv)
    worst = max(rep.values())
    if worst > tol:
        raise ScenarioError(
            f"initial state violates algebraic constraints (worst residual {worst:.3e}; "
            f"families: {rep})"
        )
    return rep
