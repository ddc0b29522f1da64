"""Algebraic closure rows shared by every transient solver.

Whatever scheme advances the pipeline interiors, the same algebraic
equations tie the system together at each time level: nodal pressure
consistency and mass balance, per-node boundary or coupling closures, the
rectangular power-flow equations, and the extra rows defining the unknown
coupled-bus injections. This module assembles those rows (residual and
Jacobian triplets) against an arbitrary unknown-vector layout supplied by
the caller, and evaluates them as a residual report for trajectory
verification.

Row block order: pipe head pressure (J), pipe tail pressure (J), node
mass balance (I), node closure (I), two power-flow rows per bus (2B),
coupling extras (C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import IegsSystem

# Node closure codes
_SRC, _LOAD, _JUNC, _GT_PV, _P2G, _GT_SLACK = range(6)
# Bus row codes
_B_SLACK, _B_PV, _B_PQ, _B_PQ_CMP = range(4)

PRESSURE_ROW_SCALE = 1e-5  # pressure-valued rows are weighed in ~bar to mix with pu/kg rows


@dataclass(frozen=True)
class ClosureIndex:
    """Column positions of each physical quantity in the caller's unknowns."""

    head_pi: np.ndarray
    head_m: np.ndarray
    tail_pi: np.ndarray
    tail_m: np.ndarray
    node_pi: np.ndarray
    node_m: np.ndarray
    e: np.ndarray
    f: np.ndarray
    pcp: np.ndarray


@dataclass
class BoundaryValues:
    """Signal values at one instant, aligned with declaration order.

    Entries that are not boundary-driven hold NaN; ``load`` is the positive
    withdrawal rate at plain load nodes.
    """

    node_pressure: np.ndarray
    node_load: np.ndarray
    bus_p: np.ndarray
    bus_q: np.ndarray
    bus_u: np.ndarray
    slack_e: float
    slack_f: float


def eps_injections(g, b, e, f):
    """Active/reactive injections and the rectangular current parts."""
    ir = g @ e - b @ f
    ii = b @ e + g @ f
    return e * ir + f * ii, f * ir - e * ii, ir, ii


def eps_jacobian(g, b, e, f, ir, ii):
    """Dense blocks dP/de, dP/df, dQ/de, dQ/df of the rectangular equations."""
    dp_de = e[:, None] * g + f[:, None] * b + np.diag(ir)
    dp_df = -e[:, None] * b + f[:, None] * g + np.diag(ii)
    dq_de = f[:, None] * g - e[:, None] * b - np.diag(ii)
    dq_df = -f[:, None] * b - e[:, None] * g + np.diag(ir)
    return dp_de, dp_df, dq_de, dq_df


class ClosureAssembler:
    def __init__(self, system: IegsSystem, idx: ClosureIndex):
        self.system = system
        self.idx = idx
        gas = system.gas
        self.n_pipes = len(gas.pipelines)
        self.n_nodes = len(gas.nodes)
        self.n_buses = len(system.eps.buses)
        base = system.eps.power_base_w

        self.from_pos = np.array([gas.node_index(p.from_node) for p in gas.pipelines], dtype=int)
        self.to_pos = np.array([gas.node_index(p.to_node) for p in gas.pipelines], dtype=int)
        self.k_cmp_from = system.incidence.k_cmp[self.from_pos] if self.n_pipes else np.zeros(0)

        pcp_buses = system.pcp_buses()
        self.n_pcp = len(pcp_buses)
        pcp_pos = {bid: c for c, bid in enumerate(pcp_buses)}

        # Per-node closure: kind code, coupling coefficient, coupled bus
        # position and pcp position where applicable.
        self.node_code = np.empty(self.n_nodes, dtype=int)
        self.node_coeff = np.zeros(self.n_nodes)
        self.node_bus = np.full(self.n_nodes, -1, dtype=int)
        self.node_pcp = np.full(self.n_nodes, -1, dtype=int)
        for i, node in enumerate(gas.nodes):
            dev = system.coupling_at_node(node.id)
            if dev is None:
                self.node_code[i] = {"source": _SRC, "load": _LOAD, "junction": _JUNC}[node.kind]
            elif dev.kind == "gt_pv":
                self.node_code[i] = _GT_PV
                self.node_coeff[i] = base / dev.efficiency
                self.node_bus[i] = system.eps.bus_index(dev.eps_bus)
            elif dev.kind == "p2g":
                self.node_code[i] = _P2G
                self.node_coeff[i] = dev.efficiency * base
                self.node_bus[i] = system.eps.bus_index(dev.eps_bus)
            elif dev.kind == "gt_slack":
                self.node_code[i] = _GT_SLACK
                self.node_coeff[i] = base / dev.efficiency
                self.node_pcp[i] = pcp_pos[dev.eps_bus]
            else:  # electric compressor: hydraulically a junction
                self.node_code[i] = _JUNC

        # Per-bus row classification.
        self.bus_code = np.empty(self.n_buses, dtype=int)
        self.bus_pcp = np.full(self.n_buses, -1, dtype=int)
        self.bus_tanphi = np.zeros(self.n_buses)
        for bpos, bus in enumerate(system.eps.buses):
            dev = system.coupling_at_bus(bus.id)
            if bus.kind == "slack":
                self.bus_code[bpos] = _B_SLACK
            elif bus.kind == "PV":
                self.bus_code[bpos] = _B_PV
            elif dev is not None and dev.kind == "electric_compressor":
                self.bus_code[bpos] = _B_PQ_CMP
                self.bus_pcp[bpos] = pcp_pos[bus.id]
                self.bus_tanphi[bpos] = dev.tan_phi
            else:
                self.bus_code[bpos] = _B_PQ

        # Coupling extra rows in pcp order.
        self.extra = []
        for c, bid in enumerate(pcp_buses):
            dev = system.coupling_at_bus(bid)
            bpos = system.eps.bus_index(bid)
            if dev.kind == "gt_slack":
                self.extra.append(("slack_p", bpos, c, 0.0))
            else:
                node_pos = gas.node_index(dev.gas_node)
                heads = np.nonzero(self.from_pos == node_pos)[0]
                self.extra.append(("compressor", bpos, c, dev.efficiency / base, heads))

        self.n_rows = 2 * self.n_pipes + 2 * self.n_nodes + 2 * self.n_buses + self.n_pcp

    # ------------------------------------------------------------------

    def row_scale(self) -> np.ndarray:
        s = np.ones(self.n_rows)
        s[: 2 * self.n_pipes] = PRESSURE_ROW_SCALE
        base = 2 * self.n_pipes + self.n_nodes
        for i in range(self.n_nodes):
            if self.node_code[i] == _SRC:
                s[base + i] = PRESSURE_ROW_SCALE
        return s

    def residual(self, x: np.ndarray, bv: BoundaryValues) -> np.ndarray:
        idx = self.system.incidence
        ix = self.idx
        r = np.empty(self.n_rows)
        j = self.n_pipes
        head_pi = x[ix.head_pi] if j else np.zeros(0)
        head_m = x[ix.head_m] if j else np.zeros(0)
        tail_pi = x[ix.tail_pi] if j else np.zeros(0)
        tail_m = x[ix.tail_m] if j else np.zeros(0)
        node_pi = x[ix.node_pi]
        node_m = x[ix.node_m]
        r[:j] = head_pi - self.k_cmp_from * node_pi[self.from_pos]
        r[j : 2 * j] = tail_pi - node_pi[self.to_pos]
        mass = node_m.copy()
        mass -= idx.k_out @ head_m
        mass += idx.k_in @ tail_m
        r[2 * j : 2 * j + self.n_nodes] = mass

        rb = 2 * j + self.n_nodes
        for i in range(self.n_nodes):
            code = self.node_code[i]
            if code == _SRC:
                r[rb + i] = node_pi[i] - bv.node_pressure[i]
            elif code == _LOAD:
                r[rb + i] = node_m[i] + bv.node_load[i]
            elif code == _JUNC:
                r[rb + i] = node_m[i]
            elif code == _GT_PV:
                r[rb + i] = node_m[i] + self.node_coeff[i] * bv.bus_p[self.node_bus[i]]
            elif code == _P2G:
                r[rb + i] = node_m[i] + self.node_coeff[i] * bv.bus_p[self.node_bus[i]]
            else:  # gt_slack: withdrawal follows the computed injection
                r[rb + i] = node_m[i] + self.node_coeff[i] * x[ix.pcp[self.node_pcp[i]]]

        rb = 2 * j + 2 * self.n_nodes
        if self.n_buses:
            e = x[ix.e]
            f = x[ix.f]
            adm = self.system.admittance
            p_calc, q_calc, _, _ = eps_injections(adm.g, adm.b, e, f)
            for bpos in range(self.n_buses):
                code = self.bus_code[bpos]
                r0 = rb + 2 * bpos
                if code == _B_SLACK:
                    r[r0] = e[bpos] - bv.slack_e
                    r[r0 + 1] = f[bpos] - bv.slack_f
                elif code == _B_PV:
                    r[r0] = p_calc[bpos] - bv.bus_p[bpos]
                    r[r0 + 1] = e[bpos] ** 2 + f[bpos] ** 2 - bv.bus_u[bpos] ** 2
                elif code == _B_PQ:
                    r[r0] = p_calc[bpos] - bv.bus_p[bpos]
                    r[r0 + 1] = q_calc[bpos] - bv.bus_q[bpos]
                else:  # compressor bus: injections defined by the pcp unknown
                    pcp = x[ix.pcp[self.bus_pcp[bpos]]]
                    r[r0] = p_calc[bpos] - pcp
                    r[r0 + 1] = q_calc[bpos] - self.bus_tanphi[bpos] * pcp

        rb = 2 * j + 2 * self.n_nodes + 2 * self.n_buses
        for c, spec in enumerate(self.extra):
            if spec[0] == "slack_p":
                _, bpos, cpos, _ = spec
                r[rb + c] = p_calc[bpos] - x[ix.pcp[cpos]]
            else:
                _, bpos, cpos, coeff, heads = spec
                r[rb + c] = x[ix.pcp[cpos]] + coeff * head_m[heads].sum()
        return r

    def jacobian_triplets(self, x: np.ndarray):
        """(rows, cols, vals) for the closure rows; rows start at 0."""
        idx = self.system.incidence
        ix = self.idx
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        j = self.n_pipes
        for jp in range(j):
            add(jp, ix.head_pi[jp], 1.0)
            add(jp, ix.node_pi[self.from_pos[jp]], -self.k_cmp_from[jp])
            add(j + jp, ix.tail_pi[jp], 1.0)
            add(j + jp, ix.node_pi[self.to_pos[jp]], -1.0)
        rb = 2 * j
        for i in range(self.n_nodes):
            add(rb + i, ix.node_m[i], 1.0)
        for jp in range(j):
            add(rb + self.from_pos[jp], ix.head_m[jp], -1.0)
            add(rb + self.to_pos[jp], ix.tail_m[jp], 1.0)

        rb = 2 * j + self.n_nodes
        for i in range(self.n_nodes):
            code = self.node_code[i]
            if code == _SRC:
                add(rb + i, ix.node_pi[i], 1.0)
            elif code in (_LOAD, _JUNC, _GT_PV, _P2G):
                add(rb + i, ix.node_m[i], 1.0)
            else:
                add(rb + i, ix.node_m[i], 1.0)
                add(rb + i, ix.pcp[self.node_pcp[i]], self.node_coeff[i])

        rb = 2 * j + 2 * self.n_nodes
        if self.n_buses:
            e = x[ix.e]
            f = x[ix.f]
            adm = self.system.admittance
            p_calc, q_calc, ir, ii = eps_injections(adm.g, adm.b, e, f)
            dp_de, dp_df, dq_de, dq_df = eps_jacobian(adm.g, adm.b, e, f, ir, ii)
            for bpos in range(self.n_buses):
                code = self.bus_code[bpos]
                r0 = rb + 2 * bpos
                if code == _B_SLACK:
                    add(r0, ix.e[bpos], 1.0)
                    add(r0 + 1, ix.f[bpos], 1.0)
                    continue
                for c in range(self.n_buses):
                    if dp_de[bpos, c] != 0.0:
                        add(r0, ix.e[c], dp_de[bpos, c])
                    if dp_df[bpos, c] != 0.0:
                        add(r0, ix.f[c], dp_df[bpos, c])
                if code == _B_PV:
                    add(r0 + 1, ix.e[bpos], 2.0 * e[bpos])
                    add(r0 + 1, ix.f[bpos], 2.0 * f[bpos])
                else:
                    for c in range(self.n_buses):
                        if dq_de[bpos, c] != 0.0:
                            add(r0 + 1, ix.e[c], dq_de[bpos, c])
                        if dq_df[bpos, c] != 0.0:
                            add(r0 + 1, ix.f[c], dq_df[bpos, c])
                    if code == _B_PQ_CMP:
                        add(r0, ix.pcp[self.bus_pcp[bpos]], -1.0)
                        add(r0 + 1, ix.pcp[self.bus_pcp[bpos]], -self.bus_tanphi[bpos])

        rb = 2 * j + 2 * self.n_nodes + 2 * self.n_buses
        for c, spec in enumerate(self.extra):
            if spec[0] == "slack_p":
                _, bpos, cpos, _ = spec
                for cc in range(self.n_buses):
                    if dp_de[bpos, cc] != 0.0:
                        add(rb + c, ix.e[cc], dp_de[bpos, cc])
                    if dp_df[bpos, cc] != 0.0:
                        add(rb + c, ix.f[cc], dp_df[bpos, cc])
                add(rb + c, ix.pcp[cpos], -1.0)
            else:
                _, bpos, cpos, coeff, heads = spec
                add(rb + c, ix.pcp[cpos], 1.0)
                for jp in heads:
                    add(rb + c, ix.head_m[jp], coeff)
        return np.array(rows), np.array(cols), np.array(vals)


def residual_report(system: IegsSystem, layout, state_x: np.ndarray, bv: BoundaryValues) -> dict:
    """Maximum absolute closure residual per family for one sampled state.

    ``state_x`` is the full layout-ordered state vector; used to verify
    trajectories independently of how they were produced.
    """
    gas = system.gas
    heads_pi = np.array([layout.pipe_pi(j, 0) for j in range(len(gas.pipelines))], dtype=int)
    heads_m = np.array([layout.pipe_m(j, 0) for j in range(len(gas.pipelines))], dtype=int)
    tails_pi = np.array(
        [layout.pipe_pi(j, layout.n_points[j] - 1) for j in range(len(gas.pipelines))],
        dtype=int,
    )
    tails_m = np.array(
        [layout.pipe_m(j, layout.n_points[j] - 1) for j in range(len(gas.pipelines))],
        dtype=int,
    )
    idx = ClosureIndex(
        head_pi=heads_pi,
        head_m=heads_m,
        tail_pi=tails_pi,
        tail_m=tails_m,
        node_pi=np.arange(layout.node_pi_base, layout.node_pi_base + layout.n_nodes),
        node_m=np.arange(layout.node_m_base, layout.node_m_base + layout.n_nodes),
        e=np.arange(layout.e_base, layout.e_base + layout.n_buses),
        f=np.arange(layout.f_base, layout.f_base + layout.n_buses),
        pcp=np.arange(layout.pcp_base, layout.pcp_base + layout.n_pcp),
    )
    asm = ClosureAssembler(system, idx)
    r = asm.residual(state_x, bv)
    j, i, b = asm.n_pipes, asm.n_nodes, asm.n_buses

    def mx(a):
        return float(np.max(np.abs(a))) if a.size else 0.0

    return {
        "pressure_consistency": mx(r[: 2 * j]),
        "mass_balance": mx(r[2 * j : 2 * j + i]),
        "node_boundary": mx(r[2 * j + i : 2 * j + 2 * i]),
        "power_flow": mx(r[2 * j + 2 * i : 2 * j + 2 * i + 2 * b]),
        "coupling": mx(r[2 * j + 2 * i + 2 * b :]),
    }
