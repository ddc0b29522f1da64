"""Independent oracles used by the tests.

``monolithic_order_solve`` rebuilds the complete order-k linear system as
one dense matrix straight from the governing equations (interior
recursion rows, end-point extrapolations, nodal relations, power flow,
couplings) and solves it with a generic LU. It shares no assembly code
with the staged solver, so agreement checks the block structure,
right-hand sides and index bookkeeping end to end.
"""

import numpy as np

from defsim.closure import eps_injections, eps_jacobian
from defsim.series import Series, friction_coeff


def monolithic_order_solve(system, grids, layout, bound, coeffs, t0, k):
    gas = system.gas
    c = gas.sound_speed_mps
    n = layout.n_state
    a_mat = np.zeros((n, n))
    rhs = np.zeros(n)
    bt = bound.taylor_at(t0, k)
    base = system.eps.power_base_w
    row = 0

    # pipeline interior: k u[k] = central stencil + friction at order k-1
    for j, (pipe, grid) in enumerate(zip(gas.pipelines, grids)):
        s = pipe.cross_section_m2
        dl = grid.dl_m
        fric = pipe.friction * c * c / (2.0 * pipe.diameter_m * s)
        npts = layout.n_points[j]
        for pt in range(1, npts - 1):
            a_mat[row, layout.pipe_pi(j, pt)] = k
            rhs[row] = (
                -(c * c / s)
                * (coeffs[k - 1, layout.pipe_m(j, pt + 1)] - coeffs[k - 1, layout.pipe_m(j, pt - 1)])
                / (2.0 * dl)
            )
            row += 1
            a_mat[row, layout.pipe_m(j, pt)] = k
            mser = Series(coeffs[:k, layout.pipe_m(j, pt)])
            piser = Series(coeffs[:k, layout.pipe_pi(j, pt)])
            z = friction_coeff(mser, piser, coeffs[0, layout.pipe_m(j, pt)], k - 1)
            rhs[row] = (
                -s
                * (coeffs[k - 1, layout.pipe_pi(j, pt + 1)] - coeffs[k - 1, layout.pipe_pi(j, pt - 1)])
                / (2.0 * dl)
                - fric * z
            )
            row += 1

    # end-point extrapolations along the characteristic combinations
    for j, pipe in enumerate(gas.pipelines):
        a = c / pipe.cross_section_m2
        npts = layout.n_points[j]
        n_last = npts - 1
        for pts, sgn in (((0, 1, 2), -1.0), ((n_last, n_last - 1, n_last - 2), 1.0)):
            for w, pt in zip((1.0, -2.0, 1.0), pts):
                a_mat[row, layout.pipe_pi(j, pt)] += w
                a_mat[row, layout.pipe_m(j, pt)] += w * sgn * a
            row += 1

    # nodal pressure consistency and mass balance
    inc = system.incidence
    for j, pipe in enumerate(gas.pipelines):
        f_pos = gas.node_index(pipe.from_node)
        t_pos = gas.node_index(pipe.to_node)
        a_mat[row, layout.pipe_pi(j, 0)] = 1.0
        a_mat[row, layout.node_pi(f_pos)] = -inc.k_cmp[f_pos]
        row += 1
        a_mat[row, layout.pipe_pi(j, layout.n_points[j] - 1)] = 1.0
        a_mat[row, layout.node_pi(t_pos)] = -1.0
        row += 1
    for i in range(len(gas.nodes)):
        a_mat[row, layout.node_m(i)] = 1.0
        for j in range(len(gas.pipelines)):
            if inc.k_out[i, j]:
                a_mat[row, layout.pipe_m(j, 0)] = -1.0
            if inc.k_in[i, j]:
                a_mat[row, layout.pipe_m(j, layout.n_points[j] - 1)] = 1.0
        row += 1

    # per-node boundary / coupling closures
    pcp_buses = system.pcp_buses()
    for i, node in enumerate(gas.nodes):
        dev = system.coupling_at_node(node.id)
        if dev is None:
            if node.kind == "source":
                a_mat[row, layout.node_pi(i)] = 1.0
                rhs[row] = bt.node_pressure[k, i]
            elif node.kind == "load":
                a_mat[row, layout.node_m(i)] = 1.0
                rhs[row] = -bt.node_load[k, i]
            else:
                a_mat[row, layout.node_m(i)] = 1.0
        elif dev.kind == "gt_pv":
            a_mat[row, layout.node_m(i)] = 1.0
            rhs[row] = -(base / dev.efficiency) * bt.bus_p[k, system.eps.bus_index(dev.eps_bus)]
        elif dev.kind == "p2g":
            a_mat[row, layout.node_m(i)] = 1.0
            rhs[row] = -dev.efficiency * base * bt.bus_p[k, system.eps.bus_index(dev.eps_bus)]
        elif dev.kind == "gt_slack":
            a_mat[row, layout.node_m(i)] = 1.0
            a_mat[row, layout.pcp(pcp_buses.index(dev.eps_bus))] = base / dev.efficiency
        else:  # electric compressor node is a junction
            a_mat[row, layout.node_m(i)] = 1.0
        row += 1

    # power flow and coupled injections
    n_bus = layout.n_buses
    if n_bus:
        g, b = system.admittance.g, system.admittance.b
        e0 = coeffs[0, layout.e_base : layout.e_base + n_bus]
        f0 = coeffs[0, layout.f_base : layout.f_base + n_bus]
        _, _, ir0, ii0 = eps_injections(g, b, e0, f0)
        dp_de, dp_df, dq_de, dq_df = eps_jacobian(g, b, e0, f0, ir0, ii0)
        cross_p = np.zeros(n_bus)
        cross_q = np.zeros(n_bus)
        cross_u = np.zeros(n_bus)
        for m in range(1, k):
            em = coeffs[m, layout.e_base : layout.e_base + n_bus]
            fm = coeffs[m, layout.f_base : layout.f_base + n_bus]
            ekm = coeffs[k - m, layout.e_base : layout.e_base + n_bus]
            fkm = coeffs[k - m, layout.f_base : layout.f_base + n_bus]
            ir = g @ ekm - b @ fkm
            ii = b @ ekm + g @ fkm
            cross_p += em * ir + fm * ii
            cross_q += fm * ir - em * ii
            cross_u += em * ekm + fm * fkm
        e_cols = np.arange(layout.e_base, layout.e_base + n_bus)
        f_cols = np.arange(layout.f_base, layout.f_base + n_bus)
        for bpos, bus in enumerate(system.eps.buses):
            dev = system.coupling_at_bus(bus.id)
            if bus.kind == "slack":
                a_mat[row, layout.e(bpos)] = 1.0
                rhs[row] = bt.slack_e[k]
                row += 1
                a_mat[row, layout.f(bpos)] = 1.0
                rhs[row] = bt.slack_f[k]
                row += 1
            elif bus.kind == "PV":
                a_mat[row, e_cols] = dp_de[bpos]
                a_mat[row, f_cols] = dp_df[bpos]
                rhs[row] = bt.bus_p[k, bpos] - cross_p[bpos]
                row += 1
                a_mat[row, layout.e(bpos)] = 2.0 * e0[bpos]
                a_mat[row, layout.f(bpos)] = 2.0 * f0[bpos]
                rhs[row] = (
                    float(np.dot(bt.bus_u[: k + 1, bpos], bt.bus_u[k::-1, bpos])) - cross_u[bpos]
                )
                row += 1
            else:
                a_mat[row, e_cols] = dp_de[bpos]
                a_mat[row, f_cols] = dp_df[bpos]
                if dev is not None and dev.kind == "electric_compressor":
                    cpos = pcp_buses.index(bus.id)
                    a_mat[row, layout.pcp(cpos)] = -1.0
                    rhs[row] = -cross_p[bpos]
                    row += 1
                    a_mat[row, e_cols] = dq_de[bpos]
                    a_mat[row, f_cols] = dq_df[bpos]
                    a_mat[row, layout.pcp(cpos)] = -dev.tan_phi
                    rhs[row] = -cross_q[bpos]
                else:
                    rhs[row] = bt.bus_p[k, bpos] - cross_p[bpos]
                    row += 1
                    a_mat[row, e_cols] = dq_de[bpos]
                    a_mat[row, f_cols] = dq_df[bpos]
                    rhs[row] = bt.bus_q[k, bpos] - cross_q[bpos]
                row += 1
        for cpos, bid in enumerate(pcp_buses):
            dev = system.coupling_at_bus(bid)
            bpos = system.eps.bus_index(bid)
            if dev.kind == "gt_slack":
                a_mat[row, e_cols] = dp_de[bpos]
                a_mat[row, f_cols] = dp_df[bpos]
                a_mat[row, layout.pcp(cpos)] = -1.0
                rhs[row] = -cross_p[bpos]
            else:
                a_mat[row, layout.pcp(cpos)] = 1.0
                node_pos = gas.node_index(dev.gas_node)
                for j, p in enumerate(gas.pipelines):
                    if gas.node_index(p.from_node) == node_pos:
                        a_mat[row, layout.pipe_m(j, 0)] = dev.efficiency / base
            row += 1

    assert row == n, f"oracle assembled {row} rows for {n} unknowns"
    return np.linalg.solve(a_mat, rhs)
