"""Spatial semi-discretization of the pipeline dynamics.

Each pipeline gets a uniform grid of n_seg segments. Interior points carry
the method-of-lines ODEs obtained by central-differencing the space
derivative:

    dpi_n/dt = -(c^2/S) (m_{n+1} - m_{n-1}) / (2 dl)
    dm_n/dt  = -S (pi_{n+1} - pi_{n-1}) / (2 dl) - lam c^2 m|m| / (2 D S pi)

The central stencil leaves the two end points of every pipeline without an
equation. They are closed by extrapolation along the characteristic
combinations w1 = pi + (c/S) m (tail) and w2 = pi - (c/S) m (head): the
second difference of the respective combination over the last/first three
grid points is required to vanish, which is exact for fields affine in l
and second-order accurate otherwise. Closing with these two extra
equations keeps the assembled coefficient matrix square and, unlike a
one-sided stencil, regular on looped networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefsimError, StructuralError
from .model import IegsSystem, Pipeline

# The boundary closures reference points {0,1,2} and {N, N-1, N-2}; three
# segments keep those stencils inside the grid.
MIN_SEGMENTS = 3


@dataclass(frozen=True)
class PipelineGrid:
    pipeline_id: str
    n_seg: int
    length_m: float

    @property
    def dl_m(self) -> float:
        return self.length_m / self.n_seg

    @property
    def n_points(self) -> int:
        return self.n_seg + 1


def make_grid(pipe: Pipeline, target_dl_m: float) -> PipelineGrid:
    if target_dl_m <= 0:
        raise ValueError("target spatial step must be positive")
    n = max(MIN_SEGMENTS, round(pipe.length_m / target_dl_m))
    return PipelineGrid(pipeline_id=pipe.id, n_seg=int(n), length_m=pipe.length_m)


def make_grids(system: IegsSystem, target_dl_m: float) -> list[PipelineGrid]:
    return [make_grid(p, target_dl_m) for p in system.gas.pipelines]


def interior_rhs(grid: PipelineGrid, pi, m, pipe: Pipeline, c: float):
    """Time derivatives at interior points 1..n_seg-1.

    Raises on nonpositive pressure anywhere: the friction term carries 1/pi
    and the model is outside its validity near vacuum.
    """
    pi = np.asarray(pi, dtype=float)
    m = np.asarray(m, dtype=float)
    if pi.shape[0] != grid.n_points or m.shape[0] != grid.n_points:
        raise ValueError("state arrays must have one entry per grid point")
    if np.any(pi <= 0.0):
        raise DefsimError(f"nonpositive pressure on pipeline '{pipe.id}'")
    s = pipe.cross_section_m2
    two_dl = 2.0 * grid.dl_m
    dpi = -(c * c / s) * (m[2:] - m[:-2]) / two_dl
    fric = (
        pipe.friction
        * c
        * c
        / (2.0 * pipe.diameter_m * s)
        * m[1:-1]
        * np.abs(m[1:-1])
        / pi[1:-1]
    )
    dm = -s * (pi[2:] - pi[:-2]) / two_dl - fric
    return dpi, dm


def tail_boundary_residual(grid: PipelineGrid, pi, m, pipe: Pipeline, c: float) -> float:
    """Second difference of w1 = pi + (c/S) m over the last three points."""
    a = c / pipe.cross_section_m2
    w = np.asarray(pi, dtype=float) + a * np.asarray(m, dtype=float)
    return float(w[-1] - 2.0 * w[-2] + w[-3])


def head_boundary_residual(grid: PipelineGrid, pi, m, pipe: Pipeline, c: float) -> float:
    """Second difference of w2 = pi - (c/S) m over the first three points."""
    a = c / pipe.cross_section_m2
    w = np.asarray(pi, dtype=float) - a * np.asarray(m, dtype=float)
    return float(w[0] - 2.0 * w[1] + w[2])


@dataclass(frozen=True)
class PipeEnd:
    """One pipeline endpoint with its owning node index."""

    pipe_pos: int  # position of the pipeline in declaration order
    end: str  # "head" (l=0) or "tail" (l=L)
    node_pos: int


@dataclass(frozen=True)
class SemiDiscreteLayout:
    """Index bookkeeping for the assembled gas+grid+power system.

    The full state vector is ordered pipelines first (per pipeline all
    pressures 0..N then all flows 0..N), then nodal pressures, nodal
    injections, bus voltage real parts, imaginary parts, and finally the
    unknown coupled-bus active injections.
    """

    n_points: tuple[int, ...]  # per pipeline, n_seg + 1
    pipe_offsets: tuple[int, ...]
    n_state: int
    n_nodes: int
    n_buses: int
    n_pcp: int
    node_pi_base: int
    node_m_base: int
    e_base: int
    f_base: int
    pcp_base: int
    ends: tuple[PipeEnd, ...]
    family_counts: dict

    def pipe_pi(self, pipe_pos: int, point: int) -> int:
        return self.pipe_offsets[pipe_pos] + point

    def pipe_m(self, pipe_pos: int, point: int) -> int:
        return self.pipe_offsets[pipe_pos] + self.n_points[pipe_pos] + point

    def node_pi(self, node_pos: int) -> int:
        return self.node_pi_base + node_pos

    def node_m(self, node_pos: int) -> int:
        return self.node_m_base + node_pos

    def e(self, bus_pos: int) -> int:
        return self.e_base + bus_pos

    def f(self, bus_pos: int) -> int:
        return self.f_base + bus_pos

    def pcp(self, cp_pos: int) -> int:
        return self.pcp_base + cp_pos


def build_layout(system: IegsSystem, grids) -> SemiDiscreteLayout:
    gas = system.gas
    n_points = tuple(g.n_points for g in grids)
    offsets = []
    off = 0
    for np_ in n_points:
        offsets.append(off)
        off += 2 * np_
    n_nodes = len(gas.nodes)
    n_buses = len(system.eps.buses)
    n_pcp = len(system.pcp_buses())
    node_pi_base = off
    node_m_base = off + n_nodes
    e_base = node_m_base + n_nodes
    f_base = e_base + n_buses
    pcp_base = f_base + n_buses
    n_state = pcp_base + n_pcp

    ends = []
    for j, p in enumerate(gas.pipelines):
        ends.append(PipeEnd(j, "head", gas.node_index(p.from_node)))
        ends.append(PipeEnd(j, "tail", gas.node_index(p.to_node)))

    # Equation families; the sum must equal n_state for the assembled
    # transient system to be square.
    interior = sum(2 * (np_ - 2) for np_ in n_points)
    numerical_boundary = 2 * len(gas.pipelines)
    node_mass = n_nodes
    node_pressure = 2 * len(gas.pipelines)
    node_boundary = n_nodes  # one closure per node (signal, junction or coupling)
    power_flow = 2 * n_buses
    coupling_extra = n_pcp  # compressor power balance + slack-turbine injection
    family_counts = {
        "pipe_interior": interior,
        "pipe_boundary_closure": numerical_boundary,
        "node_mass": node_mass,
        "node_pressure": node_pressure,
        "node_boundary": node_boundary,
        "power_flow": power_flow,
        "coupling": coupling_extra,
    }
    return SemiDiscreteLayout(
        n_points=n_points,
        pipe_offsets=tuple(offsets),
        n_state=n_state,
        n_nodes=n_nodes,
        n_buses=n_buses,
        n_pcp=n_pcp,
        node_pi_base=node_pi_base,
        node_m_base=node_m_base,
        e_base=e_base,
        f_base=f_base,
        pcp_base=pcp_base,
        ends=tuple(ends),
        family_counts=family_counts,
    )


def check_square(layout: SemiDiscreteLayout) -> dict:
    """Verify equations == unknowns; returns the per-family count report."""
    n_eq = sum(layout.family_counts.values())
    report = dict(layout.family_counts)
    report["equations"] = n_eq
    report["unknowns"] = layout.n_state
    if n_eq != layout.n_state:
        raise StructuralError(
            f"assembled system is not square: {n_eq} equations vs "
            f"{layout.n_state} unknowns (families: {layout.family_counts})"
        )
    return report
