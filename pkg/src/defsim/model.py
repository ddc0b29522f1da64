"""Static description of a coupled gas/electric system.

Gas side: nodes joined by pipelines, each pipeline carrying a distributed
pressure/mass-flow state. Pipeline orientation fixes the coordinate: the
head (l = 0) sits at ``from_node``, the tail (l = L) at ``to_node``, so a
positive mass flow runs from ``from_node`` to ``to_node``. A node with a
compressor ratio boosts the pressure seen by the heads of its outgoing
pipelines. Electric side: buses and branches in per-unit, solved as
steady-state power flow in rectangular voltage coordinates. Coupling
devices tie one gas node to one bus.

Sign convention: nodal gas injection ``m_nd`` is positive into the
network (sources positive, withdrawals negative). Bus power injections
are positive for generation. These fix the coupling-device signs: a gas
turbine withdraws gas (m_nd < 0) and injects power (p > 0); a
power-to-gas unit consumes power (p < 0) and injects gas (m_nd > 0); an
electric compressor consumes power in proportion to the flow leaving its
gas node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError

GAS_NODE_KINDS = ("source", "load", "junction")
BUS_KINDS = ("slack", "PV", "PQ")
COUPLING_KINDS = ("electric_compressor", "gt_slack", "gt_pv", "p2g")

# Gas node kind each coupling device must sit on. Turbines and
# power-to-gas units occupy load nodes whose injection comes from the
# coupling equation instead of a boundary signal; a driven compressor
# node is hydraulically a junction.
_COUPLING_NODE_KIND = {
    "electric_compressor": "junction",
    "gt_slack": "load",
    "gt_pv": "load",
    "p2g": "load",
}
_COUPLING_BUS_KIND = {
    "electric_compressor": "PQ",
    "gt_slack": "slack",
    "gt_pv": "PV",
    "p2g": "PQ",
}


@dataclass(frozen=True)
class Pipeline:
    id: str
    from_node: str
    to_node: str
    length_m: float
    diameter_m: float
    friction: float
    cross_section_m2: float | None = None

    def __post_init__(self):
        if self.cross_section_m2 is None:
            object.__setattr__(
                self, "cross_section_m2", math.pi * self.diameter_m**2 / 4.0
            )

    def resistance(self, sound_speed_mps: float) -> float:
        """Squared-pressure drop per unit (m|m| * length)."""
        s = self.cross_section_m2
        return self.friction * sound_speed_mps**2 / (self.diameter_m * s * s)


@dataclass(frozen=True)
class GasNode:
    id: str
    kind: str
    compressor_ratio: float = 1.0


@dataclass(frozen=True)
class GasNetwork:
    nodes: tuple[GasNode, ...]
    pipelines: tuple[Pipeline, ...]
    sound_speed_mps: float

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate gas node id")
        pids = [p.id for p in self.pipelines]
        if len(set(pids)) != len(pids):
            raise ModelError("duplicate pipeline id")
        object.__setattr__(self, "_node_ix", {n.id: i for i, n in enumerate(self.nodes)})
        object.__setattr__(self, "_pipe_ix", {p.id: j for j, p in enumerate(self.pipelines)})
        for p in self.pipelines:
            if p.from_node not in self._node_ix or p.to_node not in self._node_ix:
                raise ModelError(
                    f"pipeline '{p.id}' references an undeclared node "
                    f"('{p.from_node}' -> '{p.to_node}')"
                )
            if p.from_node == p.to_node:
                raise ModelError(f"pipeline '{p.id}' is a self-loop")

    def node_index(self, node_id: str) -> int:
        return self._node_ix[node_id]

    def pipe_index(self, pipe_id: str) -> int:
        return self._pipe_ix[pipe_id]


@dataclass(frozen=True)
class IncidenceSet:
    """0/1 node-pipeline attachment matrices plus per-node compressor ratios.

    ``k_out[i, j] = 1`` when pipeline j's head (l = 0) sits at node i, i.e.
    gas leaving node i enters pipeline j there; ``k_in[i, j] = 1`` when the
    tail (l = L) sits at node i.
    """

    k_in: np.ndarray
    k_out: np.ndarray
    k_cmp: np.ndarray


def build_incidence(gas: GasNetwork) -> IncidenceSet:
    n_nodes = len(gas.nodes)
    n_pipes = len(gas.pipelines)
    k_in = np.zeros((n_nodes, n_pipes))
    k_out = np.zeros((n_nodes, n_pipes))
    for j, p in enumerate(gas.pipelines):
        try:
            k_out[gas.node_index(p.from_node), j] = 1.0
            k_in[gas.node_index(p.to_node), j] = 1.0
        except KeyError as exc:
            raise ModelError(f"pipeline '{p.id}' has a dangling endpoint: {exc}") from exc
    k_cmp = np.array([n.compressor_ratio for n in gas.nodes])
    return IncidenceSet(k_in=k_in, k_out=k_out, k_cmp=k_cmp)


@dataclass(frozen=True)
class EpsBus:
    id: str
    kind: str


@dataclass(frozen=True)
class EpsBranch:
    from_bus: str
    to_bus: str
    series_resistance_pu: float
    series_reactance_pu: float
    shunt_susceptance_pu: float = 0.0


@dataclass(frozen=True)
class EpsGrid:
    buses: tuple[EpsBus, ...]
    branches: tuple[EpsBranch, ...]
    power_base_w: float = 1.0e8

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate bus id")
        object.__setattr__(self, "_bus_ix", {b.id: i for i, b in enumerate(self.buses)})

    def bus_index(self, bus_id: str) -> int:
        return self._bus_ix[bus_id]

    @classmethod
    def empty(cls):
        return cls(buses=(), branches=())


@dataclass(frozen=True)
class AdmittanceSet:
    """Real and imaginary parts of the nodal admittance matrix (g + jb)."""

    g: np.ndarray
    b: np.ndarray


def build_admittance(buses, branches) -> AdmittanceSet:
    grid = buses if isinstance(buses, EpsGrid) else EpsGrid(tuple(buses), tuple(branches))
    n = len(grid.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in grid.branches:
        z = complex(br.series_resistance_pu, br.series_reactance_pu)
        if abs(z) == 0.0:
            raise ModelError(
                f"branch {br.from_bus}-{br.to_bus} has zero series impedance"
            )
        try:
            k = grid.bus_index(br.from_bus)
            m = grid.bus_index(br.to_bus)
        except KeyError as exc:
            raise ModelError(f"branch references an undeclared bus: {exc}") from exc
        ys = 1.0 / z
        ysh = 0.5j * br.shunt_susceptance_pu
        y[k, k] += ys + ysh
        y[m, m] += ys + ysh
        y[k, m] -= ys
        y[m, k] -= ys
    return AdmittanceSet(g=y.real.copy(), b=y.imag.copy())


@dataclass(frozen=True)
class CouplingDevice:
    """A gas-node/bus tie.

    ``efficiency`` units depend on the kind: W per (kg/s) for compressors
    and gas turbines, (kg/s) per W for power-to-gas. ``tan_phi`` relates
    reactive to active power and is only consumed for compressor buses
    (turbine and power-to-gas reactive behaviour comes from the bus kind
    and scenario signals).
    """

    kind: str
    gas_node: str
    eps_bus: str
    efficiency: float
    tan_phi: float = 0.0


@dataclass(frozen=True)
class IegsSystem:
    gas: GasNetwork
    eps: EpsGrid
    couplings: tuple[CouplingDevice, ...]
    incidence: IncidenceSet = field(repr=False, default=None)
    admittance: AdmittanceSet = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if self.incidence is None:
            object.__setattr__(self, "incidence", build_incidence(self.gas))
        if self.admittance is None:
            object.__setattr__(
                self, "admittance", build_admittance(self.eps, self.eps.branches)
            )

    # Convenience views used throughout the solvers -------------------------

    def coupling_at_node(self, node_id: str) -> CouplingDevice | None:
        for c in self.couplings:
            if c.gas_node == node_id:
                return c
        return None

    def coupling_at_bus(self, bus_id: str) -> CouplingDevice | None:
        for c in self.couplings:
            if c.eps_bus == bus_id:
                return c
        return None

    def gt_slack_nodes(self) -> set[str]:
        return {c.gas_node for c in self.couplings if c.kind == "gt_slack"}

    def pcp_buses(self) -> list[str]:
        """Buses whose active injection is an unknown of the coupled problem,
        in declaration order: the slack-turbine bus and compressor buses."""
        return [
            c.eps_bus
            for c in self.couplings
            if c.kind in ("gt_slack", "electric_compressor")
        ]


def build_system(gas: GasNetwork, eps: EpsGrid | None = None, couplings=()) -> IegsSystem:
    return IegsSystem(gas=gas, eps=eps or EpsGrid.empty(), couplings=tuple(couplings))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    where: str = ""

    def __str__(self):
        loc = f" [{self.where}]" if self.where else ""
        return f"{self.code}: {self.message}{loc}"


def validate(system: IegsSystem) -> list[Diagnostic]:
    """Check every invariant the constructors cannot; returns one diagnostic
    per violation with a stable code. Empty list means the system is sound."""
    out = []
    gas = system.gas

    if gas.sound_speed_mps <= 0:
        out.append(Diagnostic("sound-speed", "sound speed must be positive"))

    for p in gas.pipelines:
        if p.length_m <= 0 or p.diameter_m <= 0 or p.friction <= 0:
            out.append(
                Diagnostic(
                    "pipeline-geometry",
                    "length, diameter and friction factor must be positive",
                    f"pipeline {p.id}",
                )
            )
            continue
        ref = math.pi * p.diameter_m**2 / 4.0
        if abs(p.cross_section_m2 - ref) > 1e-12 * ref:
            out.append(
                Diagnostic(
                    "cross-section-mismatch",
                    f"cross section {p.cross_section_m2} inconsistent with diameter "
                    f"(expected {ref})",
                    f"pipeline {p.id}",
                )
            )

    for n in gas.nodes:
        if n.kind not in GAS_NODE_KINDS:
            out.append(Diagnostic("node-kind", f"unknown kind '{n.kind}'", f"node {n.id}"))
        if n.compressor_ratio < 1.0:
            out.append(
                Diagnostic(
                    "compressor-ratio",
                    f"compressor ratio {n.compressor_ratio} below 1",
                    f"node {n.id}",
                )
            )

    if gas.nodes and not _gas_connected(gas):
        out.append(Diagnostic("gas-disconnected", "gas node/pipeline graph is not connected"))

    if gas.nodes and not any(n.kind == "source" for n in gas.nodes):
        out.append(
            Diagnostic(
                "no-gas-source",
                "at least one source node is required to anchor the pressure level",
            )
        )

    buses = system.eps.buses
    if buses:
        slack = [b for b in buses if b.kind == "slack"]
        if len(slack) == 0:
            out.append(Diagnostic("slack-missing", "grid declares buses but no slack bus"))
        elif len(slack) > 1:
            out.append(
                Diagnostic(
                    "multiple-slack",
                    f"exactly one slack bus allowed, found {[b.id for b in slack]}",
                )
            )
        for b in buses:
            if b.kind not in BUS_KINDS:
                out.append(Diagnostic("bus-kind", f"unknown kind '{b.kind}'", f"bus {b.id}"))

    for br in system.eps.branches:
        if math.hypot(br.series_resistance_pu, br.series_reactance_pu) == 0.0:
            out.append(
                Diagnostic(
                    "branch-impedance",
                    "zero series impedance",
                    f"branch {br.from_bus}-{br.to_bus}",
                )
            )

    seen_nodes, seen_buses = set(), set()
    for c in system.couplings:
        where = f"coupling {c.kind} {c.gas_node}/{c.eps_bus}"
        if c.kind not in COUPLING_KINDS:
            out.append(Diagnostic("coupling-kind", f"unknown kind '{c.kind}'", where))
            continue
        if c.efficiency <= 0:
            out.append(Diagnostic("coupling-efficiency", "efficiency must be positive", where))
        if c.gas_node in seen_nodes:
            out.append(Diagnostic("duplicate-coupling", "gas node already coupled", where))
        if c.eps_bus in seen_buses:
            out.append(Diagnostic("duplicate-coupling", "bus already coupled", where))
        seen_nodes.add(c.gas_node)
        seen_buses.add(c.eps_bus)

        try:
            node = gas.nodes[gas.node_index(c.gas_node)]
        except KeyError:
            out.append(Diagnostic("coupling-ref", f"unknown gas node '{c.gas_node}'", where))
            node = None
        try:
            bus = buses[system.eps.bus_index(c.eps_bus)]
        except KeyError:
            out.append(Diagnostic("coupling-ref", f"unknown bus '{c.eps_bus}'", where))
            bus = None

        if bus is not None and bus.kind != _COUPLING_BUS_KIND[c.kind]:
            out.append(
                Diagnostic(
                    "coupling-bus-kind",
                    f"a {c.kind} device requires a {_COUPLING_BUS_KIND[c.kind]} bus, "
                    f"bus '{bus.id}' is {bus.kind}",
                    where,
                )
            )
        if node is not None:
            if node.kind != _COUPLING_NODE_KIND[c.kind]:
                out.append(
                    Diagnostic(
                        "coupling-node-kind",
                        f"a {c.kind} device requires a {_COUPLING_NODE_KIND[c.kind]} gas "
                        f"node, node '{node.id}' is {node.kind}",
                        where,
                    )
                )
            if c.kind == "electric_compressor" and node.compressor_ratio <= 1.0:
                out.append(
                    Diagnostic(
                        "compressor-node-ratio",
                        "an electric compressor's gas node needs compressor_ratio > 1",
                        where,
                    )
                )
    return out


def _gas_connected(gas: GasNetwork) -> bool:
    n = len(gas.nodes)
    adj = [[] for _ in range(n)]
    for p in gas.pipelines:
        a, b = gas.node_index(p.from_node), gas.node_index(p.to_node)
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n
