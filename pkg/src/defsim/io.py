"""File formats: network and scenario documents (strict, versioned JSON),
trajectory result files (delimited text plus a provenance sidecar), and
the comparison report.

Result files are deterministic: values are written with 17 significant
digits so a read-back reproduces the in-memory doubles bit for bit. Wall
clock and other run metadata live in the ``<out>.meta.json`` sidecar, not
in the data file.
"""

from __future__ import annotations

import fnmatch
import json
import math
from pathlib import Path

import numpy as np

from .errors import DefsimError, ScenarioError
from .model import (
    CouplingDevice,
    Diagnostic,
    EpsBranch,
    EpsBus,
    EpsGrid,
    GasNetwork,
    GasNode,
    IegsSystem,
    ModelError,
    Pipeline,
    build_system,
    validate,
)
from .scenario import ExplicitInit, PiecewisePolySignal, Scenario
from .trajectory import Trajectory

NETWORK_FORMAT = "defsim-network"
SCENARIO_FORMAT = "defsim-scenario"
FORMAT_VERSION = 1


class FileFormatError(DefsimError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


def _require_keys(obj, allowed, required, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise FileFormatError(
            f"{where}: unknown fields {sorted(unknown)}",
            [Diagnostic("unknown-field", f"unknown fields {sorted(unknown)}", where)],
        )
    missing = set(required) - set(obj)
    if missing:
        raise FileFormatError(
            f"{where}: missing fields {sorted(missing)}",
            [Diagnostic("missing-field", f"missing fields {sorted(missing)}", where)],
        )


def _check_header(doc, expected_format, where):
    _require_keys(
        doc,
        allowed=set(doc) | {"format", "version"},
        required=["format", "version"],
        where=where,
    )
    if doc["format"] != expected_format:
        raise FileFormatError(f"{where}: format is '{doc['format']}', expected '{expected_format}'")
    if doc["version"] != FORMAT_VERSION:
        raise FileFormatError(f"{where}: unsupported version {doc['version']}")


# --- network ---------------------------------------------------------------


def load_network(path) -> IegsSystem:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"cannot read network file {path}: {exc}") from exc
    return network_from_dict(doc, where=str(path))


def network_from_dict(doc, where="network") -> IegsSystem:
    _check_header(doc, NETWORK_FORMAT, where)
    _require_keys(doc, ["format", "version", "gas", "eps", "couplings"], ["gas"], where)

    gas_doc = doc["gas"]
    _require_keys(
        gas_doc,
        ["sound_speed_mps", "nodes", "pipelines"],
        ["sound_speed_mps", "nodes", "pipelines"],
        f"{where}:gas",
    )
    nodes = []
    for i, nd in enumerate(gas_doc["nodes"]):
        w = f"{where}:gas.nodes[{i}]"
        _require_keys(nd, ["id", "kind", "compressor_ratio"], ["id", "kind"], w)
        _check_identifier(nd["id"], w)
        nodes.append(
            GasNode(id=nd["id"], kind=nd["kind"], compressor_ratio=nd.get("compressor_ratio", 1.0))
        )
    pipes = []
    for i, pd in enumerate(gas_doc["pipelines"]):
        w = f"{where}:gas.pipelines[{i}]"
        _require_keys(
            pd,
            ["id", "from_node", "to_node", "length_m", "diameter_m", "friction", "cross_section_m2"],
            ["id", "from_node", "to_node", "length_m", "diameter_m", "friction"],
            w,
        )
        _check_identifier(pd["id"], w)
        pipes.append(
            Pipeline(
                id=pd["id"],
                from_node=pd["from_node"],
                to_node=pd["to_node"],
                length_m=float(pd["length_m"]),
                diameter_m=float(pd["diameter_m"]),
                friction=float(pd["friction"]),
                cross_section_m2=pd.get("cross_section_m2"),
            )
        )
    try:
        gas = GasNetwork(
            nodes=tuple(nodes),
            pipelines=tuple(pipes),
            sound_speed_mps=float(gas_doc["sound_speed_mps"]),
        )
    except ModelError as exc:
        raise FileFormatError(f"{where}:gas: {exc}") from exc

    eps = EpsGrid.empty()
    if "eps" in doc and doc["eps"]:
        eps_doc = doc["eps"]
        _require_keys(eps_doc, ["power_base_w", "buses", "branches"], ["buses", "branches"],
                      f"{where}:eps")
        buses = []
        for i, bd in enumerate(eps_doc["buses"]):
            w = f"{where}:eps.buses[{i}]"
            _require_keys(bd, ["id", "kind"], ["id", "kind"], w)
            _check_identifier(bd["id"], w)
            buses.append(EpsBus(id=bd["id"], kind=bd["kind"]))
        branches = []
        for i, brd in enumerate(eps_doc["branches"]):
            w = f"{where}:eps.branches[{i}]"
            _require_keys(
                brd,
                ["from_bus", "to_bus", "series_resistance_pu", "series_reactance_pu",
                 "shunt_susceptance_pu"],
                ["from_bus", "to_bus", "series_resistance_pu", "series_reactance_pu"],
                w,
            )
            branches.append(
                EpsBranch(
                    from_bus=brd["from_bus"],
                    to_bus=brd["to_bus"],
                    series_resistance_pu=float(brd["series_resistance_pu"]),
                    series_reactance_pu=float(brd["series_reactance_pu"]),
                    shunt_susceptance_pu=float(brd.get("shunt_susceptance_pu", 0.0)),
                )
            )
        try:
            eps = EpsGrid(
                buses=tuple(buses),
                branches=tuple(branches),
                power_base_w=float(eps_doc.get("power_base_w", 1e8)),
            )
        except ModelError as exc:
            raise FileFormatError(f"{where}:eps: {exc}") from exc

    couplings = []
    for i, cd in enumerate(doc.get("couplings", []) or []):
        w = f"{where}:couplings[{i}]"
        _require_keys(
            cd,
            ["kind", "gas_node", "eps_bus", "efficiency", "tan_phi"],
            ["kind", "gas_node", "eps_bus", "efficiency"],
            w,
        )
        couplings.append(
            CouplingDevice(
                kind=cd["kind"],
                gas_node=cd["gas_node"],
                eps_bus=cd["eps_bus"],
                efficiency=float(cd["efficiency"]),
                tan_phi=float(cd.get("tan_phi", 0.0)),
            )
        )
    try:
        system = build_system(gas, eps, couplings)
    except ModelError as exc:
        raise FileFormatError(f"{where}: {exc}") from exc
    diags = validate(system)
    if diags:
        raise FileFormatError(
            f"{where}: validation failed: " + "; ".join(str(d) for d in diags), diags
        )
    return system


_IDENT_BAD = set(",. \t\n")


def _check_identifier(ident, where):
    if not ident or any(ch in _IDENT_BAD for ch in str(ident)):
        raise FileFormatError(
            f"{where}: identifier '{ident}' may not contain dots, commas or whitespace",
            [Diagnostic("bad-identifier", f"invalid identifier '{ident}'", where)],
        )


def network_to_dict(system: IegsSystem) -> dict:
    doc = {
        "format": NETWORK_FORMAT,
        "version": FORMAT_VERSION,
        "gas": {
            "sound_speed_mps": system.gas.sound_speed_mps,
            "nodes": [
                {"id": n.id, "kind": n.kind, "compressor_ratio": n.compressor_ratio}
                for n in system.gas.nodes
            ],
            "pipelines": [
                {
                    "id": p.id,
                    "from_node": p.from_node,
                    "to_node": p.to_node,
                    "length_m": p.length_m,
                    "diameter_m": p.diameter_m,
                    "friction": p.friction,
                    "cross_section_m2": p.cross_section_m2,
                }
                for p in system.gas.pipelines
            ],
        },
    }
    if system.eps.buses:
        doc["eps"] = {
            "power_base_w": system.eps.power_base_w,
            "buses": [{"id": b.id, "kind": b.kind} for b in system.eps.buses],
            "branches": [
                {
                    "from_bus": br.from_bus,
                    "to_bus": br.to_bus,
                    "series_resistance_pu": br.series_resistance_pu,
                    "series_reactance_pu": br.series_reactance_pu,
                    "shunt_susceptance_pu": br.shunt_susceptance_pu,
                }
                for br in system.eps.branches
            ],
        }
    if system.couplings:
        doc["couplings"] = [
            {
                "kind": c.kind,
                "gas_node": c.gas_node,
                "eps_bus": c.eps_bus,
                "efficiency": c.efficiency,
                "tan_phi": c.tan_phi,
            }
            for c in system.couplings
        ]
    return doc


def save_network(system: IegsSystem, path):
    Path(path).write_text(json.dumps(network_to_dict(system), indent=2) + "\n")


# --- scenario ----------------------------------------------------------------


def _signal_from_json(obj, where) -> PiecewisePolySignal:
    if isinstance(obj, (int, float)):
        return PiecewisePolySignal.constant(float(obj))
    _require_keys(obj, ["breakpoints", "segments"], ["breakpoints", "segments"], where)
    try:
        return PiecewisePolySignal(tuple(obj["breakpoints"]), tuple(tuple(s) for s in obj["segments"]))
    except ScenarioError as exc:
        raise FileFormatError(f"{where}: {exc}") from exc


def _signal_to_json(sig: PiecewisePolySignal):
    if len(sig.segments) == 1 and len(sig.segments[0]) == 1 and math.isinf(sig.domain_end):
        return sig.segments[0][0]
    return {"breakpoints": list(sig.breakpoints), "segments": [list(s) for s in sig.segments]}


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"cannot read scenario file {path}: {exc}") from exc
    return scenario_from_dict(doc, where=str(path))


def scenario_from_dict(doc, where="scenario") -> Scenario:
    _check_header(doc, SCENARIO_FORMAT, where)
    _require_keys(
        doc,
        ["format", "version", "horizon_s", "initialization", "gas_pressure", "gas_load",
         "eps_pv", "eps_pq", "eps_slack"],
        ["horizon_s"],
        where,
    )
    gas_pressure = {
        k: _signal_from_json(v, f"{where}:gas_pressure.{k}")
        for k, v in (doc.get("gas_pressure") or {}).items()
    }
    gas_load = {
        k: _signal_from_json(v, f"{where}:gas_load.{k}")
        for k, v in (doc.get("gas_load") or {}).items()
    }
    eps_pv = {}
    for k, v in (doc.get("eps_pv") or {}).items():
        w = f"{where}:eps_pv.{k}"
        _require_keys(v, ["p", "U"], ["p", "U"], w)
        eps_pv[k] = (_signal_from_json(v["p"], w + ".p"), _signal_from_json(v["U"], w + ".U"))
    eps_pq = {}
    for k, v in (doc.get("eps_pq") or {}).items():
        w = f"{where}:eps_pq.{k}"
        _require_keys(v, ["p", "q"], ["p", "q"], w)
        eps_pq[k] = (_signal_from_json(v["p"], w + ".p"), _signal_from_json(v["q"], w + ".q"))
    eps_slack = None
    if doc.get("eps_slack"):
        w = f"{where}:eps_slack"
        _require_keys(doc["eps_slack"], ["e", "f"], ["e", "f"], w)
        eps_slack = (
            _signal_from_json(doc["eps_slack"]["e"], w + ".e"),
            _signal_from_json(doc["eps_slack"]["f"], w + ".f"),
        )
    init = doc.get("initialization", "steady")
    if isinstance(init, dict):
        w = f"{where}:initialization"
        _require_keys(init, ["mode", "pipelines", "nodes", "buses", "pcp"], ["mode"], w)
        if init["mode"] != "explicit":
            raise FileFormatError(f"{w}: unknown mode '{init['mode']}'")
        pipes = init.get("pipelines") or {}
        nodes = init.get("nodes") or {}
        buses = init.get("buses") or {}
        init = ExplicitInit(
            pipe_pi={k: v["pi"] for k, v in pipes.items()},
            pipe_m={k: v["m"] for k, v in pipes.items()},
            node_pi={k: v["pi"] for k, v in nodes.items()},
            node_m={k: v["m"] for k, v in nodes.items()},
            e={k: v["e"] for k, v in buses.items()},
            f={k: v["f"] for k, v in buses.items()},
            pcp=init.get("pcp") or {},
        )
    elif init != "steady":
        raise FileFormatError(f"{where}: unknown initialization '{init}'")
    return Scenario(
        horizon_s=float(doc["horizon_s"]),
        gas_pressure=gas_pressure,
        gas_load=gas_load,
        eps_pv=eps_pv,
        eps_pq=eps_pq,
        eps_slack=eps_slack,
        initialization=init,
    )


def scenario_to_dict(scn: Scenario) -> dict:
    doc = {
        "format": SCENARIO_FORMAT,
        "version": FORMAT_VERSION,
        "horizon_s": scn.horizon_s,
        "initialization": "steady" if scn.initialization == "steady" else "explicit",
        "gas_pressure": {k: _signal_to_json(v) for k, v in scn.gas_pressure.items()},
        "gas_load": {k: _signal_to_json(v) for k, v in scn.gas_load.items()},
    }
    if scn.eps_pv:
        doc["eps_pv"] = {
            k: {"p": _signal_to_json(p), "U": _signal_to_json(u)} for k, (p, u) in scn.eps_pv.items()
        }
    if scn.eps_pq:
        doc["eps_pq"] = {
            k: {"p": _signal_to_json(p), "q": _signal_to_json(q)} for k, (p, q) in scn.eps_pq.items()
        }
    if scn.eps_slack:
        doc["eps_slack"] = {
            "e": _signal_to_json(scn.eps_slack[0]),
            "f": _signal_to_json(scn.eps_slack[1]),
        }
    return doc


def save_scenario(scn: Scenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2) + "\n")


# --- trajectories -------------------------------------------------------------


def _derived_columns(columns, values):
    """Append per-bus voltage magnitude and angle columns derived from e, f."""
    extra_names, extra_vals = [], []
    for name in columns:
        if name.startswith("bus.") and name.endswith(".e"):
            bus = name[4:-2]
            fname = f"bus.{bus}.f"
            if fname in columns:
                e = values[:, columns.index(name)]
                f = values[:, columns.index(fname)]
                extra_names += [f"bus.{bus}.U", f"bus.{bus}.theta"]
                extra_vals += [np.hypot(e, f), np.arctan2(f, e)]
    if not extra_names:
        return columns, values
    return list(columns) + extra_names, np.column_stack([values] + extra_vals)


def write_trajectory(traj: Trajectory, path):
    path = Path(path)
    columns, values = _derived_columns(list(traj.columns), traj.values)
    lines = ["time," + ",".join(columns)]
    for t, row in zip(traj.times, values):
        lines.append(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    meta = dict(traj.provenance)
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        lines = path.read_text().strip().split("\n")
    except OSError as exc:
        raise FileFormatError(f"cannot read trajectory {path}: {exc}") from exc
    header = lines[0].split(",")
    if header[0] != "time":
        raise FileFormatError(f"{path}: first column must be 'time'")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FileFormatError(f"{path}: ragged rows")
    prov = {}
    meta = Path(str(path) + ".meta.json")
    if meta.exists():
        prov = json.loads(meta.read_text())
    return Trajectory(times=data[:, 0], columns=header[1:], values=data[:, 1:], provenance=prov)


# --- comparison ----------------------------------------------------------------


_CLASS_OF = (
    ("pressure", lambda n: n.endswith(".pi") or ".pi." in n),
    ("mass_flow", lambda n: n.endswith(".m") or ".m." in n),
    ("voltage", lambda n: n.startswith("bus.") and (n.endswith(".e") or n.endswith(".f"))),
)


def compare(ref: Trajectory, test: Trajectory, vars_glob=None, resample=False) -> dict:
    ref_cols = set(ref.columns)
    test_cols = set(test.columns)
    if vars_glob:
        ref_cols = {c for c in ref_cols if fnmatch.fnmatch(c, vars_glob)}
        test_cols = {c for c in test_cols if fnmatch.fnmatch(c, vars_glob)}
    common = sorted(ref_cols & test_cols)
    if not common:
        raise DefsimError(
            "no common variables to compare; only in reference: "
            f"{sorted(ref_cols - test_cols)[:10]}, only in test: "
            f"{sorted(test_cols - ref_cols)[:10]}"
        )
    if ref.times.shape == test.times.shape and np.allclose(
        ref.times, test.times, rtol=0, atol=1e-9
    ):
        test_vals = {c: test.column(c) for c in common}
    elif resample:
        if test.times[0] > ref.times[0] + 1e-9 or test.times[-1] < ref.times[-1] - 1e-9:
            raise DefsimError("test trajectory does not cover the reference time span")
        test_vals = {c: np.interp(ref.times, test.times, test.column(c)) for c in common}
    else:
        raise DefsimError(
            "sample grids differ; pass resample=True (--resample) to interpolate"
        )

    per_var = {}
    class_acc = {name: [] for name, _ in _CLASS_OF}
    for cname in common:
        err = test_vals[cname] - ref.column(cname)
        per_var[cname] = float(np.sqrt(np.mean(err * err)))
        for klass, match in _CLASS_OF:
            if match(cname):
                class_acc[klass].append(err)
                break
    classes = {
        klass: (float(np.sqrt(np.mean(np.concatenate(errs) ** 2))) if errs else None)
        for klass, errs in class_acc.items()
    }
    report = {
        "n_samples": int(ref.times.shape[0]),
        "n_variables": len(common),
        "per_variable": per_var,
        "classes": classes,
        "missing_in_test": sorted(ref_cols - test_cols),
        "missing_in_reference": sorted(test_cols - ref_cols),
    }
    rw = ref.provenance.get("wall_clock_s")
    tw = test.provenance.get("wall_clock_s")
    if rw and tw:
        report["runtime_ratio_test_over_ref"] = tw / rw
    return report
