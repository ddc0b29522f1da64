"""Command-line interface.

Exit codes: 0 success, 2 validation/format failure, 3 solver divergence,
4 I/O errors. Failures print a one-line JSON object to stderr so callers
can parse them.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, io
from .baselines import fdm_solve, moc_solve
from .errors import DefsimError, ScenarioError, SolverError, StructuralError, ValidationFailure
from .taylor_solver import WindowControlConfig, simulate

METHODS = ("dt", "moc", "ieuler", "icentral")


def _controller_from_args(args) -> WindowControlConfig:
    return WindowControlConfig(
        atol_pressure=args.atol_pressure,
        atol_flow=args.atol_flow,
        atol_voltage=args.atol_voltage,
        rtol=args.rtol,
        fac=args.fac,
        fac_min=args.fac_min,
        fac_max=args.fac_max,
        dt_init=args.dt_init,
        dt_max=args.dt_max,
    )


def _add_controller_flags(p):
    d = WindowControlConfig()
    p.add_argument("--atol-pressure", type=float, default=d.atol_pressure,
                   help="window error tolerance, Pa")
    p.add_argument("--atol-flow", type=float, default=d.atol_flow,
                   help="window error tolerance, kg/s")
    p.add_argument("--atol-voltage", type=float, default=d.atol_voltage,
                   help="window error tolerance, pu")
    p.add_argument("--rtol", type=float, default=d.rtol)
    p.add_argument("--fac", type=float, default=d.fac)
    p.add_argument("--fac-min", type=float, default=d.fac_min)
    p.add_argument("--fac-max", type=float, default=d.fac_max)
    p.add_argument("--dt-init", type=float, default=d.dt_init)
    p.add_argument("--dt-max", type=float, default=d.dt_max)


def _run_method(system, scenario, method, args_dict):
    method_args = dict(args_dict)
    if method == "dt":
        return simulate(
            system,
            scenario,
            target_dl_m=method_args.pop("dx"),
            order=int(method_args.pop("order", 5)),
            cfg=method_args.pop("cfg"),
            sample_dt=method_args.pop("sample_dt"),
        )
    if method == "moc":
        return moc_solve(
            system,
            scenario,
            target_dl_m=method_args.pop("dx"),
            sample_dt=method_args.pop("sample_dt"),
        )
    if method in ("ieuler", "icentral"):
        dt = method_args.pop("dt", None)
        if dt is None:
            raise DefsimError(f"method '{method}' requires --dt")
        return fdm_solve(
            system,
            scenario,
            scheme="implicit_euler" if method == "ieuler" else "implicit_central",
            target_dl_m=method_args.pop("dx"),
            dt_s=dt,
            sample_dt=method_args.pop("sample_dt"),
        )
    raise DefsimError(f"unknown method '{method}'")


def cmd_simulate(args) -> int:
    system = io.load_network(args.network)
    scenario = io.load_scenario(args.scenario)
    traj = _run_method(
        system,
        scenario,
        args.method,
        {
            "dx": args.dx,
            "order": args.order,
            "dt": args.dt,
            "sample_dt": args.sample_dt,
            "cfg": _controller_from_args(args),
        },
    )
    traj.provenance["network"] = Path(args.network).name
    traj.provenance["scenario"] = Path(args.scenario).name
    traj.provenance["defsim_version"] = __version__
    io.write_trajectory(traj, args.out)
    return 0


def cmd_compare(args) -> int:
    ref = io.read_trajectory(args.ref)
    test = io.read_trajectory(args.test)
    report = io.compare(ref, test, vars_glob=args.vars, resample=args.resample)
    report["reference"] = Path(args.ref).name
    report["test"] = Path(args.test).name
    out = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def _parse_method_token(token: str):
    """'ieuler:dt=180' -> ('ieuler', {'dt': 180.0}); bare 'dt' or 'moc' allowed."""
    name, _, rest = token.partition(":")
    if name not in METHODS:
        raise DefsimError(f"unknown method '{name}' in '{token}'")
    opts = {}
    if rest:
        for kv in rest.split(","):
            k, _, v = kv.partition("=")
            if not v:
                raise DefsimError(f"malformed method option '{kv}' in '{token}'")
            opts[k] = float(v)
    return name, opts


def cmd_bench(args) -> int:
    system = io.load_network(args.network)
    scenario = io.load_scenario(args.scenario)
    rows = []
    trajs = {}
    for token in args.methods:
        name, opts = _parse_method_token(token)
        call = {
            "dx": opts.get("dx", args.dx),
            "order": opts.get("order", 5),
            "dt": opts.get("dt"),
            "sample_dt": args.sample_dt,
            "cfg": _controller_from_args(args),
        }
        t0 = time.perf_counter()
        traj = _run_method(system, scenario, name, call)
        wall = time.perf_counter() - t0
        trajs[token] = traj
        rows.append(
            {
                "method": token,
                "time_cost_s": wall,
                "step_number": traj.provenance.get("steps", traj.provenance.get("windows")),
            }
        )
    if args.ref:
        if args.ref not in trajs:
            raise DefsimError(f"--ref '{args.ref}' is not one of the bench methods")
        ref = trajs[args.ref]
        for row in rows:
            rep = io.compare(ref, trajs[row["method"]], vars_glob=args.vars)
            for klass, val in rep["classes"].items():
                row[f"rmse_{klass}"] = val
    cols = sorted({k for row in rows for k in row}, key=lambda k: (k != "method", k))
    lines = [",".join(cols)]
    for row in rows:
        lines.append(
            ",".join("" if row.get(c) is None else _fmt(row.get(c)) for c in cols)
        )
    out = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="defsim",
        description="Dynamic energy flow simulation for coupled gas/electric networks",
    )
    p.add_argument("--version", action="version", version=f"defsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run one solver and write a trajectory")
    ps.add_argument("--network", required=True)
    ps.add_argument("--scenario", required=True)
    ps.add_argument("--method", required=True, choices=METHODS)
    ps.add_argument("--out", required=True)
    ps.add_argument("--dx", type=float, required=True, help="target spatial step, m")
    ps.add_argument("--order", type=int, default=5, help="Taylor order for --method dt")
    ps.add_argument("--dt", type=float, default=None, help="time step for fixed-step methods, s")
    ps.add_argument("--sample-dt", type=float, default=60.0)
    _add_controller_flags(ps)
    ps.set_defaults(fn=cmd_simulate)

    pc = sub.add_parser("compare", help="per-variable and per-class RMSE of two trajectories")
    pc.add_argument("--ref", required=True)
    pc.add_argument("--test", required=True)
    pc.add_argument("--vars", default=None, help="glob over variable names")
    pc.add_argument("--resample", action="store_true",
                    help="linearly interpolate the test run onto the reference times")
    pc.add_argument("--out", default=None)
    pc.set_defaults(fn=cmd_compare)

    pb = sub.add_parser("bench", help="run a method matrix and tabulate cost and accuracy")
    pb.add_argument("--network", required=True)
    pb.add_argument("--scenario", required=True)
    pb.add_argument("--dx", type=float, required=True)
    pb.add_argument("--methods", nargs="+", required=True,
                    help="method tokens like dt, moc, ieuler:dt=180")
    pb.add_argument("--ref", default=None, help="method token used as accuracy reference")
    pb.add_argument("--vars", default=None)
    pb.add_argument("--sample-dt", type=float, default=60.0)
    pb.add_argument("--out", default=None)
    _add_controller_flags(pb)
    pb.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationFailure, io.FileFormatError, ScenarioError, StructuralError) as exc:
        _err("validation", exc)
        return 2
    except SolverError as exc:
        _err("solver", exc)
        return 3
    except (OSError, DefsimError) as exc:
        _err("io", exc)
        return 4


def _err(kind, exc):
    payload = {"error": kind, "message": str(exc)}
    if getattr(exc, "time_s", None) is not None:
        payload["time_s"] = exc.time_s
    if getattr(exc, "diagnostics", None):
        payload["diagnostics"] = [str(d) for d in exc.diagnostics]
    sys.stderr.write(json.dumps(payload) + "\n")


if __name__ == "__main__":
    raise SystemExit(main())
