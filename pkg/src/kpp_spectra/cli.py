"""Command-line front end: ``kpp-spectra <command> ...``.

Exit status is 0 on success, 1 when a computation fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import defaults
from .cauchy import (
    InitialCondition,
    Trajectory,
    classify_regime,
    confirm_regime,
    measure_front_speed,
    periodic_entire_solution,
    simulate,
)
from .floquet import principal_eigenvalue
from .grid import Grid, Reaction, write_field
from .model import load_model, validate_assumptions
from .speeds import critical_speed, dispersion_curve, fg_speed, lambda_max, lambda_prime, speed_at_decay


class UsageError(Exception):
    pass


# --- output helpers ---------------------------------------------------------


def _stamp(args) -> str | None:
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _json_text(payload: dict, args) -> str:
    stamp = _stamp(args)
    if stamp is not None:
        payload = {"generated": stamp, **payload}
    return json.dumps(payload, indent=2, default=_jsonable) + "\n"


def _csv_text(header: list, rows: list, args) -> str:
    buf = io.StringIO()
    stamp = _stamp(args)
    if stamp is not None:
        buf.write(f"# generated {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _emit(args, payload: dict, table: list | None = None, csv_rows: tuple | None = None, stem: str = "result"):
    """Print a table (or the requested format) and write the artifact when an output dir is given."""
    fmt = args.format or "json"
    if fmt == "csv" and csv_rows is None:
        fmt = "json"
    text = _csv_text(*csv_rows, args) if fmt == "csv" else _json_text(payload, args)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.{fmt}").write_text(text)
    if args.format is None and table is not None:
        width = max(len(k) for k, _ in table)
        for k, v in table:
            print(f"{k:<{width}}  {v}")
    else:
        sys.stdout.write(text)


def _floats(values, name: str, n: int | None = None) -> tuple:
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    try:
        out = tuple(float(v) for v in values)
    except ValueError:
        raise UsageError(f"{name}: expected numbers") from None
    if n is not None and len(out) != n:
        raise UsageError(f"{name}: expected {n} components, got {len(out)}")
    return out


def _model(args):
    try:
        return load_model(args.model)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


# --- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    spec = _model(args)
    rep = validate_assumptions(spec, args.samples)
    d = rep.to_dict()
    failed = rep.failures()
    table = [
        ("uniform ellipticity", "pass" if rep.ellipticity else "FAIL"),
        ("essential nonnegativity", "pass" if rep.essentially_nonnegative else "FAIL"),
        ("irreducibility", "pass" if rep.irreducible else "FAIL"),
        ("competition positivity", "pass" if rep.competition_positive else "FAIL"),
        ("K_est", f"{rep.K_est:.6g}"),
    ]
    if failed:
        print("assumption failures: " + "; ".join(failed), file=sys.stderr)
    _emit(args, d, table, stem="assumptions")
    return 0 if rep.all_passed else 1


def cmd_eig(args) -> int:
    spec = _model(args)
    z = _floats(args.z, "--z", spec.n)
    cells = args.cells or defaults.default_cells(spec)
    res = principal_eigenvalue(spec, Grid.periodic_cell(spec, cells), z, tol=args.tol)
    d = res.to_dict()
    _emit(args, d, [("z", list(z)), ("lambda", f"{res.lam:.10g}"), ("iterations", res.iterations)], stem="eig")
    if args.output_dir:
        write_field(Path(args.output_dir) / "eigenfunction.kppf", res.eigenfunction)
    return 0


def cmd_dispersion(args) -> int:
    spec = _model(args)
    if args.z_range:
        if spec.n != 1:
            raise UsageError("--z-range is for n = 1 models; use --z-list")
        lo, hi = _floats(args.z_range[:2], "--z-range")
        try:
            count = int(args.z_range[2])
        except ValueError:
            raise UsageError("--z-range: count must be an integer") from None
        if count < 2:
            raise UsageError("--z-range: count must be at least 2")
        zs = [(float(z),) for z in np.linspace(lo, hi, count)]
    elif args.z_list:
        zs = [_floats(item.split(","), "--z-list", spec.n) for item in args.z_list]
    else:
        raise UsageError("give --z-range START STOP COUNT or --z-list")
    curve = dispersion_curve(spec, zs, args.cells, args.tol)
    header = [f"z{a + 1}" for a in range(spec.n)] + ["lambda"]
    rows = [list(z) + [lam] for z, lam in zip(curve.z, curve.lam)]
    payload = {"z": curve.z, "lambda": curve.lam, "failures": curve.failures}
    args.format = args.format or "csv"
    _emit(args, payload, csv_rows=(header, rows), stem="dispersion")
    return 0 if not curve.failures else 1


def cmd_lambda(args) -> int:
    spec = _model(args)
    lp = lambda_prime(spec, args.cells)
    l1, zmax = lambda_max(spec, cells=args.cells)
    d = {"lambda1_prime": lp, "lambda1": l1, "z_max": list(zmax)}
    _emit(args, d, [("lambda1'", f"{lp:.8g}"), ("lambda1", f"{l1:.8g}"), ("z_max", ", ".join(f"{v:.6g}" for v in zmax))], stem="lambda")
    return 0


def cmd_speed(args) -> int:
    spec = _model(args)
    e = _floats(args.e, "--e", spec.n)
    if args.mu is not None:
        rows = [(mu, speed_at_decay(spec, e, mu, args.cells)) for mu in _floats(args.mu, "--mu")]
        payload = {"e": list(e), "mu": [r[0] for r in rows], "c_mu": [r[1] for r in rows]}
        table = [(f"c_mu (mu={mu:g})", f"{c:.8g}") for mu, c in rows]
        _emit(args, payload, table, csv_rows=(["mu", "c_mu"], rows), stem="speed")
        return 0
    crit = critical_speed(spec, e, cells=args.cells)
    payload = {"e": list(e), "c_star": crit.c_star, "mu_star": crit.mu_star, "curve": sorted(crit.curve.items())}
    _emit(
        args,
        payload,
        [("c*", f"{crit.c_star:.8g}"), ("mu*", f"{crit.mu_star:.8g}")],
        csv_rows=(["mu", "c_mu"], sorted(crit.curve.items())),
        stem="speed",
    )
    return 0


def cmd_fg(args) -> int:
    spec = _model(args)
    e = _floats(args.e, "--e", spec.n)
    rep = fg_speed(spec, e, angular_steps=args.angular_steps, cells=args.cells)
    d = rep.to_dict() | {"diagnostics": rep.diagnostics}
    table = [
        ("c_fg", f"{rep.fg_speed:.8g}"),
        ("c*", f"{rep.c_star:.8g}"),
        ("mu*", f"{rep.mu_star:.8g}"),
        ("e'", ", ".join(f"{v:.6g}" for v in rep.e_prime)),
    ]
    _emit(args, d, table, csv_rows=(["mu", "c_mu"], rep.mu_samples), stem="fg")
    return 0


def load_scenario(path) -> dict:
    try:
        with open(path) as fh:
            sc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"scenario file {path!s} not found") from None
    missing = {"model", "grid", "initial", "t_end"} - set(sc)
    if missing:
        raise UsageError(f"scenario is missing keys {sorted(missing)}")
    model_ref = sc["model"]
    p = Path(model_ref)
    if not p.is_absolute() and (Path(path).parent / p).is_file():
        model_ref = str(Path(path).parent / p)
    sc["spec"] = load_model(model_ref)
    return sc


def scenario_grid(spec, g: dict) -> Grid:
    if "periodic_cell" in g:
        return Grid.periodic_cell(spec, g["periodic_cell"])
    if "extents" not in g or "cells" not in g:
        raise UsageError("grid needs {'extents', 'cells'} or {'periodic_cell'}")
    return Grid.box(g["extents"], g["cells"])


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    spec = sc["spec"]
    grid = scenario_grid(spec, sc["grid"])
    t_end = float(sc["t_end"])
    snapshots = sc.get("snapshots", 20)
    if isinstance(snapshots, int) and snapshots > 0:
        every = t_end / snapshots
    elif isinstance(snapshots, dict) and "every" in snapshots:
        every = float(snapshots["every"])
    else:
        raise UsageError("snapshots must be a positive integer or {'every': interval}")
    traj = simulate(spec, grid, InitialCondition.from_dict(sc["initial"]), t_end, every, sc.get("reaction", "kpp"))
    out = Path(args.output_dir or "trajectory")
    traj.save(out)
    e = sc.get("front_direction")
    summary = traj.summary_csv(sc.get("ball_radius", 10.0), e)
    if not args.no_timestamp:
        summary = f"# generated {_stamp(args)}\n" + summary
    (out / "summary.csv").write_text(summary)
    table = [
        ("snapshots", len(traj.times)),
        ("dt", f"{traj.dt:.6g}"),
        ("final sup", f"{traj.sup_history[-1]:.6g}"),
        ("max sup", f"{traj.max_sup:.6g}"),
        ("written to", str(out)),
    ]
    payload = {"snapshots": len(traj.times), "dt": traj.dt, "final_sup": traj.sup_history[-1], "max_sup": traj.max_sup, "directory": str(out)}
    args.output_dir = None
    _emit(args, payload, table)
    return 0


def cmd_classify(args) -> int:
    spec = _model(args)
    v = classify_regime(spec, args.cells, args.tol_zero)
    if args.confirm_empirically:
        confirm_regime(spec, v, cells=args.cells)
    table = [
        ("regime", v.classification + (" (near zero)" if v.indeterminate else "")),
        ("lambda1'", f"{v.lambda_prime:.8g}"),
        ("lambda1", f"{v.lambda1:.8g}"),
    ]
    if v.confirmation is not None:
        table.append(("confirmed", v.confirmation["confirmed"]))
    _emit(args, v.to_dict(), table, stem="regime")
    return 0


def cmd_entire(args) -> int:
    spec = _model(args)
    cells = args.cells or defaults.default_cells(spec)
    sol = periodic_entire_solution(spec, Grid.periodic_cell(spec, cells), args.tol, args.max_periods)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, f in enumerate(sol.orbit):
            write_field(out / f"orbit_{k:03d}.kppf", f)
    payload = {"residual": sol.residual, "periods": sol.periods, "minimum": sol.minimum, "times": sol.times}
    table = [("residual", f"{sol.residual:.3g}"), ("periods", sol.periods), ("min entry", f"{sol.minimum:.8g}")]
    _emit(args, payload, table, stem="entire")
    return 0


def cmd_measure(args) -> int:
    try:
        traj = Trajectory.load(args.traj)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    e = _floats(args.e, "--e", traj.grid.n)
    fs = measure_front_speed(traj, e, args.level)
    payload = {"speed": fs.speed, "level": fs.level, "rms_residual": fs.rms_residual, "sensitivity": fs.sensitivity}
    rows = [(t, None if np.isnan(x) else x) for t, x in zip(fs.times, fs.positions)]
    table = [("speed", f"{fs.speed:.6g}"), ("rms residual", f"{fs.rms_residual:.3g}")]
    table += [(f"speed at level {lv}", f"{c:.6g}") for lv, c in fs.sensitivity.items()]
    _emit(args, payload, table, csv_rows=(["t", "front_position"], rows), stem="front")
    return 0


def cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(args.only)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"results": [r.to_dict() for r in results]}
        (out / "acceptance.json").write_text(_json_text(payload, args))
    return 0 if passed == len(results) else 1


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "json"), default=None, help="machine-readable output instead of a table")
    common.add_argument("--output-dir", "-o", default=None, help="directory for written artifacts")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header from outputs")

    parser = argparse.ArgumentParser(prog="kpp-spectra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_cmd(name, help_, fn, cells=True):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("model", help="model JSON file or bundled model name")
        if cells:
            p.add_argument("--cells", type=int, default=None, help="periodic-cell resolution per axis")
        p.set_defaults(func=fn)
        return p

    p = model_cmd("validate", "check the standing assumptions", cmd_validate, cells=False)
    p.add_argument("--samples", type=int, default=defaults.ASSUMPTION_SAMPLES)

    p = model_cmd("eig", "principal eigenvalue for one shift z", cmd_eig)
    p.add_argument("--z", required=True, help="comma-separated components")
    p.add_argument("--tol", type=float, default=defaults.EIG_TOL)

    p = model_cmd("dispersion", "eigenvalues over a list or range of shifts", cmd_dispersion)
    p.add_argument("--z-range", nargs=3, metavar=("START", "STOP", "COUNT"))
    p.add_argument("--z-list", nargs="+", metavar="Z", help="comma-separated components per shift")
    p.add_argument("--tol", type=float, default=defaults.EIG_TOL)

    model_cmd("lambda", "lambda1', lambda1 and the maximizing shift", cmd_lambda)

    p = model_cmd("speed", "critical speed in a direction, or c_mu for given decay rates", cmd_speed)
    p.add_argument("--e", required=True, help="comma-separated components")
    p.add_argument("--mu", default=None, help="comma-separated decay rates")

    p = model_cmd("fg", "Freidlin-Gartner speed in a direction", cmd_fg)
    p.add_argument("--e", required=True, help="comma-separated components")
    p.add_argument("--angular-steps", type=int, default=defaults.ANGULAR_STEPS)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_simulate)

    p = model_cmd("classify", "long-time regime from the spectral signs", cmd_classify)
    p.add_argument("--tol-zero", type=float, default=defaults.TOL_ZERO)
    p.add_argument("--confirm-empirically", action="store_true", help="also run the matching simulation")

    p = model_cmd("entire", "positive periodic entire solution", cmd_entire)
    p.add_argument("--tol", type=float, default=defaults.ENTIRE_TOL)
    p.add_argument("--max-periods", type=int, default=defaults.ENTIRE_MAX_PERIODS)

    p = sub.add_parser("measure", parents=[common], help="front speed of a saved trajectory")
    p.add_argument("--traj", required=True, help="trajectory directory written by simulate")
    p.add_argument("--e", required=True, help="comma-separated components")
    p.add_argument("--level", type=float, default=defaults.FRONT_LEVEL)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--only", type=int, nargs="+", default=None, help="criterion numbers to run")
    p.set_defaults(func=cmd_verify)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kpp-spectra: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every computation failure maps to exit 1
        print(f"kpp-spectra: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
