"""Command line, persistence and plot-data emission.

Subcommands::

    logkg groundstate --p 3 --omega 0 --R 20 --n 4000 --method both --out gs/
    logkg evolve --from-groundstate gs/ --lambda 1.2 --dt 0.0045 --T 50 --out run/
    logkg check --suite identities --p 3 --omega 0.3
    logkg plotdata --records run/diagnostics.csv --out run/long.csv

Exit codes: 0 success; 1 solver failure; 2 certification / check failure;
3 blow-up (a physical outcome, not a tool failure); 64 bad usage or
parameters; 65 malformed input data.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    DIAGNOSTIC_COLUMNS,
    DiagnosticsRecord,
    EvolveConfig,
    State,
    Termination,
    run,
)
from .experiments import (
    InstabilityConfig,
    check_R1_membership,
    identity_suite,
    make_perturbed_data,
    monitor_invariance,
    run_instability,
    verify_theorem21_suite,
)
from .functionals import ModelParams, ParameterError
from .ground_state import (
    GroundState,
    GroundStateError,
    Method,
    NehariConfig,
    ShootingConfig,
    certify_profile,
    default_seed,
    find_ground_state,
    minimize_nehari,
)
from .radial import FieldError, RadialGrid, fmt, l2_norm_sq, read_field_csv, write_field_csv

log = logging.getLogger(__name__)

EX_OK, EX_SOLVER, EX_CERT, EX_BLOWUP, EX_USAGE, EX_DATAERR = 0, 1, 2, 3, 64, 65


class DataError(ValueError):
    """Malformed input file."""


# -- diagnostics CSV --------------------------------------------------------

def write_diagnostics_csv(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for rec in records:
            w.writerow([fmt(x) for x in rec.row()])
    return path


def read_diagnostics_csv(path) -> list[DiagnosticsRecord]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty diagnostics file")
    header = tuple(h.strip() for h in rows[0])
    if header != DIAGNOSTIC_COLUMNS:
        raise DataError(f"{path}: header must be {','.join(DIAGNOSTIC_COLUMNS)}")
    out = []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(DIAGNOSTIC_COLUMNS):
            raise DataError(f"{path}:{k}: expected {len(DIAGNOSTIC_COLUMNS)} fields, got {len(row)}")
        try:
            out.append(DiagnosticsRecord(*(float(x) for x in row)))
        except ValueError as exc:
            raise DataError(f"{path}:{k}: {exc}") from None
    return out


def to_long(records) -> list[tuple[float, str, float]]:
    """Tidy ``(t, quantity, value)`` rows, one per non-time column."""
    return [(rec.t, name, getattr(rec, name)) for rec in records for name in DIAGNOSTIC_COLUMNS[1:]]


def from_long(rows) -> list[DiagnosticsRecord]:
    """Inverse of :func:`to_long`, keeping first-seen time order."""
    table: dict[float, dict] = {}
    for t, name, value in rows:
        table.setdefault(t, {"t": t})[name] = value
    return [DiagnosticsRecord(**vals) for vals in table.values()]


def write_long_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "quantity", "value"])
        for t, name, value in rows:
            w.writerow([fmt(t), name, fmt(value)])
    return path


def emit_plotdata(records_path, out_path) -> int:
    try:
        records = read_diagnostics_csv(records_path)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_DATAERR
    if not records:
        print(f"error: {records_path}: no data rows", file=sys.stderr)
        return EX_DATAERR
    write_long_csv(out_path, to_long(records))
    return EX_OK


# -- ground-state persistence -----------------------------------------------

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "value"):
        return obj.value
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def groundstate_sidecar(gs: GroundState) -> dict:
    return {
        "p": gs.params.p,
        "omega": gs.params.omega,
        "d_omega": gs.d_omega,
        "residual_norm": gs.residual_norm,
        "K_value": gs.K_value,
        "method": gs.method.value,
        "grid": {"R": gs.grid.R, "n": gs.grid.n},
        "amplitude": float(gs.phi.values[0]),
        "checks": gs.checks(),
        "certified": gs.certified(),
    }


def write_groundstate(out_dir, gs: GroundState) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"groundstate_{gs.method.value}"
    csv_path = write_field_csv(out_dir / f"{stem}.csv", gs.phi)
    json_path = write_json(out_dir / f"{stem}.json", groundstate_sidecar(gs))
    return csv_path, json_path


def read_groundstate(path, method: str | None = None) -> GroundState:
    """Load a ground state from its CSV (or a directory holding one).

    Functionals are recomputed from the stored profile; the sidecar supplies
    ``(p, omega)`` and the method label.
    """
    path = Path(path)
    if path.is_dir():
        names = [f"groundstate_{m}.csv" for m in ((method,) if method else ("shooting", "nehari_min"))]
        found = [path / n for n in names if (path / n).exists()]
        if not found:
            raise DataError(f"{path}: no ground-state file ({', '.join(names)})")
        path = found[0]
    sidecar = path.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
        params = ModelParams(float(meta["p"]), float(meta["omega"]))
        gs_method = Method(meta["method"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{sidecar}: unreadable sidecar ({exc})") from None
    try:
        phi, _ = read_field_csv(path)
    except (OSError, FieldError) as exc:
        raise DataError(str(exc)) from None
    return certify_profile(phi, params, gs_method, {"source": str(path)})


# -- manifests --------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    params: dict
    grid: dict
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    termination: str | None = None
    results: dict = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = ""
    wall_time: float = 0.0
    argv: list = field(default_factory=list)

    def write(self, path) -> Path:
        if not self.timestamp:
            self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return write_json(path, dataclasses.asdict(self))


# -- argument parsing -------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with exit status 64 on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def _positive(kind):
    def conv(text):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return conv


def _float_list(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="logkg", description="Radial logarithmic Klein-Gordon laboratory.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("groundstate", help="compute and certify a ground state")
    g.add_argument("--p", type=float, required=True)
    g.add_argument("--omega", type=float, default=0.0)
    g.add_argument("--R", type=_positive(float), default=20.0)
    g.add_argument("--n", type=_positive(int), default=4000)
    g.add_argument("--method", choices=("shoot", "nehari", "both"), default="both")
    g.add_argument("--s-lo", type=float, default=ShootingConfig.s_lo,
                   help="lower shooting amplitude (default %(default)s)")
    g.add_argument("--s-hi", type=float, default=ShootingConfig.s_hi,
                   help="upper shooting amplitude (default %(default)s)")
    g.add_argument("--agree-tol", type=_positive(float), default=0.01,
                   help="relative d(omega) agreement required with --method both")
    g.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evolve", help="evolve radial Cauchy data")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--init", type=Path, help="field CSV with columns r,u[,v]")
    src.add_argument("--from-groundstate", type=Path, help="directory or CSV of a ground state")
    e.add_argument("--lambda", dest="lam", type=_positive(float), default=None,
                   help="dilation factor for --from-groundstate (u0 = phi(x/lambda))")
    e.add_argument("--p", type=float, default=None, help="exponent (required with --init)")
    e.add_argument("--dt", type=_positive(float), required=True)
    e.add_argument("--T", type=_positive(float), required=True)
    e.add_argument("--blowup-cap", type=_positive(float), default=1e6)
    e.add_argument("--sample-every", type=_positive(int), default=10)
    e.add_argument("--cfl-limit", type=_positive(float), default=0.9)
    e.add_argument("--out", type=Path, required=True)

    c = sub.add_parser("check", help="run a verification suite")
    c.add_argument("--suite", choices=("identities", "theorem21", "instability"), required=True)
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--omega", type=float, default=0.0)
    c.add_argument("--R", type=_positive(float), default=20.0)
    c.add_argument("--n", type=_positive(int), default=4000)
    c.add_argument("--lambdas", type=_float_list, default=InstabilityConfig.lambdas)
    c.add_argument("--growth-target", type=float, default=InstabilityConfig.growth_target)
    c.add_argument("--T-max", type=_positive(float), default=InstabilityConfig.T_max)
    c.add_argument("--dt", type=_positive(float), default=None,
                   help="time step for the instability suite (default 0.9*dr)")
    c.add_argument("--convergence", action="store_true",
                   help="theorem21: include the residual refinement study")
    c.add_argument("--out", type=Path, default=None)

    pd = sub.add_parser("plotdata", help="reshape a diagnostics CSV into long format")
    pd.add_argument("--records", type=Path, required=True)
    pd.add_argument("--out", type=Path, required=True)
    return ap


def _params(p, omega=0.0) -> ModelParams:
    try:
        return ModelParams(p, omega)
    except ParameterError as exc:
        raise _UsageError(f"{exc} (valid ranges: 2 < p < 4, 0 <= omega < 1)") from None


# -- commands ---------------------------------------------------------------

def cmd_groundstate(args) -> int:
    params = _params(args.p, args.omega)
    try:
        grid = RadialGrid(args.R, args.n)
    except FieldError as exc:
        raise _UsageError(str(exc)) from None
    t0 = time.perf_counter()
    results, outputs = {}, {}
    states = []
    try:
        # an inverted bracket is reported as a solver (bracket) failure
        scfg = ShootingConfig(s_lo=args.s_lo, s_hi=args.s_hi, R=args.R, n=args.n)
        if args.method in ("shoot", "both"):
            states.append(find_ground_state(params, scfg))
        if args.method in ("nehari", "both"):
            seed = default_seed(grid, params=params)
            states.append(minimize_nehari(params, grid, seed, NehariConfig()))
    except (GroundStateError, ValueError) as exc:
        print(f"error: ground-state solver failed: {exc}", file=sys.stderr)
        return EX_SOLVER
    for gs in states:
        csv_path, json_path = write_groundstate(args.out, gs)
        outputs[gs.method.value] = {"field": csv_path.name, "sidecar": json_path.name}
        results[gs.method.value] = groundstate_sidecar(gs)
    ok = all(gs.certified() for gs in states)
    if len(states) == 2:
        a, b = states
        rel = abs(a.d_omega - b.d_omega) / abs(a.d_omega)
        prof = math.sqrt(l2_norm_sq(a.phi - b.phi) / l2_norm_sq(a.phi))
        results["agreement"] = {"d_rel": rel, "profile_rel_l2": prof, "tol": args.agree_tol}
        ok = ok and rel <= args.agree_tol
    RunManifest(
        command="groundstate", params={"p": params.p, "omega": params.omega},
        grid={"R": args.R, "n": args.n},
        config={"method": args.method, "s_lo": args.s_lo, "s_hi": args.s_hi},
        outputs=outputs, termination="certified" if ok else "certification_failed",
        results=results, wall_time=time.perf_counter() - t0, argv=args.argv,
    ).write(args.out / "manifest.json")
    for name, res in results.items():
        if "d_omega" in res:
            print(f"{name}: d = {fmt(res['d_omega'])}, K = {res['K_value']:.3e}, "
                  f"residual = {res['residual_norm']:.3e}, certified = {res['certified']}")
    if not ok:
        print("error: certification failed", file=sys.stderr)
        return EX_CERT
    return EX_OK


def cmd_evolve(args) -> int:
    inputs, results = {}, {}
    try:
        if args.init is not None:
            if args.p is None:
                raise _UsageError("--init requires --p")
            params = _params(args.p)
            u0, v0 = read_field_csv(args.init)
            s0 = State(u0, v0 if v0 is not None else u0.grid.zeros())
            inputs = {"init": str(args.init)}
        else:
            gs = read_groundstate(args.from_groundstate)
            if gs.params.omega != 0:
                raise _UsageError("--from-groundstate needs an omega = 0 ground state")
            params = gs.params
            lam = 1.0 if args.lam is None else args.lam
            s0 = make_perturbed_data(gs, lam) if lam != 1 else State(gs.phi, gs.grid.zeros())
            inputs = {"groundstate": str(gs.info.get("source")), "lambda": lam}
            if lam != 1:
                r1 = check_R1_membership(s0, gs, params, lam=lam)
                results["r1"] = r1.as_dict()
    except (FieldError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_DATAERR
    try:
        cfg = EvolveConfig(dt=args.dt, T=args.T, blowup_cap=args.blowup_cap,
                           sample_every=args.sample_every, cfl_limit=args.cfl_limit)
        cfg.check_cfl(s0.grid)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    res = run(s0, params, cfg)
    diag = write_diagnostics_csv(args.out / "diagnostics.csv", res.records)
    # after a step refinement the conserved discrete energy is a different
    # O(dt^2) modification, so drift is measured over the fixed-step phase
    E = np.array([r.E for r in res.records
                  if res.refined_at is None or r.t < res.refined_at])
    results.update({
        "steps": res.steps, "final_t": res.records[-1].t if res.records else 0.0,
        "energy_rel_drift": float(np.max(np.abs(E - E[0])) / abs(E[0])) if E.size and E[0] else 0.0,
        "refined_at": res.refined_at,
        "message": res.message,
    })
    if "r1" in results:
        results["invariance"] = dataclasses.asdict(
            monitor_invariance(res.records, results["r1"]["d0"], results["r1"]["is_member"],
                               energy_until=res.refined_at))
    RunManifest(
        command="evolve", params={"p": params.p, "omega": 0.0},
        grid={"R": s0.grid.R, "n": s0.grid.n}, config=dataclasses.asdict(cfg),
        inputs=inputs, outputs={"diagnostics": diag.name}, termination=res.termination.value,
        results=results, wall_time=res.wall_time, argv=args.argv,
    ).write(args.out / "manifest.json")
    print(f"termination: {res.termination.value} at t = {results['final_t']:.6g} "
          f"({res.steps} steps); energy drift {results['energy_rel_drift']:.3e}")
    if res.termination is Termination.BLOWUP:
        return EX_BLOWUP
    if res.termination is Termination.SOLVER_FAILURE:
        print(f"error: {res.message}", file=sys.stderr)
        return EX_SOLVER
    return EX_OK


def cmd_check(args) -> int:
    params = _params(args.p, args.omega)
    try:
        grid = RadialGrid(args.R, args.n)
    except FieldError as exc:
        raise _UsageError(str(exc)) from None
    if args.suite == "identities":
        rep = identity_suite(params, grid)
        payload = rep.as_dict()
        passed, first = rep.passed, rep.first_failure
    elif args.suite == "theorem21":
        rep = verify_theorem21_suite(params, ShootingConfig(R=args.R, n=args.n),
                                     convergence=args.convergence)
        payload = rep.as_dict()
        passed, first = rep.passed, rep.first_failure
    else:
        try:
            icfg = InstabilityConfig(lambdas=args.lambdas, growth_target=args.growth_target,
                                     T_max=args.T_max)
        except ValueError as exc:
            raise _UsageError(str(exc)) from None
        try:
            gs = find_ground_state(params.at_rest(), ShootingConfig(R=args.R, n=args.n))
        except GroundStateError as exc:
            print(f"error: ground-state solver failed: {exc}", file=sys.stderr)
            return EX_SOLVER
        dt = args.dt if args.dt is not None else 0.9 * grid.dr
        try:
            ecfg = EvolveConfig(dt=dt, T=icfg.T_max, sample_every=10)
            ecfg.check_cfl(grid)
        except ValueError as exc:
            raise _UsageError(str(exc)) from None
        rec_dir = None if args.out is None else args.out / "instability"
        outcomes = run_instability(gs, params.at_rest(), icfg, ecfg, records_dir=rec_dir)
        checks = {}
        for o in outcomes:
            checks[f"lambda={o.lam:g}.r1"] = o.r1.is_member
            checks[f"lambda={o.lam:g}.invariance"] = o.monitor is not None and o.monitor.status == "ok"
            checks[f"lambda={o.lam:g}.solver"] = o.outcome != "solver_failure"
        first = next((k for k, ok in checks.items() if not ok), None)
        passed = first is None
        payload = {"checks": checks, "d0": gs.d_omega, "outcomes": [o.as_dict() for o in outcomes],
                   "inconclusive": [o.lam for o in outcomes if o.outcome == "inconclusive"]}
    payload = {"suite": args.suite, "passed": passed, "first_failure": first, **payload}
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if args.out is not None:
        write_json(args.out / f"check_{args.suite}.json", payload)
    if not passed:
        print(f"error: check failed: {first}", file=sys.stderr)
        return EX_CERT
    return EX_OK


def cmd_plotdata(args) -> int:
    return emit_plotdata(args.records, args.out)


COMMANDS = {"groundstate": cmd_groundstate, "evolve": cmd_evolve,
            "check": cmd_check, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"logkg {args.command}: error: {exc}", file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
