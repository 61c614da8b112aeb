"""Command-line front end.

Loads a system (a bundled catalog name or a JSON definition file), runs the
requested command, and writes CSV/JSON artifacts.  Exit codes: 0 on success,
2 on a validation error, 3 when a `verify` check fails, 4 on an I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as xp
from .conserved import (
    conserved_report,
    measure_defect,
    modified_hamiltonian,
    verify_degree_bounds,
)
from .errors import KahanGeomError
from .forms import QuadraticVF, SystemSpec
from .integrators import (
    Method,
    family_step,
    iterate,
    kahan_step,
    kahan_step_rosenbrock,
    reference_flow,
)

DEFAULT_SWEEP_A = (-0.5, 0.0, 1.0 / 6.0, 0.5, -0.3, 0.35)
DESK_SWEEP_STEPS = 200_000
FULL_SWEEP_STEPS = 2_000_000


def _add_source(parser) -> None:
    parser.add_argument("--system", help="name of a bundled catalog system")
    parser.add_argument("--file", help="path to a system-definition JSON file")


def _add_method(parser) -> None:
    parser.add_argument(
        "--method",
        default="kahan",
        choices=["kahan", "family", "midpoint", "trapezoidal", "simpson", "suzuki"],
        help="one-step method (default: kahan)",
    )


def _add_grid(parser) -> None:
    parser.add_argument(
        "--bbox",
        nargs=4,
        type=float,
        default=[-2.0, 2.0, -2.0, 2.0],
        metavar=("XLO", "XHI", "YLO", "YHI"),
        help="grid bounding box (default: -2 2 -2 2)",
    )
    parser.add_argument("--res", type=int, default=400, help="grid resolution per axis")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kahan-geom",
        description="Long-run diagnostics for one-step discretizations of quadratic vector fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="run one trajectory; write CSV plus a conserved-quantity report")
    _add_source(p)
    _add_method(p)
    p.add_argument("--a", help="family parameter for --method family (use --a=-0.4 for negatives)")
    p.add_argument("--h", type=float, required=True, help="step size")
    p.add_argument("--steps", type=int, required=True, help="number of steps")
    p.add_argument("--x0", help="comma-separated start point (default: catalog recommendation)")
    p.add_argument("--stride", type=int, help="record every STRIDE-th step")
    p.add_argument("--out", required=True, help="trajectory CSV path; the report lands next to it")

    p = sub.add_parser("drift", help="fit energy-drift slopes across family parameters")
    _add_source(p)
    p.add_argument("--a", help="comma-separated parameter list (default: -0.5,0,1/6,0.5,-0.3,0.35)")
    p.add_argument("--h", type=float, required=True, help="step size")
    p.add_argument("--steps", type=int, help="steps per run (default: 200000; 2000000 with --full-scale)")
    p.add_argument("--x0", help="comma-separated start point")
    p.add_argument("--full-scale", action="store_true", help="use the long default run length")
    p.add_argument("--out", required=True, help="sweep CSV path")

    p = sub.add_parser("levelset", help="sample H or the modified energy on a grid")
    _add_source(p)
    p.add_argument(
        "--quantity",
        required=True,
        type=str.lower,
        choices=["h", "htilde"],
        help="which scalar to sample",
    )
    p.add_argument("--h", type=float, help="step size (required for htilde)")
    _add_grid(p)
    p.add_argument("--out", required=True, help="grid CSV path")

    p = sub.add_parser("portrait", help="record orbits from one or more starting points")
    _add_source(p)
    _add_method(p)
    p.add_argument("--a", help="family parameter for --method family")
    p.add_argument("--h", type=float, required=True, help="step size")
    p.add_argument("--steps", type=int, required=True, help="steps per orbit")
    p.add_argument("--x0", help="starting points, comma-separated components, ';' between points")
    p.add_argument("--stride", type=int, help="record every STRIDE-th step")
    p.add_argument("--out", required=True, help="portrait CSV path")

    p = sub.add_parser("singular", help="scan a grid for near-singular step matrices")
    _add_source(p)
    p.add_argument("--h", type=float, required=True, help="step size")
    _add_grid(p)
    p.add_argument("--out", required=True, help="point-set CSV path")

    p = sub.add_parser("verify", help="run the property-check battery; exit 3 if any check fails")
    _add_source(p)
    p.add_argument("--h", type=float, required=True, help="step size used by the checks")
    p.add_argument("--seed", type=int, default=0, help="seed for the randomized checks")
    p.add_argument("--out", help="JSON report path (default: stdout)")

    p = sub.add_parser("catalog", help="list the bundled systems as JSON")
    p.add_argument("--dump", action="store_true", help="write one system-definition JSON per system")
    p.add_argument("--out", help="listing path, or the output directory with --dump")

    return parser


def _parse_floats(text: str):
    values = [part for part in text.split(",") if part.strip() != ""]
    return [float(part) for part in values]


def _resolve_entry(args) -> xp.CatalogEntry:
    name = getattr(args, "system", None)
    path = getattr(args, "file", None)
    if name and path:
        raise ValueError("pass either --system or --file, not both")
    if name:
        return xp.catalog_entry(name)
    if path:
        spec = SystemSpec.from_json(Path(path).read_text())
        h = getattr(args, "h", None)
        return xp.CatalogEntry(
            system=spec,
            recommended_h=(h,) if h else (0.1,),
            x0=np.zeros(spec.n),
            recommended_steps=1000,
            notes="user-supplied system",
        )
    raise ValueError("a system is required: pass --system NAME or --file PATH")


def _resolve_method(args) -> Method:
    name = args.method
    if name == "family":
        if not args.a:
            raise ValueError("--method family needs --a")
        values = _parse_floats(args.a)
        if len(values) != 1:
            raise ValueError(f"--method family needs exactly one --a value, got {len(values)}")
        return Method.family(values[0])
    return {
        "kahan": Method.kahan,
        "midpoint": Method.midpoint,
        "trapezoidal": Method.trapezoidal,
        "simpson": Method.simpson,
        "suzuki": Method.suzuki,
    }[name]()


def _parse_point(text: str, n: int) -> np.ndarray:
    values = _parse_floats(text)
    if len(values) != n:
        raise ValueError(f"--x0 needs {n} components, got {len(values)}")
    return np.array(values)


def _resolve_x0(args, entry: xp.CatalogEntry) -> np.ndarray:
    if getattr(args, "x0", None):
        return _parse_point(args.x0, entry.system.n)
    return np.array(entry.x0, dtype=float)


def _report_path(out) -> Path:
    return Path(out).with_suffix(".report.json")


def _cmd_integrate(args) -> int:
    entry = _resolve_entry(args)
    method = _resolve_method(args)
    x0 = _resolve_x0(args, entry)
    traj = iterate(method, entry.system.vf, x0, args.h, args.steps, stride=args.stride)
    xp.write_trajectory_csv(args.out, entry.system, method, traj)
    report = conserved_report(entry.system, method, traj)
    payload = {
        "system": entry.system.name,
        "method": method.label(),
        "h": args.h,
        "steps": args.steps,
        "stride": int(traj.stride),
        "status": int(traj.status),
        "completed": int(traj.completed),
        "report": report.to_dict(),
    }
    xp.atomic_write_text(_report_path(args.out), json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_drift(args) -> int:
    entry = _resolve_entry(args)
    a_values = _parse_floats(args.a) if args.a else list(DEFAULT_SWEEP_A)
    if args.steps is not None:
        steps = args.steps
    else:
        steps = FULL_SWEEP_STEPS if args.full_scale else DESK_SWEEP_STEPS
    x0 = _parse_point(args.x0, entry.system.n) if args.x0 else None
    result = xp.drift_sweep(entry, a_values, args.h, steps, x0=x0)
    xp.write_sweep_csv(args.out, result)
    return 0


def _cmd_levelset(args) -> int:
    entry = _resolve_entry(args)
    quantity = {"h": "H", "htilde": "Htilde"}[args.quantity]
    grid = xp.level_set_grid(entry, quantity, tuple(args.bbox), args.res, h=args.h)
    xp.write_grid_csv(args.out, grid)
    return 0


def _cmd_portrait(args) -> int:
    entry = _resolve_entry(args)
    method = _resolve_method(args)
    if args.x0:
        inits = [_parse_point(chunk, entry.system.n) for chunk in args.x0.split(";")]
    else:
        inits = [np.array(entry.x0, dtype=float)]
    orbits = xp.phase_portrait(entry, method, args.h, inits, args.steps, stride=args.stride)
    xp.write_portrait_csv(args.out, orbits)
    return 0


def _cmd_singular(args) -> int:
    entry = _resolve_entry(args)
    scan = xp.singular_scan(entry, args.h, tuple(args.bbox), args.res)
    xp.write_singular_csv(args.out, scan)
    return 0


def _cmd_catalog(args) -> int:
    entries = xp.catalog()
    if args.dump:
        if not args.out:
            raise ValueError("catalog --dump needs --out DIRECTORY")
        os.makedirs(args.out, exist_ok=True)
        for entry in entries:
            xp.atomic_write_text(
                os.path.join(args.out, f"{entry.name}.json"), entry.system.to_json() + "\n"
            )
        return 0
    text = json.dumps([entry.to_dict() for entry in entries], indent=2) + "\n"
    if args.out:
        xp.atomic_write_text(args.out, text)
    else:
        print(text, end="")
    return 0


def _guarded(name: str, check) -> dict:
    try:
        return check()
    except KahanGeomError as exc:
        return {"name": name, "passed": False, "error": str(exc)}


def _check_equivalence(rng) -> dict:
    """The three formulations of the base step agree on random fields."""
    worst = 0.0
    for trial in range(10):
        n = 2 + trial % 3
        vf = QuadraticVF(
            0.2 * rng.standard_normal((n, n, n)),
            0.2 * rng.standard_normal((n, n)),
            0.2 * rng.standard_normal(n),
        )
        x = 0.3 * rng.standard_normal(n)
        direct = kahan_step(vf, x, 0.1).x_next
        resolvent = kahan_step_rosenbrock(vf, x, 0.1).x_next
        newton = family_step(-0.5, vf, x, 0.1).x_next
        scale = 1.0 + float(np.max(np.abs(direct)))
        gap = max(np.max(np.abs(direct - resolvent)), np.max(np.abs(direct - newton)))
        worst = max(worst, float(gap) / scale)
    return {"name": "equivalence", "passed": worst <= 1e-10, "max_rel_diff": worst}


def _check_symmetry(entry: xp.CatalogEntry, h: float, rng) -> dict:
    """step(h) then step(-h) returns to the start; the invariant is even in h."""
    system = entry.system
    points = entry.x0 + 0.05 * rng.standard_normal((3, system.n))
    points[0] = entry.x0
    worst_round = 0.0
    worst_even = 0.0
    for x in points:
        for a in (-0.5, 0.0, 1.0 / 6.0, 0.5):
            forward = family_step(a, system.vf, x, h).x_next
            back = family_step(a, system.vf, forward, -h).x_next
            worst_round = max(
                worst_round, float(np.max(np.abs(back - x))) / (1.0 + float(np.max(np.abs(x))))
            )
        plus = modified_hamiltonian(system.hamiltonian, system.poisson, x, h)
        minus = modified_hamiltonian(system.hamiltonian, system.poisson, x, -h)
        worst_even = max(worst_even, abs(plus - minus) / max(1.0, abs(plus)))
    passed = worst_round <= 1e-10 and worst_even <= 1e-11
    return {
        "name": "symmetry",
        "passed": passed,
        "max_roundtrip_error": worst_round,
        "max_evenness_error": worst_even,
    }


def _check_order(entry: xp.CatalogEntry) -> dict:
    """Global error at t=1 shrinks fourfold per step-size halving."""
    vf = entry.system.vf
    x0 = np.array(entry.x0, dtype=float)
    target = reference_flow(vf, x0, 1.0, tol=1e-12)
    errors = []
    for h, n in ((0.2, 5), (0.1, 10), (0.05, 20)):
        traj = iterate(Method.kahan(), vf, x0, h, n)
        errors.append(float(np.max(np.abs(traj.final_state - target))))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    passed = all(3.4 <= r <= 4.6 for r in ratios)
    return {"name": "order", "passed": passed, "ratios": ratios}


def _check_conservation(entry: xp.CatalogEntry, h: float) -> dict:
    """The modified energy and every Casimir hold along a 2000-step run."""
    traj = iterate(Method.kahan(), entry.system.vf, np.array(entry.x0), h, 2000, stride=1)
    if traj.status != 0:
        return {
            "name": "conservation",
            "passed": False,
            "status": int(traj.status),
            "detail": "run truncated before completing",
        }
    report = conserved_report(entry.system, Method.kahan(), traj)
    ht_drift = report["Htilde"].max_rel_drift
    casimir_drifts = [
        q.max_abs_drift for q in report.quantities if q.name.startswith("casimir_")
    ]
    worst_casimir = max(casimir_drifts) if casimir_drifts else 0.0
    passed = ht_drift <= 1e-10 and worst_casimir <= 1e-11
    return {
        "name": "conservation",
        "passed": passed,
        "htilde_rel_drift": ht_drift,
        "casimir_abs_drift": worst_casimir,
    }


def _check_measure(entry: xp.CatalogEntry, h: float) -> dict:
    """Each closed-form density is transported exactly by its step Jacobian."""
    worst = 0.0
    for a in (-0.5, 0.0, 0.5):
        method = Method.kahan() if a == -0.5 else Method.family(a)
        traj = iterate(method, entry.system.vf, np.array(entry.x0), h, 500, stride=1)
        if traj.status != 0:
            return {
                "name": "measure",
                "passed": False,
                "a": a,
                "status": int(traj.status),
                "detail": "run truncated before completing",
            }
        worst = max(worst, float(measure_defect(a, entry.system.vf, traj)))
    return {"name": "measure", "passed": worst <= 1e-9, "max_defect": worst}


def _check_degree_bounds(entry: xp.CatalogEntry, h: float, rng) -> dict:
    """Numerator/denominator degrees along random lines respect the rank bounds."""
    report = verify_degree_bounds(
        entry.system.hamiltonian, entry.system.poisson, h, trials=3, rng=rng
    )
    return {
        "name": "degree_bounds",
        "passed": bool(report.passed),
        "n": report.n,
        "k": report.k,
        "trials": report.trials,
    }


def _cmd_verify(args) -> int:
    entry = _resolve_entry(args)
    if entry.system.hamiltonian is None:
        raise ValueError("verify needs a system with a generating function and structure matrix")
    if args.h == 0.0:
        raise ValueError("verify needs a nonzero step size")
    rng = np.random.default_rng(args.seed)
    checks = [
        _guarded("equivalence", lambda: _check_equivalence(rng)),
        _guarded("symmetry", lambda: _check_symmetry(entry, args.h, rng)),
        _guarded("order", lambda: _check_order(entry)),
        _guarded("conservation", lambda: _check_conservation(entry, args.h)),
        _guarded("measure", lambda: _check_measure(entry, args.h)),
        _guarded("degree_bounds", lambda: _check_degree_bounds(entry, args.h, rng)),
    ]
    passed = all(c["passed"] for c in checks)
    payload = {
        "system": entry.system.name,
        "h": args.h,
        "seed": args.seed,
        "passed": passed,
        "checks": checks,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        xp.atomic_write_text(args.out, text)
    else:
        print(text, end="")
    return 0 if passed else 3


_DISPATCH = {
    "integrate": _cmd_integrate,
    "drift": _cmd_drift,
    "levelset": _cmd_levelset,
    "portrait": _cmd_portrait,
    "singular": _cmd_singular,
    "verify": _cmd_verify,
    "catalog": _cmd_catalog,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, int):
            return exc.code
        return 0 if exc.code is None else 2
    try:
        return _DISPATCH[args.command](args)
    except (KahanGeomError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
