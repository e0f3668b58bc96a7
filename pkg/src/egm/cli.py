"""Command line entry point ``egm``.

    egm run <scenario.json> [--threads N] [--out DIR] [--override key=value]
    egm audit <fields.csv> --law <name> [--theta other.csv] [--tol X]
    egm transform <fields.csv> --v 0.6 --e 1,0,0 [--phi X] [--kind field|source]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .emfield import (
    ChargeCurrent,
    FieldStrength,
    MediumConstants,
    charge_conservation_residual,
    energy_conservation_residual,
    maxwell_residual,
)
from .errors import ConfigError, EGMError
from .grid import BiquatField, d_minus, read_field_csv, write_field_csv
from .lorentz import RULES, TransformParams, make_transform, preimage_coverage, transform_field
from .scenario import configure_logging, run_scenario

log = logging.getLogger("egm")

LAWS = ("maxwell", "inertia", "charge", "energy")


def _vec3(text):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(parts)


def build_parser():
    p = argparse.ArgumentParser(prog="egm", description="Biquaternion field solvers and audits.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("scenario")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--out", default=None)
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    a = sub.add_parser("audit", help="residual of one law on a CSV field dump")
    a.add_argument("fields")
    a.add_argument("--law", required=True, choices=LAWS)
    a.add_argument("--theta", default=None, help="charge-current CSV for maxwell/energy")
    a.add_argument("--tol", type=float, default=1e-2)
    a.add_argument("--eps", type=float, default=1.0)
    a.add_argument("--mu", type=float, default=1.0)
    a.add_argument("--threads", type=int, default=None)

    t = sub.add_parser("transform", help="Lorentz-transform a CSV field dump onto its own grid")
    t.add_argument("fields")
    t.add_argument("--v", type=float, required=True)
    t.add_argument("--e", type=_vec3, default=(1.0, 0.0, 0.0))
    t.add_argument("--phi", type=float, default=0.0)
    t.add_argument("--kind", choices=("field", "source"), default="field")
    t.add_argument("--rule", choices=RULES, default="covariant")
    t.add_argument("--out", default=None)
    return p


def _cmd_run(args):
    code, report = run_scenario(args.scenario, args.override, args.out, args.threads)
    for r in report["payload"]["audits"]:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{status} {r['name']}: residual_max={r['residual_max']:.3e} tol={r['tolerance']:.1e}")
    print(f"report: {Path(args.out or '.') / 'report.json'}")
    return code


def _cmd_audit(args):
    F = read_field_csv(args.fields)
    m = MediumConstants(args.eps, args.mu)
    theta = read_field_csv(args.theta) if args.theta else BiquatField.zeros(F.grid)
    if args.law == "maxwell":
        r = maxwell_residual(FieldStrength(F), ChargeCurrent(theta), args.threads)
    elif args.law == "inertia":
        r = d_minus(F, args.threads)
    elif args.law == "charge":
        r = charge_conservation_residual(ChargeCurrent(F))
    else:
        r = energy_conservation_residual(FieldStrength(F), ChargeCurrent(theta), m)
    out = {
        "name": args.law,
        "residual_max": r.max_abs(),
        "residual_mean": r.mean_abs(),
        "tolerance": args.tol,
    }
    out["pass"] = out["residual_max"] <= args.tol
    print(json.dumps(out, sort_keys=True))
    return 0 if out["pass"] else 2


def _cmd_transform(args):
    F = read_field_csv(args.fields)
    p = TransformParams.from_velocity(args.v, args.e, args.phi)
    L = make_transform(p)
    cov = preimage_coverage(L, F.grid, F.grid)
    G = transform_field(L, F, F.grid, args.kind, args.rule, strict=False)
    out = Path(args.out) if args.out else Path(args.fields).with_name(Path(args.fields).stem + "_transformed.csv")
    write_field_csv(G, out)
    print(json.dumps({"output": str(out), "covered_fraction": float(np.mean(cov))}, sort_keys=True))
    return 0


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "audit":
            return _cmd_audit(args)
        return _cmd_transform(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (EGMError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
