"""Scenario files: schema, loading with overrides, and the audit pipeline."""

from __future__ import annotations

import copy
import json
import logging
import os
import platform
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .biquat import Biquaternion, bq_mul
from .cauchy import SolverConfig, transform_picard
from .emfield import (
    ChargeCurrent,
    FieldStrength,
    MediumConstants,
    charge_conservation_residual,
    energy_conservation_residual,
    maxwell_residual,
)
from .errors import ConfigError, EGMError
from .expr import biquat_expression, emit_expression_field
from .grid import BiquatField, Grid4, read_field_csv, write_field_csv
from .interact import (
    FieldState,
    StepConfig,
    first_law_residual,
    force_power,
    interaction_energy,
    interaction_energy_components,
    run_dynamics,
    second_law_residual,
)
from .lorentz import TransformParams, covariance_residual, make_transform

log = logging.getLogger(__name__)

AUDITS = (
    "maxwell",
    "charge",
    "energy",
    "covariance",
    "first_law",
    "second_law",
    "interaction_energy",
    "action_reaction",
)

DEFAULT_TOL = {
    "maxwell": 1e-2,
    "charge": 1e-2,
    "energy": 1e-2,
    "covariance": 5e-2,
    "first_law": 1e-2,
    "second_law": 1e-1,
    "interaction_energy": 1e-10,
    "action_reaction": 1e-10,
}

_BQ = {
    "type": "object",
    "properties": {
        "s": {"type": "string"},
        "v": {"type": "array", "items": {"type": "string"}, "minItems": 3, "maxItems": 3},
        "csv": {"type": "string"},
    },
    "additionalProperties": False,
}

_MEDIA = {
    "type": "object",
    "properties": {"eps": {"type": "number", "exclusiveMinimum": 0}, "mu": {"type": "number", "exclusiveMinimum": 0}},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "egm scenario",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "grid": {
            "type": "object",
            "properties": {
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4, "maxItems": 4},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "origin": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
            },
            "required": ["shape", "dt", "h"],
            "additionalProperties": False,
        },
        "media": _MEDIA,
        "fields": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
                    "A": _BQ,
                    "theta": _BQ,
                    "media": _MEDIA,
                },
                "required": ["name"],
                "additionalProperties": False,
            },
        },
        "external": _BQ,
        "transforms": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "v": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                    "e": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    "phi": {"type": "number"},
                    "rule": {"enum": ["covariant", "literal"]},
                },
                "required": ["v", "e"],
                "additionalProperties": False,
            },
        },
        "dynamics": {
            "type": "object",
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "operator": {"enum": ["dminus", "dplus"]},
                "picard": {
                    "type": "object",
                    "properties": {
                        "sphere_degree": {"type": "integer", "minimum": 0},
                        "radial_shells": {"type": "integer", "minimum": 1},
                        "delta": {"type": ["number", "null"]},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                        "omega": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "budget": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
                "steps": {"type": "integer", "minimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "advance_A": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "audits": {
            "type": "object",
            "propertyNames": {"enum": list(AUDITS)},
            "additionalProperties": {
                "type": "object",
                "properties": {"tol": {"type": "number", "minimum": 0}},
                "additionalProperties": False,
            },
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "fields": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
    "required": ["grid"],
    "additionalProperties": False,
}


def bundled(name):
    """Path of a scenario shipped with the package (``covariance.json`` etc.)."""
    return resources.files("egm") / "scenarios" / name


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(doc, overrides):
    doc = copy.deepcopy(doc)
    for text in overrides or ():
        key, value = _parse_override(text)
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return doc


def load_scenario(path, overrides=()):
    """Read, override and validate a scenario; raises :class:`ConfigError`."""
    path = Path(path)
    if not path.exists():
        alt = bundled(path.name)
        if alt.is_file():
            path = Path(str(alt))
        else:
            raise ConfigError(f"scenario file {str(path)!r} not found")
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        doc = apply_overrides(doc, overrides)
    except (IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad override: {exc}") from None
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: schema violation at {where}: {exc.message}") from None
    doc.setdefault("name", path.stem)
    doc.setdefault("seed", 0)
    doc.setdefault("fields", [])
    doc.setdefault("transforms", [])
    doc.setdefault("audits", {})
    doc["_base"] = str(path.parent)
    return doc


# building fields -------------------------------------------------------------------


@dataclass
class BuiltField:
    name: str
    media: MediumConstants
    A: BiquatField
    theta: BiquatField
    A_fn: object = None
    theta_fn: object = None
    extra: dict = field(default_factory=dict)


def _grid_of(doc) -> Grid4:
    g = doc["grid"]
    nt, nx, ny, nz = g["shape"]
    return Grid4(nt, nx, ny, nz, g["dt"], g["h"], tuple(g.get("origin", (0.0, 0.0, 0.0, 0.0))))


def _media(d):
    d = d or {}
    return MediumConstants(d.get("eps", 1.0), d.get("mu", 1.0))


def _build_part(spec, grid, base, what):
    if spec is None:
        return BiquatField.zeros(grid), (lambda t, x, y, z: Biquaternion.zeros(np.broadcast(t, x, y, z).shape))
    if "csv" in spec:
        if set(spec) - {"csv"}:
            raise ConfigError(f"{what}: 'csv' excludes expression keys")
        p = Path(spec["csv"])
        if not p.is_absolute():
            p = Path(base) / p
        if not p.exists():
            raise ConfigError(f"{what}: referenced file {str(p)!r} does not exist")
        F = read_field_csv(p)
        if F.grid.shape != grid.shape or not np.allclose(
            [F.grid.dt, F.grid.h, *F.grid.origin], [grid.dt, grid.h, *grid.origin]
        ):
            raise ConfigError(f"{what}: CSV grid does not match the scenario grid")
        return BiquatField(grid, F.data), None
    try:
        fn = biquat_expression(spec)
        F = emit_expression_field(spec, grid)
    except EGMError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    return F, fn


def build_fields(doc, grid):
    base = doc.get("_base", ".")
    out = []
    seen = set()
    for k, f in enumerate(doc["fields"]):
        if f["name"] in seen:
            raise ConfigError(f"fields/{k}: duplicate name {f['name']!r}")
        seen.add(f["name"])
        media = _media(f.get("media", doc.get("media")))
        A, A_fn = _build_part(f.get("A"), grid, base, f"fields/{k}/A")
        T, T_fn = _build_part(f.get("theta"), grid, base, f"fields/{k}/theta")
        out.append(BuiltField(f["name"], media, A, T, A_fn, T_fn))
    return out


# audits -------------------------------------------------------------------------------


def _entry(name, tol, rmax, rmean, **details):
    rmax = float(rmax)
    return {
        "name": name,
        "residual_max": rmax,
        "residual_mean": float(rmean),
        "tolerance": float(tol),
        "pass": bool(rmax <= tol),
        "details": details,
    }


def _max_over(items):
    if not items:
        return 0.0, 0.0
    return max(i[0] for i in items), float(np.mean([i[1] for i in items]))


def _audit(name, tol, fields, doc, grid, ext, workers):
    per = {}
    if name == "maxwell":
        for f in fields:
            r = maxwell_residual(FieldStrength(f.A), ChargeCurrent(f.theta), workers)
            per[f.name] = (r.max_abs(), r.mean_abs())
    elif name == "charge":
        for f in fields:
            r = charge_conservation_residual(ChargeCurrent(f.theta))
            per[f.name] = (r.max_abs(), r.mean_abs())
    elif name == "energy":
        for f in fields:
            r = energy_conservation_residual(FieldStrength(f.A), ChargeCurrent(f.theta), f.media)
            per[f.name] = (r.max_abs(), r.mean_abs())
    elif name == "covariance":
        for t in doc["transforms"]:
            p = TransformParams.from_velocity(t["v"], tuple(t["e"]), t.get("phi", 0.0))
            L = make_transform(p)
            ident = make_transform(TransformParams(p.e, 0.0, 0.0))
            rule = t.get("rule", "covariant")
            for f in fields:
                A = f.A_fn or f.A
                T = f.theta_fn or f.theta
                b = covariance_residual(L, A, T, grid, rule, workers)
                u = covariance_residual(ident, A, T, grid, rule, workers)
                key = f"{f.name}@v={t['v']}"
                per[key] = (b["residual_max"], b["residual_mean"])
                per[key + ":unboosted"] = (u["residual_max"], u["residual_mean"])
        boosted = {k: v for k, v in per.items() if not k.endswith(":unboosted")}
        rmax, rmean = _max_over(list(boosted.values()))
        return _entry(name, tol, rmax, rmean, per_field=_detail(per))
    elif name == "second_law":
        kappa = doc.get("dynamics", {}).get("kappa", 1.0)
        op = doc.get("dynamics", {}).get("operator", "dminus")
        for f in fields:
            r = second_law_residual(f.theta, ext, kappa, op, workers)
            mask = r.mask & f.extra.get("valid", np.ones(grid.shape, bool))
            per[f.name] = (r.max_abs(mask), r.mean_abs(mask))
    elif name == "first_law":
        kappa = doc.get("dynamics", {}).get("kappa", 1.0)
        for f in fields:
            fp = force_power(f.theta, ext) if ext is not None else None
            r = first_law_residual(f.theta, fp, kappa, f.media)
            mask = r.mask & f.extra.get("valid", np.ones(grid.shape, bool))
            per[f.name] = (r.max_abs(mask), r.mean_abs(mask))
    elif name == "interaction_energy":
        thetas = [f.theta for f in fields]
        ie = interaction_energy(thetas)
        worst = 0.0
        for a in range(len(thetas)):
            for b in range(a + 1, len(thetas)):
                ta, tb = thetas[a].data, thetas[b].data
                dW, vec = interaction_energy_components(1j * ta.s, -ta.v, 1j * tb.s, -tb.v)
                x = bq_mul(ta, tb.star()) + bq_mul(tb, ta.star())
                worst = max(worst, float(np.max(np.abs(x.s - dW))), float(np.max(np.abs(x.v - vec))))
        counts = {c: int(np.sum(ie.classification == c)) for c in ("release", "absorb", "conserve", "neutral")}
        return _entry(name, tol, worst, worst, total_dW=ie.total_dW, aggregate=ie.aggregate, counts=counts)
    elif name == "action_reaction":
        vals = []
        for a in range(len(fields)):
            for b in range(a + 1, len(fields)):
                fa, fb = fields[a], fields[b]
                r = bq_mul(fa.theta.data, fb.A.data) + bq_mul(fb.theta.data, fa.A.data)
                n = r.norm()
                per[f"{fa.name}|{fb.name}"] = (float(n.max()), float(n.mean()))
                vals.append(per[f"{fa.name}|{fb.name}"])
    rmax, rmean = _max_over(list(per.values()))
    return _entry(name, tol, rmax, rmean, per_field=_detail(per))


def _detail(per):
    return {k: {"residual_max": float(v[0]), "residual_mean": float(v[1])} for k, v in sorted(per.items())}


# pipeline ---------------------------------------------------------------------------------


def _external(doc, grid):
    spec = doc.get("external")
    if spec is None:
        return None, None
    F, fn = _build_part(spec, grid, doc.get("_base", "."), "external")
    return F, fn


def _run_picard(doc, grid, fields, ext_F, ext_fn, report):
    dyn = doc["dynamics"]
    cfg = SolverConfig.from_dict(dyn["picard"])
    kappa = dyn.get("kappa", 1.0)
    A_ext = ext_F if ext_F is not None else BiquatField.zeros(grid)
    out = {}
    for f in fields:
        if f.theta_fn is None:
            raise ConfigError(f"field {f.name!r}: Picard solve needs an expression for theta")
        t0 = grid.origin[0]

        def theta0(y, fn=f.theta_fn):
            return fn(np.full(y.shape[1:], t0), y[0], y[1], y[2])

        th, rep = transform_picard(A_ext, theta0, grid, kappa, config=cfg)
        f.theta = th
        f.theta_fn = None
        f.extra["valid"] = rep.valid
        d = rep.to_dict()
        d["valid_fraction"] = float(rep.valid.mean())
        out[f.name] = d
    report["picard"] = out


def _run_steps(doc, grid, fields, out_dir, report):
    dyn = doc["dynamics"]
    steps = dyn.get("steps", 0)
    if not steps:
        return
    cfg = StepConfig(dyn.get("kappa", 1.0), dyn.get("operator", "dminus"), dyn.get("advance_A", False))
    dt = dyn.get("dt", 0.5 * grid.h)
    states = [FieldState(f.theta.data[0], f.A.data[0]) for f in fields]
    log_path = out_dir / "dynamics.jsonl"
    _, records = run_dynamics(states, grid.h, dt, steps, cfg, grid.origin[0], log_path)
    report["dynamics"] = {"steps": steps, "dt": dt, "last": records[-1] if records else None}


def _env_meta(threads):
    return {
        "egm_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "threads": threads,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def run_scenario(path, overrides=(), out_dir=None, threads=None):
    """Execute a scenario; returns ``(exit_code, report)``.

    Exit codes: 0 all audits pass, 2 some audit fails, 1 configuration
    error (raised as :class:`ConfigError` before any artifact is written).
    """
    doc = load_scenario(path, overrides)
    grid = _grid_of(doc)
    fields = build_fields(doc, grid)
    ext_F, ext_fn = _external(doc, grid)
    audits = doc["audits"] or {}
    if "dynamics" in doc and doc["dynamics"].get("steps") and len(fields) < 1:
        raise ConfigError("dynamics/steps needs at least one field")

    out_dir = Path(out_dir or doc.get("output", {}).get("dir") or ".")
    meta = _env_meta(threads)
    t_start = time.time()
    stage = Path(tempfile.mkdtemp(prefix="egm-"))
    try:
        payload = {
            "scenario": {k: v for k, v in doc.items() if not k.startswith("_")},
            "grid": grid.to_dict(),
        }
        if "dynamics" in doc and "picard" in doc["dynamics"]:
            _run_picard(doc, grid, fields, ext_F, ext_fn, payload)
        if "dynamics" in doc:
            _run_steps(doc, grid, fields, stage, payload)
        results = []
        for name in AUDITS:
            if name not in audits:
                continue
            tol = audits[name].get("tol", DEFAULT_TOL[name])
            log.info("audit %s", name)
            results.append(_audit(name, tol, fields, doc, grid, ext_F, threads))
        payload["audits"] = results
        payload["pass"] = all(r["pass"] for r in results)
        if doc.get("output", {}).get("fields", True):
            for f in fields:
                write_field_csv(f.A, stage / f"fields_{f.name}_A.csv")
                write_field_csv(f.theta, stage / f"fields_{f.name}_theta.csv")
        meta["elapsed_s"] = round(time.time() - t_start, 3)
        report = {"payload": payload, "metadata": meta}
        (stage / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in sorted(stage.iterdir()):
            shutil.move(str(p), str(out_dir / p.name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return (0 if payload["pass"] else 2), report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def payload_bytes(report_path):
    """Canonical bytes of the payload block of a written report."""
    doc = json.loads(Path(report_path).read_text())
    return json.dumps(doc["payload"], sort_keys=True, indent=2).encode()


def configure_logging():
    level = os.environ.get("EGM_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")
