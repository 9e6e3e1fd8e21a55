"""Batch front end: JSON config in, JSON report plus CSV tables out.

Exit codes: 0 success, 2 invalid config or failed precondition, 3 the
numerical evidence disagrees with the exact verdict (``verify`` only).
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import itertools
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .characteristic import (Lattice, choose_r, eccentricity_decay_fit, growth_profiles,
                             rect_characteristic, sup_search)
from .errors import FracWeightsError, InvalidInstance
from .operator import Grid, cone_cover_check, dilated_bump_ratios
from .params import (Status, as_fraction, format_fraction, make_instance, perturb_endpoints,
                     range_interior, strict_subbalance, validate_instance, verdict)
from .quad import QuadConfig, Rectangle
from .witness import FAMILY_TAGS, build_family, hunt, run_blowup

EXIT_OK, EXIT_INPUT, EXIT_DISAGREE = 0, 2, 3

_number = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?[0-9./eE+\-]+\s*$"}]}
_int_range = {
    "type": "object",
    "properties": {"start": _number, "stop": _number, "step": _number},
    "required": ["start", "stop", "step"],
    "additionalProperties": False,
}

INSTANCE_SCHEMA = {
    "type": "object",
    "properties": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "alpha": {"type": "array", "items": _number, "minItems": 1},
        "p": _number, "q": _number, "gamma": _number, "delta": _number,
    },
    "required": ["dims", "alpha", "p", "q", "gamma", "delta"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "instance": INSTANCE_SCHEMA,
        "r": _number,
        "seed": {"type": "integer", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "perturb_eps": _number,
        "lattice": {
            "type": "object",
            "properties": {
                "log2_min": {"type": "integer"}, "log2_max": {"type": "integer"},
                "step": {"type": "integer", "minimum": 1},
                "offsets": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "quotient": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "rectangles": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "sides": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                    "centers": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                },
                "required": ["sides"],
                "additionalProperties": False,
            },
        },
        "grid": {
            "type": "object",
            "properties": {"points": {"type": "integer", "minimum": 3, "maximum": 1025},
                           "extent": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "bump_scales": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
        "witness": {
            "type": "object",
            "properties": {
                "K": {"type": "integer", "minimum": 3, "maximum": 64},
                "families": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {"tag": {"enum": list(FAMILY_TAGS)},
                                       "index": {"type": "integer", "minimum": 0}},
                        "required": ["tag"],
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "decay": {
            "type": "object",
            "properties": {"K": {"type": "integer", "minimum": 3, "maximum": 40},
                           "pivots": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "alpha": {"type": "array", "items": _number, "minItems": 1},
                "p": _number, "q": _number,
                "gamma": _int_range, "delta": _int_range,
                "duality": {"type": "boolean"},
                "verify": {"type": "boolean"},
            },
            "required": ["dims", "alpha", "p", "q", "gamma", "delta"],
            "additionalProperties": False,
        },
        "debug_corrupt_characteristic": {"type": "boolean"},
    },
    "additionalProperties": False,
}

NEEDS_INSTANCE = ("verdict", "verify", "characteristic", "operator", "witness", "decay")
VERIFY_LIMITS = {"N": 4, "points": 257}


class ConfigError(FracWeightsError):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return raw


def validate_config(raw: dict, command: str) -> dict:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    if command in NEEDS_INSTANCE and "instance" not in raw:
        raise ConfigError(f"'{command}' needs an 'instance' block")
    if command == "sweep" and "sweep" not in raw:
        raise ConfigError("'sweep' needs a 'sweep' block")
    return raw


def _instance(cfg: dict):
    return validate_instance(cfg["instance"])


def _quad(cfg: dict, args) -> QuadConfig:
    qc = QuadConfig()
    tol = args.tol if args.tol is not None else cfg.get("tol")
    if tol is not None:
        qc = qc.with_(tol=float(tol))
    return qc.with_(seed=_seed(cfg, args))


def _seed(cfg, args) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _threads(cfg, args) -> int:
    return int(args.threads if args.threads is not None else cfg.get("threads", 1))


def _lattice(cfg: dict) -> Lattice:
    lat = cfg.get("lattice", {})
    kw = {k: lat[k] for k in ("log2_min", "log2_max", "step", "quotient") if k in lat}
    if "offsets" in lat:
        kw["offsets"] = tuple(float(x) for x in lat["offsets"])
    out = Lattice(**kw)
    if not out.log2_values:
        raise ConfigError("lattice is empty (log2_min > log2_max)")
    return out


def _grid(cfg: dict, n: int) -> Grid:
    g = cfg.get("grid", {})
    return Grid.uniform(n=n, points=int(g.get("points", 257)), extent=float(g.get("extent", 8.0)))


def _r(cfg):
    return as_fraction(cfg["r"]) if "r" in cfg else Fraction(1)


def _frange(spec) -> list[Fraction]:
    start, stop, step = (as_fraction(spec[k]) for k in ("start", "stop", "step"))
    if step <= 0:
        raise ConfigError("lattice step must be positive")
    out, x = [], start
    while x <= stop:
        out.append(x)
        x += step
    return out


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(dict.fromkeys(k for row in rows for k in row))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _clean(obj):
    """JSON-safe copy: Fractions as strings, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Fraction):
        return format_fraction(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# commands


def cmd_verdict(cfg: dict, args) -> tuple[dict, dict, int]:
    inst = _instance(cfg)
    v = verdict(inst)
    body = {"instance": inst.to_dict(), "verdict": v.to_dict()}
    if v.status == Status.ENDPOINT:
        eps = as_fraction(cfg.get("perturb_eps", "1/100"))
        body["perturbation"] = perturb_endpoints(inst, eps).to_dict()
    rows = [c.to_dict() for c in v.constraints]
    lines = [f"status: {v.status.value}"]
    lines += [f"  {c.name:<24} {c.kind:<9} lhs={format_fraction(c.lhs):>8} rhs={format_fraction(c.rhs):>8} "
              f"margin={format_fraction(c.margin):>8}  {c.status}" for c in v.constraints]
    return body, {"constraints.csv": rows}, EXIT_OK, "\n".join(lines)


def cmd_characteristic(cfg: dict, args):
    inst = _instance(cfg)
    qc = _quad(cfg, args)
    r = _r(cfg)
    if "rectangles" in cfg:
        rows = []
        for spec in cfg["rectangles"]:
            rect = Rectangle.from_sides(spec["sides"], inst.dims, spec.get("centers"))
            rows.append(rect_characteristic(inst, rect, r, qc).row())
        return {"instance": inst.to_dict(), "r": r, "rectangles": rows}, {"characteristic.csv": rows}, \
            EXIT_OK, "\n".join(f"{row['value']:.10g} +- {row['error']:.2g}" for row in rows)
    res = sup_search(inst, r, _lattice(cfg), qc, _threads(cfg, args))
    rows = [dict(rep.row(), log2_sides=list(c[0]), center=c[1]) for rep, c in zip(res.reports, res.coords)]
    body = {"instance": inst.to_dict(), "r": r, "status": res.status, "sup": res.sup.row(),
            "quotient": res.quotient, "profiles": res.profiles, "flagged": res.flagged}
    return body, {"characteristic.csv": rows}, EXIT_OK, f"{res.status}: sup {res.sup.value:.6g}"


def cmd_decay(cfg: dict, args):
    inst = _instance(cfg)
    dc = cfg.get("decay", {})
    pivots = dc.get("pivots", list(range(inst.n)))
    if any(p >= inst.n for p in pivots):
        raise ConfigError("pivot index out of range")
    fits = [eccentricity_decay_fit(inst, pivot=p, K=int(dc.get("K", 16)), cfg=_quad(cfg, args),
                                   threads=_threads(cfg, args), r=cfg.get("r")) for p in pivots]
    rows = [{"pivot": f.pivot, "k": k, "value": v} for f in fits for k, v in zip(f.ladder, f.values)]
    eps = min(f.eps_hat for f in fits)
    body = {"instance": inst.to_dict(), "fits": [f.to_dict() for f in fits], "eps_hat": eps}
    return body, {"decay.csv": rows}, EXIT_OK, f"eps_hat = {eps:.6g}"


def cmd_operator(cfg: dict, args):
    inst = _instance(cfg)
    grid = _grid(cfg, inst.n)
    if any(d != 1 for d in inst.dims):
        raise ConfigError("operator runs need one-dimensional factors")
    scales = cfg.get("bump_scales", list(range(-3, 4)))
    br = dilated_bump_ratios(inst, grid, scales)
    rows = [{"log2_scale": j, "ratio": x} for j, x in zip(br.log2_scales, br.ratios)]
    body = {"instance": inst.to_dict(), "grid": grid.to_dict(), "bump_ratios": rows,
            "variation": br.variation}
    if grid.shape[0] <= 65 and inst.n <= 2:
        cov = cone_cover_check(grid)
        body["cone_cover"] = {"min": cov.min_count, "max": cov.max_count, "pairs": cov.pairs}
    return body, {"ratios.csv": rows}, EXIT_OK, f"ratio variation {br.variation:.4f}"


def _witness_reports(inst, cfg, args):
    wc = cfg.get("witness", {})
    K = int(wc.get("K", 10))
    qc, threads, r = _quad(cfg, args), _threads(cfg, args), float(_r(cfg))
    if "families" in wc:
        return [run_blowup(inst, build_family(inst, f["tag"], K, f.get("index")), r, qc, threads)
                for f in wc["families"]]
    return hunt(inst, K, r, qc, threads)


def _rung_rows(reports):
    return [{"family": rep.family.label, "k": k, "log2_scale": s, "value": v}
            for rep in reports for k, (s, v) in enumerate(zip(rep.family.log2_scales, rep.values))]


def cmd_witness(cfg: dict, args):
    inst = _instance(cfg)
    reports = _witness_reports(inst, cfg, args)
    body = {"instance": inst.to_dict(), "verdict": verdict(inst).status.value,
            "witnesses": [rep.to_dict() for rep in reports]}
    text = "\n".join(f"{rep.family.label}: {rep.verdict} c_hat={rep.c_hat:.4g} "
                     f"(predicted {rep.predicted:.4g})" for rep in reports) or "no witness families apply"
    return body, {"witness.csv": _rung_rows(reports)}, EXIT_OK, text


def _corrupt(res, lattice: Lattice, n: int):
    """Test hook: inflate every lattice value by 2^{|log2 side|/2} and redo the growth scan."""
    ls = lattice.log2_values
    axes = [[0] if (res.quotient and k == lattice.pivot) else ls for k in range(n)]
    vals = [rep.value * 2.0 ** (0.5 * max(abs(s) for s in c[0])) for rep, c in zip(res.reports, res.coords)]
    _, flagged = growth_profiles(res.coords, vals, axes)
    return bool(flagged), flagged


def cmd_verify(cfg: dict, args):
    inst = _instance(cfg)
    grid_cfg = cfg.get("grid", {})
    if inst.N > VERIFY_LIMITS["N"] or int(grid_cfg.get("points", 257)) > VERIFY_LIMITS["points"]:
        raise ConfigError("verify is limited to N <= 4 and at most 257 grid points per factor")
    qc, threads = _quad(cfg, args), _threads(cfg, args)
    v = verdict(inst)
    lattice = _lattice(cfg)
    res = sup_search(inst, 1, lattice, qc, threads)
    suspected, flagged = res.unbounded_suspected, res.flagged
    if cfg.get("debug_corrupt_characteristic"):
        suspected, flagged = _corrupt(res, lattice, inst.n)
    body = {"instance": inst.to_dict(), "verdict": v.to_dict(),
            "sup_trace": {"status": "Unbounded-suspected" if suspected else "Bounded-trace",
                          "sup": res.sup.row(), "flagged": flagged}}
    flags: dict[str, bool] = {}
    tables: dict[str, list] = {}

    bounded = v.status == Status.BOUNDED
    if bounded:
        flags["sup_trace_bounded"] = not suspected
        if all(d == 1 for d in inst.dims):
            grid = _grid(cfg, inst.n)
            br = dilated_bump_ratios(inst, grid, cfg.get("bump_scales", list(range(-3, 4))))
            body["operator"] = {"grid": grid.to_dict(), "log2_scales": list(br.log2_scales),
                                "ratios": list(br.ratios), "variation": br.variation}
            tables["ratios.csv"] = [{"log2_scale": j, "ratio": x}
                                    for j, x in zip(br.log2_scales, br.ratios)]
            flags["ratios_stable"] = br.variation < 0.25
        decayable = inst.n >= 2 and all(f.strict for f in strict_subbalance(inst)) and range_interior(inst)
        if decayable:
            fits = [eccentricity_decay_fit(inst, pivot=k, cfg=qc, threads=threads) for k in range(inst.n)]
            body["decay"] = {"fits": [f.to_dict() for f in fits], "r": float(choose_r(inst, keep_fraction=0.5))}
            flags["decay_positive"] = all(f.eps_hat > 0 and f.eps_hat > 2 * f.stderr for f in fits)
    elif v.status == Status.UNBOUNDED:
        reports = _witness_reports(inst, cfg, args)
        body["witnesses"] = [rep.to_dict() for rep in reports]
        tables["witness.csv"] = _rung_rows(reports)
        flags["witness_blowup"] = any(rep.verdict == "BlowUp" for rep in reports)
    else:
        eps = as_fraction(cfg.get("perturb_eps", "1/100"))
        body["perturbation"] = perturb_endpoints(inst, eps).to_dict()

    agree = all(flags.values())
    body["consistency"] = {"flags": flags, "agree": agree,
                           "conditions": {"characteristic": v.status.value,
                                          "sup_trace": body["sup_trace"]["status"]}}
    text = f"{v.status.value}: " + ", ".join(f"{k}={'yes' if x else 'NO'}" for k, x in flags.items())
    if not flags:
        text += "no numerical checks apply"
    return body, tables, EXIT_OK if agree else EXIT_DISAGREE, text


def cmd_sweep(cfg: dict, args):
    sw = cfg["sweep"]
    gammas, deltas = _frange(sw["gamma"]), _frange(sw["delta"])
    if not gammas or not deltas:
        raise ConfigError("sweep lattice is empty")
    rows = []
    asym = 0
    for g, d in itertools.product(gammas, deltas):
        try:
            inst = make_instance(sw["dims"], sw["alpha"], sw["p"], sw["q"], g, d)
        except InvalidInstance as exc:
            raise ConfigError(str(exc)) from exc
        v = verdict(inst)
        row = {"gamma": format_fraction(g), "delta": format_fraction(d), "status": v.status.value,
               "cases": "|".join(c.value for c in v.cases), "violations": "|".join(v.violations)}
        for c in v.constraints:
            row[f"margin:{c.name}"] = format_fraction(c.margin)
        if sw.get("duality"):
            dv = verdict(inst.dual())
            row["dual_status"] = dv.status.value
            row["dual_cases"] = "|".join(c.value for c in dv.cases)
            asym += dv.status != v.status
        if sw.get("verify"):
            sub = copy.deepcopy({k: x for k, x in cfg.items() if k != "sweep"})
            sub["instance"] = inst.to_dict()
            _, _, code, _ = cmd_verify(sub, args)
            row["verify_agree"] = code == EXIT_OK
        rows.append(row)
    counts = {s.value: sum(r["status"] == s.value for r in rows) for s in Status}
    body = {"rows": len(rows), "counts": counts}
    if sw.get("duality"):
        body["duality_mismatches"] = asym
    return body, {"sweep.csv": rows}, EXIT_OK, f"{len(rows)} instances: {counts}"


COMMANDS = {
    "verdict": cmd_verdict,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "characteristic": cmd_characteristic,
    "operator": cmd_operator,
    "witness": cmd_witness,
    "decay": cmd_decay,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracweights", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="directory for report.json and CSV tables")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None, help="relative quadrature tolerance")
        sp.add_argument("--threads", type=int, default=None)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(load_config(args.config), args.command)
        body, tables, code, text = COMMANDS[args.command](cfg, args)
    except (ConfigError, FracWeightsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = {
        "command": args.command,
        "config": cfg,
        "result": body,
        "provenance": {"tool": "fracweights", "version": __version__, "seed": _seed(cfg, args),
                       "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()},
    }
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
        for name, rows in tables.items():
            write_csv(out / name, _clean(rows))
    return code


def main() -> None:
    sys.exit(run())
