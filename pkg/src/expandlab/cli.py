"""Command-line interface binding the modules into reproducible runs.

Commands: classify, thresholds, recover, fold, expand, surface-distance,
verify-recovery, gen-fractal.  Every run echoes its configuration in the
JSON output; with --no-timestamp the same config and seed produce
byte-identical documents.  Exact rationals are emitted as {"num", "den"}
objects, never floats.

Exit codes: 0 ok; 2 usage or parse error; 3 inconclusive classification or
degenerate precondition; 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .degeneracy import (
    INCONCLUSIVE,
    ZeroPolicy,
    classify,
    surface_distance_check,
    thresholds,
    THEOREMS,
)
from .dimlab import expansion_experiment
from .errors import ExpandlabError, NumericalError, PreconditionError, BudgetError
from .expr import DomainError, FunctionSpec, ParseError, parse
from .foldgeom import DEGENERATE, fold_verify
from .fractal import CantorSpec, cantor_points, digit_points, load_points, save_points
from .jsonutil import jsonable
from .specialform import (
    SampledFunction1D,
    reconstruction_residual,
    recover_bivariate,
    recover_trivariate,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3
EXIT_NUMERICAL = 4


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("EXPANDLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _parse_box(text: str, arity: int) -> tuple[tuple[float, float], ...]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2 * arity:
        raise ValueError(f"--box needs {2 * arity} comma-separated numbers, got {len(parts)}")
    return tuple((parts[2 * i], parts[2 * i + 1]) for i in range(arity))


def _parse_point(text: str, arity: int | None = None) -> tuple[float, ...]:
    parts = tuple(float(p) for p in text.split(","))
    if arity is not None and len(parts) != arity:
        raise ValueError(f"expected {arity} coordinates, got {len(parts)}")
    return parts


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text)


def _parse_params(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--param expects name=value, got {item!r}")
        name, value = item.split("=", 1)
        out[name.strip()] = Fraction(value.strip())
    return out


def _parse_ladder(text: str) -> list:
    """'3^-4..3^-12' -> exact powers; otherwise comma-separated values
    (fractions like 1/243 stay exact, decimals become floats)."""
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)

        def split_power(s: str) -> tuple[int, int]:
            base_s, exp_s = s.split("^", 1)
            return int(base_s), int(exp_s)

        b1, e1 = split_power(lo_s.strip())
        b2, e2 = split_power(hi_s.strip())
        if b1 != b2:
            raise ValueError(f"ladder endpoints must share a base: {text!r}")
        if e1 > 0 or e2 > 0:
            raise ValueError("ladder exponents must be negative (e.g. 2^-6..2^-20)")
        ks = range(min(-e1, -e2), max(-e1, -e2) + 1)
        return [Fraction(1, b1**k) for k in ks]
    out = []
    for part in text.split(","):
        part = part.strip()
        if "/" in part:
            out.append(Fraction(part))
        else:
            out.append(float(part))
    return out


def _parse_set_spec(spec: str, budget: int):
    """'b4d01:12' (base-4 digits {0,1}, level 12), 'm2r1/3:14' (2-branch
    ratio-1/3 construction, level 14), or 'file:points.bin'."""
    spec = spec.strip()
    if spec.startswith("file:"):
        return load_points(spec[5:])
    head, _, level_s = spec.partition(":")
    if not level_s:
        raise ValueError(f"set spec {spec!r} needs ':<level>'")
    level = int(level_s)
    if head.startswith("b") and "d" in head:
        base_s, digits_s = head[1:].split("d", 1)
        digits = [int(ch) for ch in digits_s]
        return digit_points(int(base_s), digits, level, budget=budget)
    if head.startswith("m") and "r" in head:
        m_s, r_s = head[1:].split("r", 1)
        r = Fraction(r_s) if "/" in r_s or "." not in r_s else float(r_s)
        return cantor_points(CantorSpec(int(m_s), r, level), budget=budget)
    raise ValueError(f"unrecognized set spec {spec!r}")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.pop("schema_version", 1)
    if version != 1:
        raise ValueError(f"unsupported config schema_version {version}")
    return doc


def _apply_config(parser: argparse.ArgumentParser, argv, args: argparse.Namespace, config: dict):
    """Re-parse with config values as the subcommand's defaults; explicit
    flags keep priority."""
    mapped = {}
    for key, value in config.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"config key {key!r} does not match any option")
        mapped[attr] = value
    parser._command_parsers[args.command].set_defaults(**mapped)
    return parser.parse_args(argv)


def _emit(document: dict, args: argparse.Namespace):
    if not getattr(args, "no_timestamp", False):
        document["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    text = json.dumps(jsonable(document), indent=2, sort_keys=True)
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _echo_config(args: argparse.Namespace, command: str) -> dict:
    skip = {"out", "func"}
    options = {
        k: v for k, v in sorted(vars(args).items()) if k not in skip and not k.startswith("_")
    }
    return {
        "command": command,
        "options": jsonable(options),
        "version": __version__,
        "schema_version": 1,
    }


def _function_from_args(args) -> FunctionSpec:
    expr = parse(args.function)
    if args.vars:
        names = tuple(v.strip() for v in args.vars.split(","))
    else:
        from .expr import free_vars

        names = tuple(sorted(free_vars(expr)))
        if not names:
            raise ValueError("the expression has no variables; pass --vars explicitly")
    box = _parse_box(args.box, len(names)) if args.box else ((0.0, 1.0),) * len(names)
    return FunctionSpec(expr, names, box)


def _policy(args) -> ZeroPolicy:
    return ZeroPolicy(
        samples=getattr(args, "samples", 64),
        rel_tol=getattr(args, "rel_tol", 1e-9),
        seed=getattr(args, "seed", 0),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_classify(args) -> int:
    f = _function_from_args(args)
    report = classify(f, _policy(args))
    doc = {"config": _echo_config(args, "classify"), "report": report.to_json_dict()}
    if args.thresholds:
        doc["thresholds"] = thresholds(args.thresholds, **_parse_params(args.param)).to_json_dict()
    print(f"classification: {report.classification}", file=sys.stderr)
    if report.witness_point is not None:
        print(
            f"witness: {report.witness_certificate} = {report.witness_value:.6g} "
            f"at {report.witness_point}",
            file=sys.stderr,
        )
    _emit(doc, args)
    return EXIT_INCONCLUSIVE if report.classification == INCONCLUSIVE else EXIT_OK


def cmd_thresholds(args) -> int:
    report = thresholds(args.theorem, **_parse_params(args.param))
    doc = {"config": _echo_config(args, "thresholds"), "report": report.to_json_dict()}
    _emit(doc, args)
    return EXIT_OK


def cmd_recover(args) -> int:
    f = _function_from_args(args)
    base = _parse_point(args.base, f.arity) if args.base else None
    kwargs = dict(base=base, grid_n=args.grid_n, residual_tol=args.residual_tol, policy=_policy(args))
    result = recover_bivariate(f, **kwargs) if f.arity == 2 else recover_trivariate(f, **kwargs)
    doc = {"config": _echo_config(args, "recover"), "report": result.to_json_dict()}
    if args.out_dir:
        _export_components(result.components, args.out_dir, result.to_json_dict())
        doc["components_dir"] = args.out_dir
    print(f"recovery: {result.verdict} (residual {result.residual:.3e})", file=sys.stderr)
    _emit(doc, args)
    return EXIT_OK if result.success else EXIT_NUMERICAL


def cmd_fold(args) -> int:
    f = _function_from_args(args)
    base = _parse_point(args.base, 2)
    report = fold_verify(f, base, theta=args.theta, policy=_policy(args), seed=args.seed)
    doc = {"config": _echo_config(args, "fold"), "report": report.to_json_dict()}
    verdict = report.verdict if report.reason is None else f"{report.verdict} ({report.reason})"
    print(f"fold check at {base}: {verdict}", file=sys.stderr)
    _emit(doc, args)
    return EXIT_OK if report.verified else EXIT_INCONCLUSIVE


def cmd_expand(args) -> int:
    f = _function_from_args(args)
    specs = [s for s in args.inputs.split(",") if s.strip()]
    if len(specs) == 1:
        specs = specs * f.arity
    inputs = [_parse_set_spec(s, args.budget) for s in specs]
    ladder = _parse_ladder(args.ladder)
    value_range = None
    if args.value_range:
        lo, hi = _parse_point(args.value_range, 2)
        value_range = (lo, hi)
    deg = classify(f, _policy(args)) if args.classify_first else None
    report = expansion_experiment(
        f,
        inputs,
        ladder,
        theorem=args.theorem,
        theorem_params=_parse_params(args.param),
        slack=args.slack,
        delta_min=args.delta_min,
        value_range=value_range,
        threads=args.threads,
        degeneracy_report=deg,
    )
    doc = {"config": _echo_config(args, "expand"), "report": report.to_json_dict()}
    if deg is not None:
        doc["classification"] = deg.to_json_dict()
    if args.ladder_csv:
        _write_ladder_csv(report, args.ladder_csv)
    status = "pass" if report.passed else "fail"
    print(
        f"image slope {report.image_estimate.slope:.4f} vs bound "
        f"{float(report.bound):.4f} - {report.slack} -> {status}",
        file=sys.stderr,
    )
    _emit(doc, args)
    return EXIT_OK


def cmd_surface_distance(args) -> int:
    components = [parse(c) for c in args.psi.split(";")]
    uvars = tuple(v.strip() for v in args.uvars.split(","))
    x = _parse_point(args.x)
    u = _parse_point(args.u)
    check = surface_distance_check(components, uvars, x, u, tol=args.tol)
    doc = {"config": _echo_config(args, "surface-distance"), "report": check.to_json_dict()}
    _emit(doc, args)
    return EXIT_OK


def cmd_verify_recovery(args) -> int:
    f = _function_from_args(args)
    components = _load_components(args.components)
    residual = reconstruction_residual(f, components, args.verify_n)
    ok = residual < args.residual_tol
    doc = {
        "config": _echo_config(args, "verify-recovery"),
        "report": {
            "residual": residual,
            "residual_tol": args.residual_tol,
            "verdict": "success" if ok else "failure",
        },
    }
    print(f"replayed residual: {residual:.3e}", file=sys.stderr)
    _emit(doc, args)
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_gen_fractal(args) -> int:
    ps = _parse_set_spec(args.spec, args.budget)
    save_points(ps, args.out_file)
    doc = {
        "config": _echo_config(args, "gen-fractal"),
        "report": {
            "count": len(ps),
            "dimension": ps.dimension,
            "interval": list(ps.interval),
            "path": args.out_file,
        },
    }
    _emit(doc, args)
    return EXIT_OK


def _export_components(components: dict, directory: str, meta: dict):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, sf in components.items():
        with open(d / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["grid", "value"])
            for g, v in zip(sf.grid, sf.values):
                writer.writerow([repr(float(g)), repr(float(v))])
    (d / "meta.json").write_text(json.dumps(jsonable(meta), indent=2, sort_keys=True))


def _load_components(directory: str) -> dict:
    d = Path(directory)
    components = {}
    for path in sorted(d.glob("*.csv")):
        grid, values = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                grid.append(float(row[0]))
                values.append(float(row[1]))
        components[path.stem] = SampledFunction1D(np.array(grid), np.array(values), name=path.stem)
    if not components:
        raise ValueError(f"no component CSV files found in {directory}")
    return components


def _write_ladder_csv(report, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "count", "log_inv_delta", "log_count", "covered_fraction"])
        covered = dict(report.covered_trace)
        import math

        for d, n in report.image_estimate.ladder:
            writer.writerow(
                [repr(d), n, repr(-math.log(d)), repr(math.log(n)), repr(covered.get(d, ""))]
            )


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expandlab",
        description="Degeneracy certificates, thresholds, fold verification, "
        "special-form recovery, and dimension-expansion experiments.",
    )
    parser.add_argument("--version", action="version", version=f"expandlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser._command_parsers = {}

    def add_command(name, **kw):
        sp = sub.add_parser(name, **kw)
        parser._command_parsers[name] = sp
        return sp

    def common(p, function=True):
        if function:
            p.add_argument("-f", "--function", required=True, help="expression text")
            p.add_argument(
                "--vars",
                help="comma-separated variable names (default: free variables, sorted)",
            )
            p.add_argument(
                "--box",
                help="lo,hi per variable, comma-separated (default: 0,1 per variable)",
            )
        p.add_argument("--config", help="JSON config file; CLI flags override its fields")
        p.add_argument("--out", help="write the JSON document to a file instead of stdout")
        p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=64, help="zero-test sample count")
        p.add_argument("--rel-tol", type=float, default=1e-9, help="zero-test relative tolerance")

    p = add_command("classify", help="special-form / expanding classification")
    common(p)
    p.add_argument("--thresholds", choices=THEOREMS, help="append this theorem's thresholds")
    p.add_argument("--param", action="append", help="theorem parameter name=value")
    p.set_defaults(func=cmd_classify)

    p = add_command("thresholds", help="exact dimensional thresholds")
    common(p, function=False)
    p.add_argument("--theorem", required=True, choices=THEOREMS)
    p.add_argument("--param", action="append", help="theorem parameter name=value")
    p.set_defaults(func=cmd_thresholds)

    p = add_command("recover", help="recover a special-form decomposition")
    common(p)
    p.add_argument("--base", help="base point coordinates, comma-separated (default: box center)")
    p.add_argument("--grid-n", type=int, default=257)
    p.add_argument("--residual-tol", type=float, default=1e-6)
    p.add_argument("--out-dir", help="export recovered components as CSV into this directory")
    p.set_defaults(func=cmd_recover)

    p = add_command("fold", help="verify the fold certificate at a base point")
    common(p)
    p.add_argument("--base", required=True, help="base point x,y")
    p.add_argument("--theta", type=float, default=1.0)
    p.set_defaults(func=cmd_fold)

    p = add_command("expand", help="dimension-expansion experiment")
    common(p)
    p.add_argument(
        "--inputs",
        "--cantor",
        dest="inputs",
        required=True,
        help="set specs, one per variable or one shared: b4d01:12, m2r1/3:14, file:pts.bin",
    )
    p.add_argument("--ladder", required=True, help="e.g. 2^-6..2^-20 or comma-separated deltas")
    p.add_argument("--theorem", required=True, choices=THEOREMS)
    p.add_argument("--param", action="append", help="theorem parameter name=value")
    p.add_argument("--slack", type=float, default=0.05)
    p.add_argument("--delta-min", type=float, default=None)
    p.add_argument("--value-range", help="declared image range lo,hi")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--budget", type=int, default=1 << 24)
    p.add_argument("--ladder-csv", help="write the (delta, N) ladder as CSV")
    p.add_argument(
        "--classify-first",
        action="store_true",
        help="run the classifier and attach its report (warns when inputs leave the witness box)",
    )
    p.set_defaults(func=cmd_expand)

    p = add_command("surface-distance", help="tangency certificate for distance-to-hypersurface")
    common(p, function=False)
    p.add_argument("--psi", required=True, help="semicolon-separated surface components")
    p.add_argument("--uvars", required=True, help="comma-separated parameter names")
    p.add_argument("--x", required=True, help="ambient point coordinates")
    p.add_argument("--u", required=True, help="surface parameter coordinates")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_surface_distance)

    p = add_command("verify-recovery", help="replay a recovery from exported components")
    common(p)
    p.add_argument("--components", required=True, help="directory of component CSV files")
    p.add_argument("--verify-n", type=int, default=50)
    p.add_argument("--residual-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify_recovery)

    p = add_command("gen-fractal", help="generate a point set and write it as binary")
    common(p, function=False)
    p.add_argument("--spec", required=True, help="b4d01:12 or m2r1/3:14")
    p.add_argument("--budget", type=int, default=1 << 24)
    p.add_argument("out_file", help="output path")
    p.set_defaults(func=cmd_gen_fractal)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(getattr(args, "config", None))
        if config:
            args = _apply_config(parser, argv, args, config)
        return args.func(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, BudgetError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as err:
        print(f"precondition: {err}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (NumericalError, DomainError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
