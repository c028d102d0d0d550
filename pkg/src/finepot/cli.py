"""Command-line interface.

Subcommands: ``run`` executes a scenario (bundled name or --config file),
``list`` prints the bundled gallery, and ``capacity``, ``wiener``,
``fine-check``, ``solve``, ``verify``, ``paste``, ``probe`` are single-task
shortcuts that assemble a one-task scenario from flags.  Geometry and field
flags take the same YAML snippets used in config files, e.g.

    finepot capacity --dim 2 --bounds="[[-2.5,2.5],[-2.5,2.5]]" --resolution 321 \
        --e "ball: {center: [0,0], radius: 1}" --a "ball: {center: [0,0], radius: 2}"

Exit codes: 0 success, 1 failed expectation, 2 config/parse errors,
3 precondition violations, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import difflib
import importlib.resources
import json
import os
import sys
from pathlib import Path

import yaml

from .errors import ConfigError, ConvergenceError, FinepotError, PreconditionError
from .scenario import TOOL_VERSION, apply_overrides, load_scenario, run_scenario

__all__ = ["main"]


def _bundled() -> dict:
    """Map of bundled scenario name -> resource path."""
    root = importlib.resources.files("finepot") / "scenarios"
    return {p.name[:-5]: p for p in sorted(root.iterdir(), key=lambda q: q.name)
            if p.name.endswith(".yaml")}


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("FINEPOT_OUT")
    return Path(env) if env else Path("finepot_out")


def _finish(report) -> int:
    for task in report.tasks:
        status = "ok" if task["status"] == "ok" and task.get("passed", True) else "FAILED"
        line = f"[{status}] {task['name']} ({task['op']})"
        for chk in task.get("checks", []):
            line += f"  | {chk['check']}: {'pass' if chk['passed'] else 'FAIL'}"
        print(line)
    print(f"report: {report.out_dir / 'run_report.json'}")
    return report.exit_code


def _run_config(config: dict, args, base_dir: Path | None = None) -> int:
    if args.seed is not None:
        config = dict(config)
        config["seed"] = args.seed
    if getattr(args, "set", None):
        config = apply_overrides(config, args.set)
    scenario = load_scenario(config, base_dir=base_dir)
    report = run_scenario(scenario, _out_dir(args), jobs=getattr(args, "jobs", 1))
    return _finish(report)


def _cmd_run(args) -> int:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        config = yaml.safe_load(path.read_text())
        return _run_config(config, args, base_dir=path.parent)
    if not args.scenario:
        raise ConfigError("run needs a bundled scenario name or --config FILE")
    gallery = _bundled()
    if args.scenario not in gallery:
        hints = difflib.get_close_matches(args.scenario, gallery, n=3)
        msg = f"unknown scenario {args.scenario!r}; available: {', '.join(sorted(gallery))}"
        if hints:
            msg += f" (did you mean: {', '.join(hints)}?)"
        raise ConfigError(msg)
    config = yaml.safe_load(gallery[args.scenario].read_text())
    return _run_config(config, args)


def _cmd_list(args) -> int:
    for name, res in _bundled().items():
        config = yaml.safe_load(res.read_text())
        desc = config.get("description", "").strip()
        print(f"{name:32s} {desc}")
    return 0


def _parse_snippet(text: str, what: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {what} snippet {text!r}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{what} snippet must be a mapping, got {text!r}")
    return data


def _domain_section(args) -> dict:
    section = {
        "dim": args.dim,
        "bounds": yaml.safe_load(args.bounds),
        "resolution": yaml.safe_load(str(args.resolution)),
        "p": args.p,
    }
    if args.weight:
        section["weight"] = _parse_snippet(args.weight, "weight")
    return section


def _single_task(args, geometry: dict, fields: dict, task: dict) -> int:
    config = {
        "domain": _domain_section(args),
        "geometry": geometry,
        "fields": fields,
        "tasks": [task],
        "seed": args.seed if args.seed is not None else 0,
    }
    scenario = load_scenario(config)
    report = run_scenario(scenario, _out_dir(args))
    return _finish(report)


def _cmd_capacity(args) -> int:
    geometry = {"E": _parse_snippet(args.e, "set")}
    task = {"name": "capacity", "op": "capacity", "e": "E", "potential_csv": args.csv}
    if args.a:
        geometry["A"] = _parse_snippet(args.a, "set")
        task["a"] = "A"
    return _single_task(args, geometry, {}, task)


def _cmd_wiener(args) -> int:
    geometry = {"E": _parse_snippet(args.e, "set")}
    task = {"name": "wiener", "op": "wiener", "set": "E",
            "point": yaml.safe_load(args.point), "r0": args.r0}
    if args.expect:
        task["expect"] = args.expect
    return _single_task(args, geometry, {}, task)


def _cmd_fine_check(args) -> int:
    geometry = {"V": _parse_snippet(args.v, "set")}
    task = {"name": "fine_check", "op": "fine_check", "set": "V",
            "max_points": args.max_points}
    if args.r0:
        task["r0"] = args.r0
    if args.expect:
        task["expect"] = args.expect
    return _single_task(args, geometry, {}, task)


def _cmd_solve(args) -> int:
    geometry = {"U": _parse_snippet(args.region, "set")}
    fields = {"f": _parse_snippet(args.data, "field")}
    task = {"name": "solve", "op": "solve", "region": "U", "data": "f",
            "solution_csv": args.csv, "solution_pgm": args.pgm}
    if args.obstacle:
        fields["psi"] = _parse_snippet(args.obstacle, "field")
        task["obstacle"] = "psi"
    return _single_task(args, geometry, fields, task)


def _cmd_verify(args) -> int:
    geometry = {"U": _parse_snippet(args.region, "set")}
    fields = {"u": {"from_csv": {"path": args.field_csv}}}
    task = {"name": "verify", "op": "verify", "field": "u", "region": "U",
            "kind": args.kind, "n_tests": args.n_tests, "method": args.method}
    return _single_task(args, geometry, fields, task)


def _cmd_paste(args) -> int:
    geometry = {"U1": _parse_snippet(args.set1, "set"), "U2": _parse_snippet(args.set2, "set")}
    fields = {"u1": _parse_snippet(args.u1, "field"), "u2": _parse_snippet(args.u2, "field")}
    task = {"name": "paste", "op": "paste", "set1": "U1", "set2": "U2",
            "u1": "u1", "u2": "u2", "n_tests": args.n_tests}
    return _single_task(args, geometry, fields, task)


def _cmd_probe(args) -> int:
    fields = {"u": {"from_csv": {"path": args.field_csv}}}
    task = {"name": "probe", "op": "probe", "field": "u",
            "center": yaml.safe_load(args.center), "r0": args.r0,
            "tau_trim": args.tau_trim}
    geometry = {}
    if args.region:
        geometry["R"] = _parse_snippet(args.region, "set")
        task["region"] = "R"
    return _single_task(args, geometry, fields, task)


def _add_domain_flags(sp):
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--bounds", default="[[-1,1],[-1,1]]",
                    help="YAML per-axis bounds, e.g. [[-2,2],[-2,2]]")
    sp.add_argument("--resolution", default="65")
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--weight", default=None,
                    help="YAML weight spec, e.g. '{kind: power, alpha: -1, center: [0,0]}'")


def _add_common(sp):
    sp.add_argument("--out", default=None, help="output directory (or FINEPOT_OUT)")
    sp.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finepot",
        description="Nonlinear fine potential theory toolkit: capacities, "
                    "thinness, obstacle and Dirichlet p-energy problems on grids.")
    parser.add_argument("--version", action="version", version=f"finepot {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="run a bundled scenario or a config file")
    sp.add_argument("scenario", nargs="?", default=None)
    sp.add_argument("--config", default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--set", action="append", default=[],
                    metavar="KEY=VALUE", help="override a config field")
    _add_common(sp)
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("list", help="list the bundled scenario gallery")
    sp.set_defaults(func=_cmd_list)

    sp = sub.add_parser("capacity", help="variational (with --a) or Sobolev capacity")
    sp.add_argument("--e", required=True, help="YAML set snippet for E")
    sp.add_argument("--a", default=None, help="YAML set snippet for A")
    sp.add_argument("--csv", action="store_true", help="dump the potential as CSV")
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_capacity)

    sp = sub.add_parser("wiener", help="thinness profile of a set at a point")
    sp.add_argument("--e", required=True)
    sp.add_argument("--point", required=True, help="YAML point, e.g. [0,0]")
    sp.add_argument("--r0", type=float, required=True)
    sp.add_argument("--expect", choices=["thin", "not_thin", "inconclusive"], default=None)
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_wiener)

    sp = sub.add_parser("fine-check", help="finely-open classification of a set")
    sp.add_argument("--v", required=True)
    sp.add_argument("--max-points", type=int, default=48)
    sp.add_argument("--r0", type=float, default=None)
    sp.add_argument("--expect", default=None,
                    choices=["finely_open", "not_finely_open", "inconclusive"])
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_fine_check)

    sp = sub.add_parser("solve", help="obstacle / Dirichlet problem on a region")
    sp.add_argument("--region", required=True)
    sp.add_argument("--data", required=True, help="YAML field snippet for the data")
    sp.add_argument("--obstacle", default=None)
    sp.add_argument("--csv", action="store_true")
    sp.add_argument("--pgm", action="store_true")
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("verify", help="(super)minimizer verification of a CSV field")
    sp.add_argument("--field-csv", required=True)
    sp.add_argument("--region", required=True)
    sp.add_argument("--kind", default="superminimizer",
                    choices=["superminimizer", "subminimizer", "minimizer"])
    sp.add_argument("--method", default="energy", choices=["energy", "weak_form"])
    sp.add_argument("--n-tests", type=int, default=100)
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("paste", help="paste two fields and verify the result")
    sp.add_argument("--set1", required=True)
    sp.add_argument("--set2", required=True)
    sp.add_argument("--u1", required=True)
    sp.add_argument("--u2", required=True)
    sp.add_argument("--n-tests", type=int, default=60)
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_paste)

    sp = sub.add_parser("probe", help="fine-limit probe of a CSV field at a point")
    sp.add_argument("--field-csv", required=True)
    sp.add_argument("--center", required=True)
    sp.add_argument("--r0", type=float, required=True)
    sp.add_argument("--tau-trim", type=float, default=0.05)
    sp.add_argument("--region", default=None)
    _add_domain_flags(sp)
    _add_common(sp)
    sp.set_defaults(func=_cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(json.dumps({"error": {"type": "ConfigError", "message": str(e)}}),
              file=sys.stderr)
        return 2
    except ConvergenceError as e:
        print(json.dumps({"error": {"type": "ConvergenceError", "message": str(e)}}),
              file=sys.stderr)
        return 4
    except PreconditionError as e:
        print(json.dumps({"error": {"type": type(e).__name__, "message": str(e)}}),
              file=sys.stderr)
        return 3
    except FinepotError as e:
        print(json.dumps({"error": {"type": type(e).__name__, "message": str(e)}}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
