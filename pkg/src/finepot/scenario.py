"""Declarative scenario runner.

A scenario is a YAML document with four sections:

``domain``
    dim, bounds, resolution, weight ({kind: constant} or
    {kind: power, alpha, center}), p, and optional epsilon_floor.
``geometry``
    named node sets built from primitives (ball, box, halfspace, segment,
    cusp, point, all) and set expressions (union, intersection, difference,
    complement) referencing earlier names.
``fields``
    named scalar fields from closed forms (constant, log_abs, power_abs,
    distance, coordinate, linear) or loaded from CSV (from_csv).
``tasks``
    an ordered list of operations (capacity, strictness, wiener, fine_check,
    fine_boundary, solve, verify, paste, min_combine, remove, probe).  Tasks
    may consume outputs of earlier tasks through "@taskname.solution" /
    "@taskname.potential" / "@taskname.extended" references and may carry
    expectations (``expect``, oracle error bounds, probe trend bounds) that
    turn them into acceptance checks: a run exits nonzero when any
    expectation fails.

Every task writes ``<name>.json`` into the output directory, plus optional
CSV/PGM dumps.  Runs are reproducible: identical config and seed give
identical task outputs (wall times live only in the run report).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from . import fields as field_forms
from . import geometry as geom
from .capacity import sobolev_capacity, strictness_modulus, variational_capacity
from .errors import ConfigError, ConvergenceError, FinepotError, PreconditionError
from .fine_analysis import fine_limit_probe, min_combine, paste, remove_and_verify
from .fine_topology import SamplingSpec, fine_boundary, is_finely_open, wiener_profile
from .grid import GridDomain, NodeSet, ScalarField, WeightSpec, build_domain
from .io import (field_from_csv, field_to_csv, write_classification_pgm,
                 write_field_pgm, write_json)
from .solver import ObstacleProblem, solve_obstacle, verify_superminimizer, verify_weak_form

__all__ = ["Scenario", "RunReport", "load_scenario", "run_scenario", "apply_overrides"]

TOOL_VERSION = "0.1.0"

_GEOM_PRIMS = {"ball", "box", "halfspace", "segment", "cusp", "wedge", "point", "all"}
_GEOM_EXPRS = {"union", "intersection", "difference", "complement"}
_FIELD_FORMS = {"constant", "log_abs", "power_abs", "distance", "coordinate",
                "linear", "cone", "from_csv"}


@dataclass(eq=False)
class Scenario:
    domain: GridDomain
    p: float
    seed: int
    geometry: dict
    fields: dict
    tasks: list
    config: dict
    base_dir: Path


@dataclass(eq=False)
class RunReport:
    out_dir: Path
    tasks: list = dc_field(default_factory=list)
    manifest: list = dc_field(default_factory=list)
    config_echo: dict = dc_field(default_factory=dict)
    seed: int = 0
    exit_code: int = 0

    def to_json(self) -> dict:
        return {
            "tool_version": TOOL_VERSION,
            "seed": self.seed,
            "exit_code": self.exit_code,
            "config_echo": self.config_echo,
            "tasks": self.tasks,
            "output_manifest": [str(p) for p in self.manifest],
        }


def _need(mapping: dict, key: str, ctx: str):
    if key not in mapping:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return mapping[key]


def _build_geometry(domain: GridDomain, spec: dict) -> dict:
    out: dict[str, NodeSet] = {}
    for name, entry in (spec or {}).items():
        if not isinstance(entry, dict) or len(entry) != 1:
            raise ConfigError(f"geometry {name!r}: expected one primitive or expression")
        kind, args = next(iter(entry.items()))
        ctx = f"geometry {name!r} ({kind})"
        if kind in _GEOM_EXPRS:
            if kind == "complement":
                ref = args if isinstance(args, str) else _need({"a": None}, "a", ctx)
                if ref not in out:
                    raise ConfigError(f"{ctx}: unknown set {ref!r}")
                out[name] = ~out[ref]
                continue
            refs = args
            if not isinstance(refs, list) or not refs:
                raise ConfigError(f"{ctx}: expected a list of set names")
            sets = []
            for ref in refs:
                if ref not in out:
                    raise ConfigError(f"{ctx}: unknown set {ref!r}")
                sets.append(out[ref])
            acc = sets[0]
            for s in sets[1:]:
                acc = acc | s if kind == "union" else acc & s if kind == "intersection" else acc - s
            out[name] = acc
            continue
        if kind not in _GEOM_PRIMS:
            raise ConfigError(f"{ctx}: unknown primitive")
        args = args or {}
        try:
            if kind == "ball":
                out[name] = geom.ball(domain, _need(args, "center", ctx), _need(args, "radius", ctx))
            elif kind == "box":
                out[name] = geom.box(domain, _need(args, "lo", ctx), _need(args, "hi", ctx))
            elif kind == "halfspace":
                out[name] = geom.halfspace(domain, _need(args, "axis", ctx),
                                           _need(args, "value", ctx), args.get("side", "le"))
            elif kind == "segment":
                out[name] = geom.segment(domain, _need(args, "a", ctx), _need(args, "b", ctx),
                                         args.get("width", 0.0))
            elif kind == "cusp":
                out[name] = geom.cusp(domain, _need(args, "tip", ctx),
                                      axis=args.get("axis", 0),
                                      profile=args.get("profile", "exp"),
                                      beta=args.get("beta", 2.0),
                                      length=args.get("length", 1.0),
                                      scale=args.get("scale", 1.0))
            elif kind == "wedge":
                out[name] = geom.wedge(domain, _need(args, "tip", ctx),
                                       axis=args.get("axis", 0),
                                       length=args.get("length", 1.0))
            elif kind == "point":
                out[name] = geom.point(domain, _need(args, "at", ctx))
            elif kind == "all":
                out[name] = domain.all_nodes()
        except PreconditionError as e:
            raise ConfigError(f"{ctx}: {e}") from e
    return out


def _build_fields(domain: GridDomain, spec: dict, base_dir: Path) -> dict:
    out: dict[str, ScalarField] = {}
    for name, entry in (spec or {}).items():
        if not isinstance(entry, dict) or len(entry) != 1:
            raise ConfigError(f"field {name!r}: expected one closed form")
        kind, args = next(iter(entry.items()))
        args = args or {}
        ctx = f"field {name!r} ({kind})"
        if kind not in _FIELD_FORMS:
            raise ConfigError(f"{ctx}: unknown field form")
        if kind == "constant":
            value = _need(args, "value", ctx)
            value = float("-inf") if value in ("-inf", "-Infinity") else float(value)
            out[name] = field_forms.constant(domain, value)
        elif kind == "log_abs":
            out[name] = field_forms.log_abs(domain, args.get("center"), args.get("floor"))
        elif kind == "power_abs":
            out[name] = field_forms.power_abs(domain, _need(args, "exponent", ctx),
                                              args.get("center"), args.get("floor"))
        elif kind == "distance":
            out[name] = field_forms.distance_to(domain, _need(args, "to", ctx))
        elif kind == "coordinate":
            out[name] = field_forms.coordinate(domain, _need(args, "axis", ctx))
        elif kind == "linear":
            out[name] = field_forms.linear(domain, _need(args, "coeffs", ctx),
                                           args.get("offset", 0.0))
        elif kind == "cone":
            out[name] = field_forms.cone(domain, _need(args, "to", ctx),
                                         args.get("offset", 0.0), args.get("slope", -1.0))
        elif kind == "from_csv":
            out[name] = field_from_csv(domain, base_dir / _need(args, "path", ctx))
    return out


def load_scenario(config: dict | str | Path, base_dir: Path | None = None) -> Scenario:
    if not isinstance(config, dict):
        path = Path(config)
        base_dir = base_dir or path.parent
        try:
            config = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    base_dir = base_dir or Path.cwd()
    if not isinstance(config, dict):
        raise ConfigError("scenario config must be a mapping")
    dom_spec = _need(config, "domain", "scenario")
    weight_spec = dom_spec.get("weight", {"kind": "constant"})
    kind = weight_spec.get("kind", "constant")
    if kind == "constant":
        weight = WeightSpec.constant()
    elif kind == "power":
        weight = WeightSpec.power(_need(weight_spec, "alpha", "weight"),
                                  _need(weight_spec, "center", "weight"))
    else:
        raise ConfigError(f"unknown weight kind {kind!r}")
    p = float(dom_spec.get("p", 2.0))
    try:
        domain = build_domain(
            _need(dom_spec, "dim", "domain"),
            _need(dom_spec, "bounds", "domain"),
            _need(dom_spec, "resolution", "domain"),
            weight=weight,
            p=p,
            epsilon_floor=float(dom_spec.get("epsilon_floor", 1e-8)),
        )
    except PreconditionError as e:
        raise ConfigError(f"domain: {e}") from e
    geometry = _build_geometry(domain, config.get("geometry", {}))
    field_map = _build_fields(domain, config.get("fields", {}), Path(base_dir))
    tasks = config.get("tasks", [])
    if not isinstance(tasks, list):
        raise ConfigError("tasks must be a list")
    names = set()
    for i, task in enumerate(tasks):
        if not isinstance(task, dict) or "op" not in task:
            raise ConfigError(f"task #{i}: expected a mapping with an 'op' key")
        name = task.get("name", f"task{i}")
        if name in names:
            raise ConfigError(f"duplicate task name {name!r}")
        names.add(name)
    return Scenario(domain=domain, p=p, seed=int(config.get("seed", 0)),
                    geometry=geometry, fields=field_map, tasks=tasks,
                    config=config, base_dir=Path(base_dir))


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``key.path=value`` overrides; values parse as YAML scalars."""
    import copy

    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        tokens = key.replace("[", ".").replace("]", "").split(".")
        target = out
        for tok in tokens[:-1]:
            tok = int(tok) if tok.lstrip("-").isdigit() else tok
            try:
                target = target[tok]
            except (KeyError, IndexError, TypeError) as e:
                raise ConfigError(f"override {item!r}: no such path element {tok!r}") from e
        last = tokens[-1]
        last = int(last) if last.lstrip("-").isdigit() else last
        try:
            target[last] = yaml.safe_load(raw)
        except (TypeError, IndexError) as e:
            raise ConfigError(f"override {item!r}: cannot set {last!r}") from e
        except yaml.YAMLError:
            target[last] = raw
    return out


class _TaskContext:
    def __init__(self, scenario: Scenario, out_dir: Path):
        self.scenario = scenario
        self.out_dir = out_dir
        self.task_outputs: dict[str, dict] = {}
        self.files: list[Path] = []

    def resolve_set(self, name: str, ctx: str) -> NodeSet:
        if name in self.scenario.geometry:
            return self.scenario.geometry[name]
        raise ConfigError(f"{ctx}: unknown set {name!r}")

    def resolve_field(self, name: str, ctx: str) -> ScalarField:
        if isinstance(name, str) and name.startswith("@"):
            ref = name[1:]
            task, _, output = ref.partition(".")
            output = output or "solution"
            if task not in self.task_outputs:
                raise ConfigError(f"{ctx}: task {task!r} has not run (tasks run in order)")
            produced = self.task_outputs[task]
            if output not in produced:
                raise ConfigError(f"{ctx}: task {task!r} has no output {output!r}")
            return produced[output]
        if name in self.scenario.fields:
            return self.scenario.fields[name]
        raise ConfigError(f"{ctx}: unknown field {name!r}")

    def save(self, path: Path):
        self.files.append(path)


def _task_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sup_rel_err(solution: ScalarField, oracle: ScalarField, region: NodeSet) -> float:
    m = region.mask
    denom = float(np.max(np.abs(oracle.values[m])))
    denom = denom if denom > 0 else 1.0
    return float(np.max(np.abs(solution.values[m] - oracle.values[m])) / denom)


def _run_task(ctx: _TaskContext, task: dict, index: int) -> dict:
    sc = ctx.scenario
    op = task["op"]
    name = task.get("name", f"task{index}")
    tctx = f"task {name!r} ({op})"
    p = float(task.get("p", sc.p))
    seed = _task_seed(sc.seed, index)
    result: dict = {"name": name, "op": op, "p": p}
    checks: list[tuple[str, bool]] = []

    if op == "capacity":
        E = ctx.resolve_set(_need(task, "e", tctx), tctx)
        if "a" in task:
            A = ctx.resolve_set(task["a"], tctx)
            cap = variational_capacity(E, A, p, tol=task.get("tol", 1e-9))
        else:
            cap = sobolev_capacity(E, p, tol=task.get("tol", 1e-9))
        result.update(cap.to_json())
        ctx.task_outputs[name] = {"potential": cap.potential}
        if task.get("potential_csv"):
            path = field_to_csv(cap.potential, ctx.out_dir / f"{name}_potential.csv")
            ctx.save(path)
            result["potential_ref"] = path.name
        if "expect_value" in task:
            tol = float(task.get("expect_rel_tol", 0.05))
            target = float(task["expect_value"])
            rel = abs(cap.value - target) / abs(target) if target else abs(cap.value)
            result["expect_rel_err"] = rel
            checks.append((f"value within {tol:.0%} of {target}", rel <= tol))

    elif op == "strictness":
        A = ctx.resolve_set(_need(task, "a", tctx), tctx)
        E_sub = ctx.resolve_set(_need(task, "e_sub", tctx), tctx)
        value = strictness_modulus(A, E_sub, p, tol=task.get("tol", 1e-9))
        result["value"] = value
        if "expect_max" in task:
            checks.append((f"modulus <= {task['expect_max']}", value <= float(task["expect_max"])))

    elif op == "wiener":
        E = ctx.resolve_set(_need(task, "set", tctx), tctx)
        prof = wiener_profile(E, _need(task, "point", tctx), p,
                              float(_need(task, "r0", tctx)), task.get("k"))
        result.update(prof.to_json())
        if "expect" in task:
            checks.append((f"verdict == {task['expect']}", prof.verdict == task["expect"]))

    elif op == "fine_check":
        V = ctx.resolve_set(_need(task, "set", tctx), tctx)
        spec = SamplingSpec(mode=task.get("mode", "stratified"),
                            max_points=int(task.get("max_points", 48)),
                            r0=task.get("r0"), k_max=task.get("k"))
        rep = is_finely_open(V, p, spec)
        result.update(rep.to_json())
        if "expect" in task:
            checks.append((f"aggregate == {task['expect']}", rep.aggregate == task["expect"]))

    elif op == "fine_boundary":
        E = ctx.resolve_set(_need(task, "set", tctx), tctx)
        spec = SamplingSpec(mode=task.get("mode", "stratified"),
                            max_points=int(task.get("max_points", 48)),
                            r0=task.get("r0"), k_max=task.get("k"))
        rep = fine_boundary(E, p, spec)
        result.update(rep.to_json())
        if task.get("pgm"):
            path = write_classification_pgm(rep.boundary, ctx.out_dir / f"{name}.pgm",
                                            rep.inconclusive)
            ctx.save(path)
            result["pgm_ref"] = path.name

    elif op == "solve":
        U = ctx.resolve_set(_need(task, "region", tctx), tctx)
        f = ctx.resolve_field(_need(task, "data", tctx), tctx)
        psi = ctx.resolve_field(task["obstacle"], tctx) if "obstacle" in task else None
        prob = ObstacleProblem(U, f, psi, p, tol=task.get("tol", 1e-9))
        rep = solve_obstacle(prob)
        result.update(rep.to_json())
        ctx.task_outputs[name] = {"solution": rep.solution,
                                  "contact": rep.contact_set}
        if task.get("solution_csv"):
            path = field_to_csv(rep.solution, ctx.out_dir / f"{name}_solution.csv")
            ctx.save(path)
            result["solution_ref"] = path.name
        if task.get("solution_pgm"):
            path = write_field_pgm(rep.solution, ctx.out_dir / f"{name}_solution.pgm")
            ctx.save(path)
            result["pgm_ref"] = path.name
        if "oracle" in task:
            oracle = ctx.resolve_field(task["oracle"], tctx)
            reg = ctx.resolve_set(task["oracle_region"], tctx) if "oracle_region" in task else U
            err = _sup_rel_err(rep.solution, oracle, reg)
            result["oracle_sup_rel_err"] = err
            if "max_sup_rel_err" in task:
                bound = float(task["max_sup_rel_err"])
                checks.append((f"oracle sup-rel err <= {bound}", err <= bound))

    elif op == "verify":
        u = ctx.resolve_field(_need(task, "field", tctx), tctx)
        U = ctx.resolve_set(_need(task, "region", tctx), tctx)
        kind = task.get("kind", "superminimizer")
        method = task.get("method", "energy")
        if method == "energy":
            rep = verify_superminimizer(u, U, p, n_tests=int(task.get("n_tests", 100)),
                                        seed=seed, kind=kind)
        elif method == "weak_form":
            rep = verify_weak_form(u, U, p, kind=kind)
        else:
            raise ConfigError(f"{tctx}: unknown method {method!r}")
        result.update(rep.to_json())
        if "expect" in task:
            want = task["expect"] in ("pass", True)
            checks.append((f"verification {'passes' if want else 'fails'}", rep.passed == want))

    elif op == "paste":
        U1 = ctx.resolve_set(_need(task, "set1", tctx), tctx)
        U2 = ctx.resolve_set(_need(task, "set2", tctx), tctx)
        u1 = ctx.resolve_field(_need(task, "u1", tctx), tctx)
        u2 = ctx.resolve_field(_need(task, "u2", tctx), tctx)
        pasted = paste(U1, U2, u1, u2)
        ctx.task_outputs[name] = {"pasted": pasted}
        result["pasted"] = True
        if task.get("verify", True):
            rep = verify_superminimizer(pasted, U2, p, n_tests=int(task.get("n_tests", 60)),
                                        seed=seed)
            result.update(rep.to_json())
            if "expect" in task:
                want = task["expect"] in ("pass", True)
                checks.append(("paste verification", rep.passed == want))

    elif op == "min_combine":
        U = ctx.resolve_set(_need(task, "region", tctx), tctx)
        u = ctx.resolve_field(_need(task, "u", tctx), tctx)
        v = ctx.resolve_field(_need(task, "v", tctx), tctx)
        combined = min_combine(u, v, U)
        ctx.task_outputs[name] = {"combined": combined}
        result["combined"] = True
        if task.get("verify", True):
            rep = verify_superminimizer(combined, U, p, n_tests=int(task.get("n_tests", 60)),
                                        seed=seed)
            result.update(rep.to_json())
            if "expect" in task:
                want = task["expect"] in ("pass", True)
                checks.append(("min-combine verification", rep.passed == want))

    elif op == "remove":
        U = ctx.resolve_set(_need(task, "region", tctx), tctx)
        E = ctx.resolve_set(_need(task, "e", tctx), tctx)
        u = ctx.resolve_field(_need(task, "field", tctx), tctx)
        rep = remove_and_verify(u, U, E, p, n_tests=int(task.get("n_tests", 100)),
                                seed=seed, cap_threshold=task.get("cap_threshold"))
        result.update(rep.to_json())
        ctx.task_outputs[name] = {"extended": rep.extended}
        if "expect" in task:
            want = task["expect"] in ("pass", True)
            checks.append(("removability verification", rep.verify.passed == want))

    elif op == "probe":
        u = ctx.resolve_field(_need(task, "field", tctx), tctx)
        region = ctx.resolve_set(task["region"], tctx) if "region" in task else None
        probe = fine_limit_probe(u, _need(task, "center", tctx),
                                 float(_need(task, "r0", tctx)),
                                 tau_trim=float(task.get("tau_trim", 0.05)),
                                 region=region)
        result.update(probe.to_json())
        window = min(4, len(probe.outer_radii))
        if "expect_raw_floor" in task:
            floor = float(task["expect_raw_floor"])
            tail = probe.raw_oscillation[-window:]
            ok = bool(tail.size and np.all(tail >= floor))
            result["raw_tail_min"] = float(tail.min()) if tail.size else None
            checks.append((f"raw oscillation >= {floor} on last {window} annuli", ok))
        if task.get("expect_trimmed_decreasing"):
            tail = probe.trimmed_oscillation[-window:]
            ok = bool(tail.size >= 2 and np.all(np.diff(tail) < 0))
            checks.append((f"trimmed oscillation strictly decreasing on last {window}", ok))
        if "expect" in task:
            checks.append((f"verdict == {task['expect']}", probe.verdict == task["expect"]))

    else:
        raise ConfigError(f"{tctx}: unknown op")

    result["checks"] = [{"check": c, "passed": ok} for c, ok in checks]
    result["passed"] = all(ok for _, ok in checks)
    return result


def run_scenario(scenario: Scenario, out_dir, jobs: int = 1) -> RunReport:
    """Execute the task list; write per-task JSON and the run report.

    Exit code semantics: 0 all tasks succeeded and all expectations passed,
    1 an expectation failed, 2 config errors, 3 precondition violations,
    4 numerical non-convergence (codes 2-4 surface as raised errors here;
    the CLI maps them).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(out_dir=out_dir, seed=scenario.seed, config_echo=scenario.config)
    ctx = _TaskContext(scenario, out_dir)
    # jobs > 1 runs reference-independent tasks concurrently; outputs stay
    # deterministic because seeds derive from (scenario seed, task index)
    if jobs > 1:
        _run_parallel(ctx, scenario, report, jobs)
    else:
        for i, task in enumerate(scenario.tasks):
            _execute_and_record(ctx, task, i, report)
    report.exit_code = 0 if all(t["status"] == "ok" and t.get("passed", True)
                                for t in report.tasks) else 1
    path = write_json(report.to_json(), out_dir / "run_report.json")
    report.manifest.append(path)
    return report


def _execute_and_record(ctx: _TaskContext, task: dict, index: int, report: RunReport):
    name = task.get("name", f"task{index}")
    t0 = time.perf_counter()
    entry = {"name": name, "op": task.get("op"), "status": "ok"}
    try:
        result = _run_task(ctx, task, index)
        entry.update(result)
    except FinepotError as e:
        entry["status"] = "error"
        entry["error"] = {"type": type(e).__name__, "message": str(e)}
        path = write_json({"error": entry["error"], "task": name},
                          ctx.out_dir / "error.json")
        ctx.save(path)
        report.tasks.append(entry)
        raise
    finally:
        entry["wall_time_s"] = time.perf_counter() - t0
    path = write_json({k: v for k, v in entry.items() if k != "wall_time_s"},
                      ctx.out_dir / f"{name}.json")
    ctx.save(path)
    report.tasks.append(entry)
    report.manifest.extend(ctx.files)
    ctx.files = []


def _field_refs(task: dict) -> set:
    refs = set()
    for v in task.values():
        if isinstance(v, str) and v.startswith("@"):
            refs.add(v[1:].partition(".")[0])
    return refs


def _run_parallel(ctx: _TaskContext, scenario: Scenario, report: RunReport, jobs: int):
    from concurrent.futures import ThreadPoolExecutor

    pending = list(enumerate(scenario.tasks))
    done: set = set()
    lock_results = []
    while pending:
        wave = [(i, t) for i, t in pending
                if _field_refs(t) <= done]
        if not wave:
            raise ConfigError("task references form a cycle or point forward")
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [(i, t, pool.submit(_run_task, ctx, t, i)) for i, t in wave]
            for i, t, fut in futures:
                name = t.get("name", f"task{i}")
                entry = {"name": name, "op": t.get("op"), "status": "ok"}
                t0 = time.perf_counter()
                try:
                    entry.update(fut.result())
                except FinepotError as e:
                    entry["status"] = "error"
                    entry["error"] = {"type": type(e).__name__, "message": str(e)}
                    write_json({"error": entry["error"], "task": name},
                               ctx.out_dir / "error.json")
                    report.tasks.append(entry)
                    raise
                entry["wall_time_s"] = time.perf_counter() - t0
                path = write_json({k: v for k, v in entry.items() if k != "wall_time_s"},
                                  ctx.out_dir / f"{name}.json")
                ctx.save(path)
                report.tasks.append(entry)
                lock_results.append(entry)
                done.add(name)
        pending = [(i, t) for i, t in pending if t.get("name", f"task{i}") not in done]
    report.manifest.extend(ctx.files)
    ctx.files = []
