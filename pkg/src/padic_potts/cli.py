"""Command-line experiment runner.

    padic-potts validate CONFIG
    padic-potts run CONFIG [--budget N] [--seed S] [--precision-digits K]
                           [--allow-small-prime] [--allow-delta-one] [--output-dir DIR]
    padic-potts presets

CONFIG is a path or the file name of a bundled preset. Exit codes: 0 success,
2 config error, 3 precondition violation, 4 verification failure, 5 budget
exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    Overrides,
    build,
    exit_code_for,
    field_to_doc,
    read_config,
    validate,
)
from .measure import (
    BudgetExceeded,
    DegenerateSpecError,
    FiniteVolumeMeasure,
    boundedness_scan,
    check_compatibility,
    q_state_reduction_check,
)
from .padic import DomainError, PAdicError, PrecisionExhausted, SmallPrimeError
from .solver import (
    C0Vector,
    ExplicitField,
    NonContraction,
    PreconditionError,
    SingularMapError,
    expand_field,
    solve_fixed_point,
    verify_recurrence,
)
from .tree import parse_vertex

log = logging.getLogger("padic_potts")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_VERIFICATION = 4
EXIT_BUDGET = 5

OUTPUT_DIR_ENV = "PADIC_POTTS_OUTPUT_DIR"


class _Abort(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def preset_names() -> list:
    root = resources.files("padic_potts").joinpath("presets")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(name: str | Path) -> Path:
    path = Path(name)
    if path.exists():
        return path
    if str(name) in preset_names():
        with resources.as_file(resources.files("padic_potts").joinpath("presets", str(name))) as p:
            return Path(p)
    return path


def _explicit(field_, cfg: ExperimentConfig) -> ExplicitField:
    if isinstance(field_, ExplicitField):
        return field_
    tree = cfg.spec.tree
    return ExplicitField({x: field_.at(x) for x in tree.vertices}, tree.depth)


def _perturb(field_: ExplicitField, pert: dict, p: int) -> ExplicitField:
    x = parse_vertex(pert["vertex"])
    vec = field_.at(x)
    i = pert["component"]
    if i > len(vec):
        raise ConfigError(f"perturbation component {i} exceeds vector dimension {len(vec)}")
    bump = vec.entries[0].lift(1) * (vec.entries[0].lift(p) ** pert["valuation"])
    entries = list(vec.entries)
    entries[i - 1] = entries[i - 1] + bump
    return field_.replace(x, C0Vector(entries))


def _residual_ok(valuation, cfg: ExperimentConfig) -> bool:
    if cfg.backend == "exact":
        return valuation == float("inf")
    return valuation >= cfg.solver["target"]


def execute(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Run the pipeline; returns the exit code and the report document."""
    spec = cfg.spec
    results: list = []
    report = {
        "name": cfg.name,
        "config": cfg.raw,
        "tasks": results,
    }
    explicit: ExplicitField | None = None
    if cfg.boundary_field is not None:
        explicit = _explicit(cfg.boundary_field, cfg)
    code = EXIT_OK
    try:
        for task in cfg.pipeline:
            entry: dict = {"task": task}
            results.append(entry)
            if task == "solve":
                try:
                    compact, cert = solve_fixed_point(
                        spec.coupling,
                        spec.weights,
                        spec.k,
                        target=cfg.solver["target"],
                        start=cfg.solver["start"],
                        seed=cfg.solver["seed"],
                        max_iter=cfg.solver.get("max_iter"),
                        allow_delta_one=cfg.allow_delta_one,
                    )
                except NonContraction as exc:
                    entry["status"] = "non-contraction"
                    entry["message"] = str(exc)
                    if exc.certificate is not None:
                        entry["certificate"] = exc.certificate.to_dict()
                    raise _Abort(EXIT_VERIFICATION, str(exc)) from exc
                except SingularMapError as exc:
                    entry["status"] = "singular"
                    entry["message"] = str(exc)
                    raise _Abort(EXIT_VERIFICATION, str(exc)) from exc
                entry["status"] = "converged"
                entry["certificate"] = cert.to_dict()
                entry["field"] = field_to_doc(compact)
                explicit = expand_field(compact, spec.coupling, spec.weights, spec.tree)
            elif explicit is None:
                raise _Abort(EXIT_CONFIG, f"task {task!r} needs a field")
            else:
                if cfg.perturbation is not None and not report.get("perturbed"):
                    explicit = _perturb(explicit, cfg.perturbation, spec.p)
                    report["perturbed"] = cfg.perturbation
                ok = _run_task(task, entry, explicit, cfg)
                entry["status"] = "pass" if ok else "fail"
                if not ok and task != "boundedness-scan":
                    code = EXIT_VERIFICATION
    except _Abort as exc:
        code = exc.code
        report["error"] = str(exc)
    except BudgetExceeded as exc:
        code = EXIT_BUDGET
        report["error"] = str(exc)
    except (PreconditionError, SmallPrimeError, DomainError) as exc:
        code = EXIT_PRECONDITION
        report["error"] = str(exc)
    except ConfigError as exc:
        code = EXIT_CONFIG
        report["error"] = str(exc)
    except (DegenerateSpecError, PrecisionExhausted, SingularMapError) as exc:
        code = EXIT_VERIFICATION
        report["error"] = str(exc)
    report["exit_code"] = code
    return code, report


def _run_task(task: str, entry: dict, field_: ExplicitField, cfg: ExperimentConfig) -> bool:
    spec = cfg.spec
    depth = spec.tree.depth
    if task == "verify-recurrence":
        rep = verify_recurrence(field_, spec.coupling, spec.weights, spec.tree)
        entry.update(rep.to_dict())
        return all(_residual_ok(v, cfg) for v in rep.per_level.values())
    if task == "check-compatibility":
        start = 1 if () in field_ else 2
        levels = []
        ok = True
        for n in range(start, depth + 1):
            rep = check_compatibility(spec, field_, n, cfg.budget)
            row = rep.to_dict()
            total = FiniteVolumeMeasure(spec, field_, n, cfg.budget).total()
            row["normalization_residual_valuation"] = _val((total - 1).valuation())
            levels.append(row)
            ok = ok and _residual_ok(rep.min_valuation, cfg)
            ok = ok and _residual_ok((total - 1).valuation(), cfg)
        entry["levels"] = levels
        return ok
    if task == "reduction-check":
        rep = q_state_reduction_check(
            spec, depth, field_, cfg.budget, target=cfg.solver["target"]
        )
        entry.update(rep.to_dict())
        return rep.ok()
    if task == "boundedness-scan":
        rows = boundedness_scan(spec, field_, min(cfg.scan_n_max, depth), cfg.budget)
        entry["norms"] = [{"n": n, "max_norm": str(v)} for n, v in rows]
        entry["note"] = "finite-volume profile only; not a boundedness verdict"
        return True
    raise ConfigError(f"unknown task {task!r}")


def _val(v):
    if v == float("inf"):
        return "inf"
    return int(v)


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_csv(report: dict) -> str | None:
    for entry in report["tasks"]:
        if entry["task"] == "boundedness-scan" and "norms" in entry:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["n", "max_norm"])
            for row in entry["norms"]:
                writer.writerow([row["n"], row["max_norm"]])
            return buf.getvalue()
    return None


def emit_report(report: dict, cfg: ExperimentConfig) -> list:
    """Write the JSON report (and the norm CSV when a scan ran); returns the paths."""
    out_dir = Path(cfg.output.get("dir") or os.environ.get(OUTPUT_DIR_ENV) or "reports")
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / cfg.output.get("report", f"{cfg.name}.report.json")
    report_path.write_text(render_report(report))
    paths = [report_path]
    table = render_csv(report)
    if table is not None:
        csv_path = out_dir / cfg.output.get("csv", f"{cfg.name}.norms.csv")
        csv_path.write_text(table)
        paths.append(csv_path)
    return paths


def run(config_path, overrides: Overrides | None = None) -> tuple[int, dict | None, list]:
    ov = overrides or Overrides()
    path = resolve_config_path(config_path)
    diagnostics = validate(path, ov)
    if diagnostics:
        for d in diagnostics:
            log.error("%s", d)
        return exit_code_for(diagnostics), None, []
    try:
        cfg = build(read_config(path), ov)
    except (ConfigError, PAdicError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, None, []
    code, report = execute(cfg)
    paths = emit_report(report, cfg)
    return code, report, paths


def _summary(report: dict) -> str:
    lines = [f"{report['name']}: exit {report['exit_code']}"]
    for entry in report["tasks"]:
        lines.append(f"  {entry['task']:<20} {entry.get('status', 'not run')}")
    if "error" in report:
        lines.append(f"  error: {report['error']}")
    return "\n".join(lines)


def _overrides(args) -> Overrides:
    return Overrides(
        budget=args.budget,
        seed=args.seed,
        precision_digits=args.precision_digits,
        allow_small_prime=args.allow_small_prime,
        allow_delta_one=args.allow_delta_one,
        output_dir=args.output_dir,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="padic-potts", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        cmd = sub.add_parser(name)
        cmd.add_argument("config")
        cmd.add_argument("--budget", type=int)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--precision-digits", type=int)
        cmd.add_argument("--allow-small-prime", action="store_true")
        cmd.add_argument("--allow-delta-one", action="store_true")
        cmd.add_argument("--output-dir")
    sub.add_parser("presets")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    if args.command == "validate":
        diagnostics = validate(resolve_config_path(args.config), _overrides(args))
        for d in diagnostics:
            print(d)
        return exit_code_for(diagnostics)
    code, report, paths = run(args.config, _overrides(args))
    if report is not None:
        print(_summary(report))
        for p in paths:
            print(f"  wrote {p}")
    return code


if __name__ == "__main__":
    sys.exit(main())
