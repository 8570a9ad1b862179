"""Experiment configuration: JSON loading, schema validation, object construction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .measure import DEFAULT_BUDGET, GIBBS, QUASI, ModelSpec, gibbs_domain_diagnostics
from .padic import (
    DEFAULT_PRECISION,
    PAdicError,
    SmallPrimeError,
    check_prime,
    format_padic,
    parse_padic,
)
from .solver import (
    DEFAULT_TARGET,
    C0Vector,
    CouplingAssignment,
    ExplicitField,
    PeriodicField,
    TranslationInvariantField,
    WeightSequence,
)
from .tree import CayleyTree, format_vertex, parse_vertex

TASKS = ("solve", "verify-recurrence", "check-compatibility", "reduction-check", "boundedness-scan")
FIELD_TASKS = {"verify-recurrence", "check-compatibility", "boundedness-scan"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "config" or "precondition"
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.message}"


@dataclass
class Overrides:
    budget: int | None = None
    seed: int | None = None
    precision_digits: int | None = None
    allow_small_prime: bool = False
    allow_delta_one: bool = False
    output_dir: str | None = None


@dataclass
class ExperimentConfig:
    name: str
    raw: dict
    spec: ModelSpec
    backend: str
    precision: int
    pipeline: list
    solver: dict
    budget: int
    allow_small_prime: bool
    allow_delta_one: bool
    boundary_field: object | None = None
    perturbation: dict | None = None
    scan_n_max: int = 1
    output: dict = field(default_factory=dict)


def load_schema() -> dict:
    return json.loads(resources.files("padic_potts").joinpath("schema.json").read_text())


def read_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(part) for part in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc
    if "field_file" in raw and "field" not in raw:
        field_path = (path.parent / raw["field_file"]).resolve()
        try:
            raw = dict(raw, field=json.loads(field_path.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load field file {field_path}: {exc}") from exc
    raw.setdefault("name", path.stem)
    return raw


def _literal(value, p: int, backend: str, precision: int, allow_small: bool):
    try:
        return parse_padic(str(value), p, backend, precision, allow_small_prime=allow_small)
    except SmallPrimeError:
        raise
    except PAdicError as exc:
        raise ConfigError(str(exc)) from exc


def build(raw: dict, overrides: Overrides | None = None) -> ExperimentConfig:
    """Turn a schema-valid dict into model objects. Raises on the first problem."""
    ov = overrides or Overrides()
    model = raw["model"]
    p = model["p"]
    allow_small = bool(raw.get("allow_small_prime", False) or ov.allow_small_prime)
    allow_delta_one = bool(raw.get("allow_delta_one", False) or ov.allow_delta_one)
    check_prime(p, allow_small)
    backend = model.get("backend", "exact")
    precision = ov.precision_digits or model.get("precision_digits", DEFAULT_PRECISION)

    def lit(v):
        return _literal(v, p, backend, precision, allow_small)

    tree = CayleyTree(model["k"], model["depth"], model.get("root_mode", "k"))
    base = lit(model["base"])
    c = model["coupling"]
    try:
        if c["mode"] == "homogeneous":
            if "N" not in c:
                raise ConfigError("homogeneous coupling needs N")
            coupling = CouplingAssignment.homogeneous(base, c["N"])
        elif c["mode"] == "periodic":
            if "N_by_class" not in c:
                raise ConfigError("periodic coupling needs N_by_class")
            coupling = CouplingAssignment.periodic(base, c["N_by_class"])
        else:
            edges = {}
            for key, N in c.get("edges", {}).items():
                a, _, b = key.partition("-")
                edges[(parse_vertex(a), parse_vertex(b))] = N
            coupling = CouplingAssignment.edgewise(base, edges, c.get("default", 0))
        weights = WeightSequence(lit(v) for v in model["weights"])
    except PAdicError as exc:
        raise ConfigError(str(exc)) from exc
    spec = ModelSpec(tree, coupling, weights, model.get("kind", QUASI), precision)

    pipeline = list(raw["pipeline"])
    solver = {
        "start": raw.get("solver", {}).get("start", "lambda"),
        "target": raw.get("solver", {}).get("target_valuation", DEFAULT_TARGET),
        "seed": ov.seed if ov.seed is not None else raw.get("solver", {}).get("seed", 0),
    }
    if "max_iter" in raw.get("solver", {}):
        solver["max_iter"] = raw["solver"]["max_iter"]

    field_ = None
    if "field" in raw:
        field_ = build_field(raw["field"], lit, tree)
    output = dict(raw.get("output", {}))
    if ov.output_dir:
        output["dir"] = ov.output_dir
    return ExperimentConfig(
        name=raw.get("name", "experiment"),
        raw=raw,
        spec=spec,
        backend=backend,
        precision=precision,
        pipeline=pipeline,
        solver=solver,
        budget=ov.budget or raw.get("budget", DEFAULT_BUDGET),
        allow_small_prime=allow_small,
        allow_delta_one=allow_delta_one,
        boundary_field=field_,
        perturbation=raw.get("perturbation"),
        scan_n_max=raw.get("scan", {}).get("n_max", tree.depth),
        output=output,
    )


def build_field(doc: dict, lit, tree: CayleyTree):
    rep = doc["representation"]
    if rep == "translation-invariant":
        if "h" not in doc:
            raise ConfigError("translation-invariant field needs h")
        return TranslationInvariantField(C0Vector(lit(v) for v in doc["h"]))
    vectors = doc.get("vectors")
    if rep == "periodic":
        if not isinstance(vectors, list):
            raise ConfigError("periodic field needs a list of vectors")
        return PeriodicField(C0Vector(lit(v) for v in vec) for vec in vectors)
    if not isinstance(vectors, dict):
        raise ConfigError("explicit field needs a vertex -> vector mapping")
    parsed = {parse_vertex(key): C0Vector(lit(v) for v in vec) for key, vec in vectors.items()}
    depth = doc.get("depth", max(len(x) for x in parsed))
    return ExplicitField(parsed, depth)


def field_to_doc(field_) -> dict:
    if isinstance(field_, TranslationInvariantField):
        return {"representation": "translation-invariant", "h": field_.h.to_strings()}
    if isinstance(field_, PeriodicField):
        return {"representation": "periodic", "vectors": [v.to_strings() for v in field_.vectors]}
    ordered = sorted(field_.vectors.items(), key=lambda kv: (len(kv[0]), kv[0]))
    return {
        "representation": "explicit",
        "depth": field_.depth,
        "vectors": {format_vertex(x): [format_padic(e) for e in v] for x, v in ordered},
    }


def validate(raw_or_path, overrides: Overrides | None = None) -> list:
    """Schema and cross-field diagnostics; an empty list means the config is runnable."""
    ov = overrides or Overrides()
    if isinstance(raw_or_path, (str, Path)):
        try:
            raw = read_config(raw_or_path)
        except ConfigError as exc:
            return [Diagnostic("config", str(exc))]
    else:
        raw = raw_or_path
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            return [Diagnostic("config", f"schema violation: {exc.message}")]
    try:
        cfg = build(raw, ov)
    except SmallPrimeError as exc:
        return [Diagnostic("precondition", str(exc))]
    except (ConfigError, PAdicError, ValueError) as exc:
        return [Diagnostic("config", str(exc))]

    out: list = []
    spec = cfg.spec
    p = spec.p
    if cfg.boundary_field is None and "solve" not in cfg.pipeline and FIELD_TASKS & set(cfg.pipeline):
        out.append(Diagnostic("config", "tasks need a field: add 'solve' first or supply field/field_file"))
    if "solve" in cfg.pipeline:
        if spec.kind == GIBBS:
            out.append(Diagnostic("config", "'solve' produces quasi-Gibbs fields; the gibbs kind needs an explicit field"))
        if spec.coupling.mode == "per-edge":
            out.append(Diagnostic("config", "per-edge couplings cannot be solved; supply a field"))
        positive = [N for N in spec.coupling.exponents() if N > 0]
        if positive:
            out.append(Diagnostic("precondition", f"solve requires N <= 0, got {positive}"))
        dv = spec.weights.delta_valuation
        if dv <= 0 and not cfg.allow_delta_one:
            out.append(Diagnostic(
                "precondition",
                f"weight bound δ = {spec.weights.delta} must be <= 1/{p}; "
                "uniqueness may fail at δ = 1 (use --allow-delta-one to explore)",
            ))
    if cfg.boundary_field is not None:
        dim = spec.q if spec.kind == GIBBS else spec.q - 1
        vectors = (
            [cfg.boundary_field.h] if isinstance(cfg.boundary_field, TranslationInvariantField)
            else list(cfg.boundary_field.vectors) if isinstance(cfg.boundary_field, PeriodicField)
            else list(cfg.boundary_field.vectors.values())
        )
        if any(len(v) != dim for v in vectors):
            out.append(Diagnostic("config", f"field vectors must have {dim} components for q={spec.q}"))
    if spec.kind == GIBBS and cfg.boundary_field is not None and not out:
        for n in range(1, spec.tree.depth + 1):
            problems = gibbs_domain_diagnostics(spec, cfg.boundary_field, n)
            if problems:
                out.extend(Diagnostic("precondition", msg) for msg in problems)
                break
    if cfg.perturbation is not None:
        try:
            parse_vertex(cfg.perturbation["vertex"])
        except ValueError as exc:
            out.append(Diagnostic("config", str(exc)))
    return out


def exit_code_for(diagnostics: list) -> int:
    if any(d.severity == "config" for d in diagnostics):
        return 2
    if diagnostics:
        return 3
    return 0
