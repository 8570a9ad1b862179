"""Finite-volume p-adic quasi Gibbs measures and exhaustive checks on them.

A configuration on V_n is a tuple of spins aligned with ``tree.volume(n)``
(root first, then each level in lexicographic order), so that a configuration
on V_n is the concatenation of one on V_{n-1} with one on W_n.

The unnormalized weight of σ is

    base**H_n(σ) * ∏_{x ∈ V_{n-1}} λ(σ(x)) * ∏_{x ∈ W_n} h_{σ(x),x} λ(σ(x))

and in the gauge h_0 = 1 the boundary factor equals ``λ(0) ĥ_{σ(x),x}`` (with
``ĥ_0 = 1``), which is how the gauge-normalized fields of :mod:`.solver` enter.

For ``kind="gibbs"`` the Boltzmann factor is ``exp_p(H_n(σ) + Σ_{W_n} h_{σ(x),x})``
and the field vectors hold the raw values ``(h_0, ..., h_{q-1})``.

Every check here enumerates configurations exhaustively; a hard budget caps
``q**|V_n|``.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterator, Mapping, Sequence

from .padic import DEFAULT_PRECISION, AtLeast, PAdic, exp_p
from .solver import (
    C0Vector,
    CouplingAssignment,
    ExplicitField,
    PreconditionError,
    WeightSequence,
    _valuation_str,
    backward_field,
    solve_fixed_point,
)
from .tree import CayleyTree, Vertex, format_vertex

QUASI = "quasi-gibbs"
GIBBS = "gibbs"
DEFAULT_BUDGET = 2_000_000


class BudgetExceeded(RuntimeError):
    pass


class DegenerateSpecError(ArithmeticError):
    """The partition function vanishes."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    tree: CayleyTree
    coupling: CouplingAssignment
    weights: WeightSequence
    kind: str = QUASI
    exp_precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        if self.kind not in (QUASI, GIBBS):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.coupling.base.p != self.weights.p:
            raise ValueError("coupling base and weights use different primes")

    @property
    def p(self) -> int:
        return self.weights.p

    @property
    def q(self) -> int:
        return self.weights.q

    @property
    def k(self) -> int:
        return self.tree.order


def configuration_count(spec: ModelSpec, n: int) -> int:
    return spec.q ** spec.tree.volume_size(n)


def _check_budget(spec: ModelSpec, n: int, budget: int) -> int:
    count = configuration_count(spec, n)
    if count > budget:
        raise BudgetExceeded(
            f"q^|V_{n}| = {spec.q}^{spec.tree.volume_size(n)} = {count} configurations "
            f"exceeds the budget {budget}"
        )
    return count


def configurations(spec: ModelSpec, n: int, q: int | None = None) -> Iterator[tuple]:
    """All of Ω_{V_n} in lexicographic order."""
    return product(range(spec.q if q is None else q), repeat=spec.tree.volume_size(n))


def as_tuple(config, spec: ModelSpec, n: int) -> tuple:
    if isinstance(config, Mapping):
        return tuple(config[x] for x in spec.tree.volume(n))
    config = tuple(config)
    if len(config) != spec.tree.volume_size(n):
        raise ValueError(f"configuration on V_{n} needs {spec.tree.volume_size(n)} spins")
    return config


def _edge_table(spec: ModelSpec, n: int) -> list:
    index = {x: i for i, x in enumerate(spec.tree.volume(n))}
    return [(index[a], index[b], spec.coupling.exponent(a, b)) for a, b in spec.tree.edges(n)]


def _energy(edges: list, config: Sequence[int]) -> int:
    return sum(N for a, b, N in edges if config[a] == config[b])


class _Volume:
    """Precomputed edge list and per-vertex factor tables for one volume."""

    def __init__(self, spec: ModelSpec, field_, n: int):
        tree = spec.tree
        self.spec = spec
        self.n = n
        self.vertices = tree.volume(n)
        self.edges = _edge_table(spec, n)
        self.boundary_start = len(self.vertices) - tree.level_size(n)
        weights = spec.weights
        q = spec.q
        one = weights[0].lift(1)
        self.one = one
        self.factors = []
        for i, x in enumerate(self.vertices):
            if i < self.boundary_start or spec.kind == GIBBS:
                row = [weights[s] for s in range(q)]
            else:
                hat = field_.at(x)
                lam0 = weights[0]
                row = [lam0] + [lam0 * hat.component(s) for s in range(1, q)]
            self.factors.append(row)
        self.zero = [[f.is_zero() for f in row] for row in self.factors]
        self.raw_boundary = None
        if spec.kind == GIBBS:
            self.raw_boundary = [list(field_.at(x).entries) for x in self.vertices[self.boundary_start:]]
        self._powers: dict = {}
        self._exps: dict = {}

    def hamiltonian(self, config: Sequence[int]) -> int:
        return _energy(self.edges, config)

    def boltzmann(self, config: Sequence[int]) -> PAdic:
        H = self.hamiltonian(config)
        if self.spec.kind == QUASI:
            w = self._powers.get(H)
            if w is None:
                w = self.spec.coupling.base**H
                self._powers[H] = w
            return w
        arg = self.one * H
        for j, s in enumerate(config[self.boundary_start:]):
            arg = arg + self.raw_boundary[j][s]
        key = arg.to_fraction()
        w = self._exps.get(key)
        if w is None:
            w = exp_p(arg, self.spec.exp_precision)
            self._exps[key] = w
        return w

    def weight(self, config: Sequence[int]) -> PAdic:
        zero = self.zero
        for i, s in enumerate(config):
            if zero[i][s]:
                return self.one.lift(0)
        w = self.boltzmann(config)
        factors = self.factors
        for i, s in enumerate(config):
            w = w * factors[i][s]
        return w


def hamiltonian(config, spec: ModelSpec, n: int) -> int:
    """``H_n(σ) = Σ_{<x,y> ∈ L_n} N_xy δ(σ(x), σ(y))``."""
    return _energy(_edge_table(spec, n), as_tuple(config, spec, n))


class FiniteVolumeMeasure:
    """μ^(n) for one spec and field; values are materialized on demand."""

    def __init__(self, spec: ModelSpec, field_, n: int, budget: int = DEFAULT_BUDGET):
        self.spec = spec
        self.field = field_
        self.n = n
        self.budget = budget
        self._volume = _Volume(spec, field_, n)
        self._weights: list | None = None
        self._Z: PAdic | None = None

    @property
    def vertices(self) -> list:
        return self._volume.vertices

    def weight(self, config) -> PAdic:
        return self._volume.weight(as_tuple(config, self.spec, self.n))

    def weights(self) -> list:
        """Unnormalized weights of all configurations, in enumeration order."""
        if self._weights is None:
            _check_budget(self.spec, self.n, self.budget)
            self._weights = [self._volume.weight(c) for c in configurations(self.spec, self.n)]
        return self._weights

    @property
    def Z(self) -> PAdic:
        if self._Z is None:
            total = self._volume.one.lift(0)
            for w in self.weights():
                total = total + w
            if total.is_zero():
                raise DegenerateSpecError(f"Z_{self.n} vanishes")
            self._Z = total
        return self._Z

    def value(self, config) -> PAdic:
        return self.weight(config) / self.Z

    def values(self) -> list:
        inv = self.Z.inverse()
        return [w * inv for w in self.weights()]

    def total(self) -> PAdic:
        out = self._volume.one.lift(0)
        for v in self.values():
            out = out + v
        return out

    def cylinder(self, assignment: Mapping[Vertex, int]) -> PAdic:
        """μ of the set of configurations agreeing with ``assignment``."""
        index = {x: i for i, x in enumerate(self.vertices)}
        fixed = [(index[tuple(x)], s) for x, s in assignment.items()]
        return self.measure_of(lambda c: all(c[i] == s for i, s in fixed))

    def measure_of(self, predicate) -> PAdic:
        total = self._volume.one.lift(0)
        for c, w in zip(configurations(self.spec, self.n), self.weights()):
            if predicate(c):
                total = total + w
        return total / self.Z


def partition_function(spec: ModelSpec, field_, n: int, budget: int = DEFAULT_BUDGET) -> PAdic:
    return FiniteVolumeMeasure(spec, field_, n, budget).Z


def measure_value(config, spec: ModelSpec, field_, n: int, budget: int = DEFAULT_BUDGET) -> PAdic:
    return FiniteVolumeMeasure(spec, field_, n, budget).value(config)


# compatibility ----------------------------------------------------------


@dataclass
class CompatibilityReport:
    n: int
    checked: int = 0
    nonzero: int = 0
    min_valuation: int | float = math.inf
    first_failure: tuple | None = None

    def ok(self, target: int | None = None) -> bool:
        if target is None:
            return self.nonzero == 0
        return self.min_valuation >= target

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "marginals_checked": self.checked,
            "nonzero_residuals": self.nonzero,
            "max_residual_valuation": _valuation_str(self.min_valuation),
            "first_failure": list(self.first_failure) if self.first_failure else None,
        }


def check_compatibility(
    spec: ModelSpec, field_, n: int, budget: int = DEFAULT_BUDGET
) -> CompatibilityReport:
    """Compare Σ_ω μ^(n)(σ ∨ ω) with μ^(n-1)(σ) for every σ on V_{n-1}.

    For ``n = 1`` the depth-0 measure treats the root as its own boundary, so
    the field must carry a root vector.
    """
    if n < 1:
        raise PreconditionError("compatibility starts at n = 1")
    _check_budget(spec, n, budget)
    outer = FiniteVolumeMeasure(spec, field_, n, budget)
    inner = FiniteVolumeMeasure(spec, field_, n - 1, budget)
    outer_values = outer.values()
    inner_values = inner.values()
    block = spec.q ** spec.tree.level_size(n)
    zero = outer._volume.one.lift(0)
    report = CompatibilityReport(n=n)
    for j, (sigma, rhs) in enumerate(zip(configurations(spec, n - 1), inner_values)):
        lhs = zero
        for v in outer_values[j * block:(j + 1) * block]:
            lhs = lhs + v
        residual = (lhs - rhs).valuation()
        report.checked += 1
        if residual != math.inf:
            report.nonzero += 1
            if report.first_failure is None:
                report.first_failure = sigma
        report.min_valuation = min(report.min_valuation, residual)
    return report


def check_compatibility_levels(
    spec: ModelSpec, field_, n: int, budget: int = DEFAULT_BUDGET, start: int = 2
) -> list:
    return [check_compatibility(spec, field_, m, budget) for m in range(start, n + 1)]


@dataclass
class AuditReport:
    """Sampled compatibility audit. Sampling can refute compatibility, never verify it."""

    n: int
    samples: int
    mismatches: int
    verified: bool = False


def audit_compatibility(
    spec: ModelSpec, field_, n: int, samples: int = 64, seed: int = 0
) -> AuditReport:
    """Check that Σ_ω w_n(σ ∨ ω) / w_{n-1}(σ) is the same constant for sampled σ.

    Needs no partition function, so it runs beyond the enumeration budget.
    """
    rng = random.Random(seed)
    outer = _Volume(spec, field_, n)
    inner = _Volume(spec, field_, n - 1)
    inner_size = spec.tree.volume_size(n - 1)
    boundary = spec.tree.level_size(n)
    if spec.q**boundary > DEFAULT_BUDGET:
        raise BudgetExceeded("boundary layer alone exceeds the budget")
    ratio = None
    mismatches = 0
    for _ in range(samples):
        sigma = tuple(rng.randrange(spec.q) for _ in range(inner_size))
        lhs = outer.one.lift(0)
        for omega in product(range(spec.q), repeat=boundary):
            lhs = lhs + outer.weight(sigma + omega)
        rhs = inner.weight(sigma)
        if rhs.is_zero():
            mismatches += not lhs.is_zero()
            continue
        r = lhs / rhs
        if ratio is None:
            ratio = r
        elif not (r - ratio).is_zero():
            mismatches += 1
    return AuditReport(n=n, samples=samples, mismatches=mismatches)


# reduction to the q-state model ----------------------------------------


def effective_states(weights: WeightSequence) -> int:
    """Smallest q with λ(i) = 0 for all i >= q."""
    q = weights.q
    while q > 1 and weights[q - 1].is_zero():
        q -= 1
    return q


@dataclass
class ReductionReport:
    q_native: int
    q_countable: int
    vanishing_outside: bool = True
    field_components_zero: bool = True
    measures_equal: bool = True
    compared: int = 0
    offending: list = field(default_factory=list)

    def ok(self) -> bool:
        return self.vanishing_outside and self.field_components_zero and self.measures_equal

    def to_dict(self) -> dict:
        return {
            "q_native": self.q_native,
            "q_countable": self.q_countable,
            "measure_vanishes_outside_native_states": self.vanishing_outside,
            "field_components_above_q_zero": self.field_components_zero,
            "restricted_measure_equals_native": self.measures_equal,
            "configurations_compared": self.compared,
            "offending": self.offending[:10],
        }


def truncate_spec(spec: ModelSpec, q: int) -> ModelSpec:
    return ModelSpec(
        spec.tree,
        spec.coupling,
        WeightSequence(spec.weights.values[:q]),
        spec.kind,
        spec.exp_precision,
    )


def truncate_field(field_: ExplicitField, q: int) -> ExplicitField:
    return ExplicitField(
        {x: C0Vector(v.entries[: q - 1]) for x, v in field_.vectors.items()}, field_.depth
    )


def solved_explicit_field(spec: ModelSpec, n: int | None = None, **solver_options) -> ExplicitField:
    n = spec.tree.depth if n is None else n
    compact, _ = solve_fixed_point(spec.coupling, spec.weights, spec.k, **solver_options)
    return backward_field(compact, spec.coupling, spec.weights, spec.tree, n)


def q_state_reduction_check(
    spec: ModelSpec,
    n: int,
    field_: ExplicitField | None = None,
    budget: int = DEFAULT_BUDGET,
    **solver_options,
) -> ReductionReport:
    """Compare a model whose weights vanish from index q on with the native q-state model."""
    q = effective_states(spec.weights)
    report = ReductionReport(q_native=q, q_countable=spec.q)
    if field_ is None:
        field_ = solved_explicit_field(spec, n, **solver_options)
    for x, vec in field_.vectors.items():
        for i in range(q, len(vec) + 1):
            if not vec.component(i).is_zero():
                report.field_components_zero = False
                report.offending.append(f"h_{i} at {format_vertex(x)}")

    countable = FiniteVolumeMeasure(spec, field_, n, budget)
    native_spec = truncate_spec(spec, q)
    native_field = solved_explicit_field(native_spec, n, **solver_options)
    native = FiniteVolumeMeasure(native_spec, native_field, n, budget)
    native_values = iter(native.values())
    for config, value in zip(configurations(spec, n), countable.values()):
        if max(config) >= q:
            if not value.is_zero():
                report.vanishing_outside = False
                report.offending.append(f"μ{config} != 0")
            continue
        report.compared += 1
        if not (value - next(native_values)).is_zero():
            report.measures_equal = False
            report.offending.append(f"μ{config} differs from native")
    return report


# boundedness -----------------------------------------------------------


def boundedness_scan(
    spec: ModelSpec, field_, n_max: int, budget: int = DEFAULT_BUDGET
) -> list:
    """``[(n, max_σ |μ^(n)(σ)|_p)]`` for n = 1..n_max.

    Finite-volume profiles only; they do not decide boundedness of the limit.
    """
    rows = []
    for n in range(1, n_max + 1):
        m = FiniteVolumeMeasure(spec, field_, n, budget)
        v = min((val.valuation() for val in m.values()), default=math.inf)
        if isinstance(v, AtLeast) or v == math.inf:
            norm = Fraction(0)
        else:
            norm = Fraction(spec.p) ** -v
        rows.append((n, norm))
    return rows


def gibbs_domain_diagnostics(spec: ModelSpec, field_, n: int) -> list:
    """Reasons the exp_p arguments may leave the convergence disk (empty when safe)."""
    p = spec.p
    problems = []
    for a, b in spec.tree.edges(n):
        N = spec.coupling.exponent(a, b)
        if N % p:
            problems.append(
                f"coupling N={N} on {format_vertex(a)}-{format_vertex(b)} has |N|_p = 1; "
                "exp_p needs |argument|_p < p^(-1/(p-1))"
            )
            break
    for x in spec.tree.level(n):
        for s, h in enumerate(field_.at(x).entries):
            v = h.valuation()
            if v != math.inf and v * (p - 1) <= 1:
                problems.append(
                    f"field h_{s} at {format_vertex(x)} has |h|_p = p^{-int(v)}, outside the exp_p disk"
                )
                return problems
    return problems
