"""Boundary fields: the recurrence map, its contraction, and certified fixed points.

Vectors ``x = (x_1, ..., x_{q-1})`` stand for elements of c_0 supported on the
nonzero spin indices; index 0 is fixed by the gauge ``h_0 = 1, λ(0) = 1`` and
never stored.

Exact fixed points of the homogeneous and periodic maps are p-adic, not rational,
so iterating in :class:`~padic_potts.padic.ExactRational` reduces each iterate
modulo ``p**(target + guard)`` to keep heights bounded. Explicit per-vertex
fields are then rebuilt by running the recurrence backwards from the deepest
level, which makes them satisfy the recurrence *exactly* on every inner level.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .padic import (
    AtLeast,
    ExactRational,
    FixedPrecision,
    PAdic,
    PAdicError,
    PrecisionExhausted,
    PreconditionError,
    format_padic,
)
from .tree import CayleyTree, Vertex, format_vertex

DEFAULT_TARGET = 24


class SingularMapError(ArithmeticError):
    """The denominator ``sum(x) + θ`` vanished."""

    def __init__(self, message: str, valuation=None):
        super().__init__(message)
        self.valuation = valuation


class NonContraction(ArithmeticError):
    """The iteration failed to contract at the certified rate."""

    def __init__(self, message: str, certificate: ConvergenceCertificate | None = None):
        super().__init__(message)
        self.certificate = certificate


class IterationCapExceeded(NonContraction):
    pass


def min_valuation(values: Iterable[PAdic]) -> int | float:
    """Smallest valuation, i.e. ``-log_p`` of the sup-norm (``inf`` if all zero)."""
    return min((v.valuation() for v in values), default=math.inf)


def _norm_from_valuation(p: int, v) -> Fraction:
    if v == math.inf:
        return Fraction(0)
    return Fraction(p) ** -int(v)


@dataclass(frozen=True)
class C0Vector:
    """A finitely supported sequence ``(x_1, ..., x_d)`` over Q_p with the sup-norm."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def zeros(cls, dim: int, like: PAdic) -> C0Vector:
        return cls([like.lift(0)] * dim)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PAdic]:
        return iter(self.entries)

    def component(self, i: int) -> PAdic:
        """``x_i`` for ``i >= 1``; exact zero outside the stored support."""
        if i < 1:
            raise IndexError("c0 components are indexed from 1")
        if i > len(self.entries):
            return self.entries[0].lift(0)
        return self.entries[i - 1]

    def __sub__(self, other: C0Vector) -> C0Vector:
        if len(other) != len(self):
            raise ValueError("dimension mismatch")
        return C0Vector(a - b for a, b in zip(self.entries, other.entries))

    def __add__(self, other: C0Vector) -> C0Vector:
        if len(other) != len(self):
            raise ValueError("dimension mismatch")
        return C0Vector(a + b for a, b in zip(self.entries, other.entries))

    def valuation(self) -> int | float:
        return min_valuation(self.entries)

    def sup_norm(self) -> Fraction:
        if not self.entries:
            return Fraction(0)
        v = self.valuation()
        if isinstance(v, AtLeast):
            raise PrecisionExhausted(f"sup-norm of a vector that is zero modulo p^{int(v)}")
        return _norm_from_valuation(self.entries[0].p, v)

    def in_ball(self, delta: Fraction) -> bool:
        return self.sup_norm() <= delta

    def truncate(self, absprec: int) -> C0Vector:
        return C0Vector(
            e.truncate(absprec) if isinstance(e, ExactRational) else e for e in self.entries
        )

    def to_strings(self) -> list[str]:
        return [format_padic(e) for e in self.entries]

    def __eq__(self, other) -> bool:
        if not isinstance(other, C0Vector):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    __hash__ = None


@dataclass(frozen=True)
class WeightSequence:
    """λ(0), ..., λ(q-1); indices ``>= q`` carry weight zero."""

    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise PAdicError("a weight sequence needs at least λ(0)")
        if self.values[0].is_zero():
            raise PAdicError("λ(0) must be nonzero")

    @property
    def q(self) -> int:
        return len(self.values)

    @property
    def p(self) -> int:
        return self.values[0].p

    def __getitem__(self, i: int) -> PAdic:
        if i >= len(self.values):
            return self.values[0].lift(0)
        return self.values[i]

    @property
    def delta_valuation(self) -> int | float:
        """``-log_p δ`` with δ = max_{i>=1} |λ(i)|_p."""
        return min_valuation(self.values[1:])

    @property
    def delta(self) -> Fraction:
        return _norm_from_valuation(self.p, self.delta_valuation)

    def normalized(self) -> WeightSequence:
        lam0 = self.values[0]
        return WeightSequence(v / lam0 for v in self.values)

    def tail(self) -> C0Vector:
        """λ restricted to i >= 1, divided by λ(0)."""
        lam0 = self.values[0]
        return C0Vector(v / lam0 for v in self.values[1:])


HOMOGENEOUS = "homogeneous"
PERIODIC = "periodic"
PER_EDGE = "per-edge"


@dataclass(frozen=True, eq=False)
class CouplingAssignment:
    """Integer exponents N on the edges; the edge activity is θ = base**N.

    Periodic couplings are indexed by the level class of the deeper endpoint:
    the edge from level ``l`` to ``l+1`` carries ``by_class[(l+1) % m]``.
    """

    base: PAdic
    mode: str = HOMOGENEOUS
    N: int = 0
    by_class: tuple = ()
    per_edge: Mapping | None = None
    default: int = 0
    _thetas: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "by_class", tuple(self.by_class))
        if self.base.is_zero():
            raise PAdicError("the coupling base must be nonzero")
        if self.base.norm() > 1:
            raise PAdicError("the coupling base must satisfy |base|_p <= 1")
        if self.mode == PERIODIC and len(self.by_class) < 1:
            raise PAdicError("periodic couplings need at least one class")
        if self.mode not in (HOMOGENEOUS, PERIODIC, PER_EDGE):
            raise PAdicError(f"unknown coupling mode {self.mode!r}")

    @classmethod
    def homogeneous(cls, base: PAdic, N: int) -> CouplingAssignment:
        return cls(base, HOMOGENEOUS, N=N)

    @classmethod
    def periodic(cls, base: PAdic, by_class: Sequence[int]) -> CouplingAssignment:
        return cls(base, PERIODIC, by_class=tuple(by_class))

    @classmethod
    def edgewise(cls, base: PAdic, per_edge: Mapping, default: int = 0) -> CouplingAssignment:
        return cls(base, PER_EDGE, per_edge=dict(per_edge), default=default)

    @property
    def m(self) -> int:
        return len(self.by_class) if self.mode == PERIODIC else 1

    def exponent(self, parent: Vertex, child: Vertex) -> int:
        if self.mode == HOMOGENEOUS:
            return self.N
        if self.mode == PERIODIC:
            return self.by_class[len(child) % len(self.by_class)]
        return self.per_edge.get((tuple(parent), tuple(child)), self.default)

    def exponents(self) -> list[int]:
        if self.mode == HOMOGENEOUS:
            return [self.N]
        if self.mode == PERIODIC:
            return list(self.by_class)
        return list(self.per_edge.values()) + [self.default]

    def theta_of(self, N: int) -> PAdic:
        theta = self._thetas.get(N)
        if theta is None:
            theta = self.base**N
            self._thetas[N] = theta
        return theta

    def theta(self, parent: Vertex, child: Vertex) -> PAdic:
        return self.theta_of(self.exponent(parent, child))

    def class_theta(self, c: int) -> PAdic:
        return self.theta_of(self.by_class[c])


@dataclass(frozen=True)
class TranslationInvariantField:
    h: C0Vector

    def at(self, x: Vertex) -> C0Vector:
        return self.h


@dataclass(frozen=True)
class PeriodicField:
    """``vectors[c]`` sits on every vertex whose level is ``c`` modulo ``m``."""

    vectors: tuple

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))

    @property
    def m(self) -> int:
        return len(self.vectors)

    def at(self, x: Vertex) -> C0Vector:
        return self.vectors[len(x) % len(self.vectors)]


@dataclass(frozen=True, eq=False)
class ExplicitField:
    vectors: Mapping
    depth: int

    def at(self, x: Vertex) -> C0Vector:
        try:
            return self.vectors[tuple(x)]
        except KeyError:
            raise KeyError(f"no field vector at {format_vertex(x)}") from None

    def __contains__(self, x: Vertex) -> bool:
        return tuple(x) in self.vectors

    def replace(self, x: Vertex, vector: C0Vector) -> ExplicitField:
        vectors = dict(self.vectors)
        vectors[tuple(x)] = vector
        return ExplicitField(vectors, self.depth)


BoundaryField = Union[TranslationInvariantField, PeriodicField, ExplicitField]


# the maps -------------------------------------------------------------


def F_map(x: C0Vector, theta: PAdic) -> C0Vector:
    """``F_i(x; θ) = ((θ-1) x_i + Σx + 1) / (Σx + θ)`` for every stored index."""
    s = theta.lift(0)
    for xj in x:
        s = s + xj
    denominator = s + theta
    try:
        inv = denominator.inverse()
    except (ZeroDivisionError, PrecisionExhausted):
        raise SingularMapError(
            "F is singular: sum(x) + θ vanishes "
            f"(valuation {denominator.valuation()!r})",
            valuation=denominator.valuation(),
        ) from None
    shifted = theta - 1
    base = s + 1
    return C0Vector((shifted * xi + base) * inv for xi in x)


def F_tau(x: C0Vector, theta: PAdic, weights: WeightSequence, k: int) -> C0Vector:
    """The homogeneous recurrence map ``x ↦ (λ(i) F_i(x, θ)^k)_i``."""
    f = F_map(x, theta)
    lam0 = weights[0]
    return C0Vector(
        (weights[i] / lam0) * fi**k for i, fi in enumerate(f, start=1)
    )


def periodic_compose(
    x: C0Vector, coupling: CouplingAssignment, weights: WeightSequence, k: int
) -> C0Vector:
    """One period of the level recurrence, returning the next class-0 vector.

    The class-0 vector maps to class m-1 through θ_0, then class c+1 maps to
    class c through θ_{c+1}, down to class 0.
    """
    for theta in _period_thetas(coupling):
        x = F_tau(x, theta, weights, k)
    return x


def _period_thetas(coupling: CouplingAssignment) -> list[PAdic]:
    if coupling.mode == HOMOGENEOUS:
        return [coupling.theta_of(coupling.N)]
    if coupling.mode != PERIODIC:
        raise PreconditionError("per-edge couplings have no finite-dimensional reduction")
    m = coupling.m
    order = [0] + list(range(m - 1, 0, -1))
    return [coupling.class_theta(c) for c in order]


def unroll_periodic(
    h0: C0Vector, coupling: CouplingAssignment, weights: WeightSequence, k: int
) -> list[C0Vector]:
    """Class vectors ``[h^(0), ..., h^(m-1)]`` generated from ``h^(0)``."""
    m = coupling.m
    vectors: list = [None] * m
    vectors[0] = h0
    x = h0
    c = 0
    for theta in _period_thetas(coupling)[:-1]:
        x = F_tau(x, theta, weights, k)
        c = (c - 1) % m
        vectors[c] = x
    return vectors


# fixed points -----------------------------------------------------------


@dataclass
class ConvergenceCertificate:
    """Record of a certified contraction run."""

    start: C0Vector
    deltas: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    contraction_bound: Fraction = Fraction(0)
    target: int = DEFAULT_TARGET
    iterations: int = 0
    converged: bool = False
    backend: str = "exact"
    final: C0Vector | None = None

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "converged": self.converged,
            "iterations": self.iterations,
            "target_valuation": self.target,
            "contraction_bound": str(self.contraction_bound),
            "start": self.start.to_strings(),
            "delta_valuations": [_valuation_str(d) for d in self.deltas],
            "ratios": [str(r) for r in self.ratios],
            "final": self.final.to_strings() if self.final is not None else None,
        }


def _valuation_str(v) -> str | int:
    if v == math.inf:
        return "inf"
    if isinstance(v, AtLeast):
        return f">={int(v)}"
    return int(v)


def backend_of(x: PAdic) -> str:
    return "fixed" if isinstance(x, FixedPrecision) else "exact"


def random_ball_vector(
    dim: int, delta_valuation: int, like: PAdic, rng: random.Random, digits: int = 6
) -> C0Vector:
    """A random vector of B_δ with rational entries ``p**v * a / b``."""
    p = like.p
    entries = []
    for _ in range(dim):
        a = rng.randrange(p**digits)
        b = rng.randrange(1, p**digits)
        while b % p == 0:
            b = rng.randrange(1, p**digits)
        entries.append(like.lift(Fraction(a * p**delta_valuation, b)))
    return C0Vector(entries)


def iteration_bound(target: int, delta_valuation, m: int = 1) -> int | float:
    """Steps needed from a start in B_δ when each step gains ``m * v(δ⁻¹)`` digits."""
    if delta_valuation == math.inf:
        return 1
    if delta_valuation <= 0:
        return math.inf
    return math.ceil(target / (m * delta_valuation)) + 1


def check_solver_preconditions(
    coupling: CouplingAssignment, weights: WeightSequence, allow_delta_one: bool = False
) -> None:
    if coupling.mode == PER_EDGE:
        raise PreconditionError(
            "per-edge couplings cannot be solved by iteration; supply a boundary and use backward_field"
        )
    bad = [N for N in coupling.exponents() if N > 0]
    if bad:
        raise PreconditionError(f"couplings N={bad} are positive; contraction requires N <= 0")
    if weights.delta_valuation <= 0 and not allow_delta_one:
        raise PreconditionError(
            f"weight bound δ = {weights.delta} is not below 1; uniqueness can fail "
            "(set allow_delta_one to explore)"
        )


def solve_fixed_point(
    coupling: CouplingAssignment,
    weights: WeightSequence,
    k: int,
    *,
    target: int = DEFAULT_TARGET,
    start: C0Vector | str = "lambda",
    seed: int | None = None,
    max_iter: int | None = None,
    guard: int | None = None,
    allow_delta_one: bool = False,
) -> tuple[BoundaryField, ConvergenceCertificate]:
    """Iterate the homogeneous or periodic map until stationary modulo ``p**target``.

    Returns a :class:`TranslationInvariantField` (homogeneous) or a
    :class:`PeriodicField` together with the certificate. Every step's
    difference ratio is checked against the contraction bound δ (δ^m).
    """
    check_solver_preconditions(coupling, weights, allow_delta_one)
    if k < 1:
        raise PreconditionError("tree order k must be >= 1")
    weights_tail = weights.tail()
    like = weights[0]
    p = like.p
    dv = weights.delta_valuation
    m = coupling.m
    bound_valuation = m * dv if dv != math.inf else math.inf
    bound = _norm_from_valuation(p, bound_valuation)
    delta = weights.delta
    strict = dv > 0

    if isinstance(start, str):
        if start == "lambda":
            start = weights_tail
        elif start == "random":
            rng = random.Random(seed)
            start = random_ball_vector(len(weights_tail), max(int(min(dv, 64)), 0), like, rng)
        else:
            raise PreconditionError(f"unknown start mode {start!r}")
    if len(start) != len(weights_tail):
        raise PreconditionError("start vector has the wrong dimension")
    if strict and not start.in_ball(delta):
        raise PreconditionError(f"start point lies outside B_δ with δ = {delta}")

    exact = isinstance(like, ExactRational)
    if guard is None:
        guard = (bound_valuation if bound_valuation != math.inf else 0) + 2
    absprec = target + guard
    if max_iter is None:
        max_iter = max(64, 4 * target)

    step = (
        (lambda v: F_tau(v, coupling.theta_of(coupling.N), weights, k))
        if coupling.mode == HOMOGENEOUS
        else (lambda v: periodic_compose(v, coupling, weights, k))
    )
    cert = ConvergenceCertificate(
        start=start, contraction_bound=bound, target=target, backend=backend_of(like)
    )
    x = start
    previous = None
    for n in range(1, max_iter + 1):
        y = step(x)
        if exact:
            y = y.truncate(absprec)
        if strict and not _within(y, dv):
            cert.final = y
            cert.iterations = n
            raise NonContraction(f"iterate {n} left B_δ", cert)
        d = (y - x).valuation()
        cert.deltas.append(d)
        if previous is not None and previous != math.inf:
            ratio = Fraction(0) if d == math.inf else Fraction(p) ** (int(previous) - int(d))
            cert.ratios.append(ratio)
            if ratio > bound and not isinstance(previous, AtLeast):
                cert.final = y
                cert.iterations = n
                raise NonContraction(
                    f"step {n}: contraction ratio {ratio} exceeds bound {bound}", cert
                )
        x = y
        cert.iterations = n
        if d >= target:
            cert.converged = True
            break
        if isinstance(d, AtLeast):
            raise PrecisionExhausted(
                f"step {n}: difference vanishes only modulo p^{int(d)}, below target {target}; "
                "raise the working precision"
            )
        previous = d
    else:
        cert.final = x
        raise IterationCapExceeded(
            f"no convergence to valuation {target} within {max_iter} iterations", cert
        )
    cert.final = x
    if coupling.mode == HOMOGENEOUS:
        return TranslationInvariantField(x), cert
    vectors = unroll_periodic(x, coupling, weights, k)
    if exact:
        vectors = [v.truncate(absprec) for v in vectors]
    return PeriodicField(vectors), cert


def _within(v: C0Vector, delta_valuation) -> bool:
    val = v.valuation()
    return val >= delta_valuation


# explicit fields ---------------------------------------------------------


def recurrence_value(
    x: Vertex,
    child_vectors: Sequence[C0Vector],
    children: Sequence[Vertex],
    coupling: CouplingAssignment,
    weights: WeightSequence,
) -> C0Vector:
    """Right-hand side ``(λ(i)/λ(0)) ∏_{y∈S(x)} F_i(ĥ_y; θ_xy)``."""
    lam0 = weights[0]
    dim = len(child_vectors[0])
    products = [weights[i] / lam0 for i in range(1, dim + 1)]
    for y, vec in zip(children, child_vectors):
        f = F_map(vec, coupling.theta(x, y))
        products = [a * b for a, b in zip(products, f)]
    return C0Vector(products)


def backward_field(
    boundary: Mapping[Vertex, C0Vector] | BoundaryField,
    coupling: CouplingAssignment,
    weights: WeightSequence,
    tree: CayleyTree,
    n: int | None = None,
    include_root: bool = True,
) -> ExplicitField:
    """Fill levels ``n-1, ..., 1`` (and the root) from level-``n`` vectors by the recurrence."""
    n = tree.depth if n is None else n
    vectors: dict = {}
    for x in tree.level(n):
        vectors[x] = boundary.at(x) if hasattr(boundary, "at") else boundary[x]
    lowest = 0 if include_root else 1
    memo: dict = {}
    for lvl in range(n - 1, lowest - 1, -1):
        for x in tree.level(lvl):
            children = tree.successors(x)
            child_vectors = [vectors[y] for y in children]
            key = tuple((id(v), coupling.exponent(x, y)) for y, v in zip(children, child_vectors))
            result = memo.get(key)
            if result is None:
                result = recurrence_value(x, child_vectors, children, coupling, weights)
                memo[key] = result
            vectors[x] = result
    return ExplicitField(vectors, n)


def expand_field(
    field_: BoundaryField,
    coupling: CouplingAssignment,
    weights: WeightSequence,
    tree: CayleyTree,
    depth: int | None = None,
    include_root: bool = True,
) -> ExplicitField:
    """Explicit field on V_depth that satisfies the recurrence exactly below ``depth``.

    The solved (compact) field is placed on W_depth and propagated inwards.
    """
    return backward_field(field_, coupling, weights, tree, depth, include_root)


@dataclass
class RecurrenceReport:
    """Residual valuations of the recurrence; ``inf`` means an exact match."""

    per_level: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    checked: int = 0

    def ok(self, target: int | None = None) -> bool:
        if target is None:
            return not self.violations
        return all(v >= target for v in self.per_level.values())

    def to_dict(self) -> dict:
        return {
            "checked_vertices": self.checked,
            "residual_valuation_by_level": {
                str(lvl): _valuation_str(v) for lvl, v in sorted(self.per_level.items())
            },
            "violations": [
                {"vertex": format_vertex(x), "valuation": _valuation_str(v)}
                for x, v in self.violations
            ],
        }


def verify_recurrence(
    field_: ExplicitField,
    coupling: CouplingAssignment,
    weights: WeightSequence,
    tree: CayleyTree,
    include_root: bool = False,
) -> RecurrenceReport:
    """Check ``ĥ_x = (λ/λ(0)) ∏ F(ĥ_y; θ_xy)`` at every inner vertex of the field."""
    report = RecurrenceReport()
    lowest = 0 if include_root else 1
    for lvl in range(lowest, field_.depth):
        worst = math.inf
        for x in tree.level(lvl):
            children = tree.successors(x)
            rhs = recurrence_value(x, [field_.at(y) for y in children], children, coupling, weights)
            v = (field_.at(x) - rhs).valuation()
            report.checked += 1
            if v != math.inf:
                report.violations.append((x, v))
            worst = min(worst, v)
        report.per_level[lvl] = worst
    return report


def normalize_field(
    h_raw: Mapping[Vertex, Sequence[PAdic]], weights: WeightSequence, depth: int | None = None
) -> ExplicitField:
    """Gauge-normalize raw vectors ``(h_0, h_1, ...)``: ``ĥ_i = h_i λ(i) / (h_0 λ(0))``."""
    vectors = {}
    lam0 = weights[0]
    for x, h in h_raw.items():
        h0 = h[0]
        if h0.is_zero():
            raise PreconditionError(f"h_0 vanishes at {format_vertex(x)}")
        scale = (h0 * lam0).inverse()
        vectors[tuple(x)] = C0Vector(h[i] * weights[i] * scale for i in range(1, len(h)))
    if depth is None:
        depth = max((len(x) for x in vectors), default=0)
    return ExplicitField(vectors, depth)


def denormalize_field(field_: ExplicitField, weights: WeightSequence) -> dict:
    """Raw vectors in the gauge ``h_0 = 1``; components with λ(i) = 0 are set to 0."""
    lam0 = weights[0]
    out = {}
    for x, vec in field_.vectors.items():
        raw = [lam0.lift(1)]
        for i, hat in enumerate(vec, start=1):
            lam = weights[i]
            if lam.is_zero():
                if not hat.is_zero():
                    raise PreconditionError(
                        f"ĥ_{i} is nonzero at {format_vertex(x)} although λ({i}) = 0"
                    )
                raw.append(lam0.lift(0))
            else:
                raw.append(hat * lam0 / lam)
        out[x] = tuple(raw)
    return out
