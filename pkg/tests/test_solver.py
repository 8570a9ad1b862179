import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padic_potts.padic import ExactRational, FixedPrecision, PAdicError, to_exact
from padic_potts.solver import (
    C0Vector,
    CouplingAssignment,
    ExplicitField,
    F_map,
    F_tau,
    IterationCapExceeded,
    NonContraction,
    PeriodicField,
    PreconditionError,
    SingularMapError,
    TranslationInvariantField,
    WeightSequence,
    backward_field,
    denormalize_field,
    expand_field,
    iteration_bound,
    normalize_field,
    periodic_compose,
    random_ball_vector,
    recurrence_value,
    solve_fixed_point,
    unroll_periodic,
    verify_recurrence,
)
from padic_potts.tree import CayleyTree

P = 5


def E(v):
    return ExactRational(v, P)


def vec(*vals):
    return C0Vector(E(v) for v in vals)


def weights(*vals):
    return WeightSequence(E(v) for v in vals)


def vp(x: Fraction) -> float:
    if x == 0:
        return math.inf
    num, den, v = abs(x.numerator), x.denominator, 0
    while num % P == 0:
        num //= P
        v += 1
    while den % P == 0:
        den //= P
        v -= 1
    return v


def oracle_F(x, theta):
    """Plain-Fraction evaluation of F_i = ((θ-1)x_i + Σx + 1) / (Σx + θ)."""
    s = sum(x, Fraction(0))
    return [((theta - 1) * xi + s + 1) / (s + theta) for xi in x]


def oracle_tau(x, theta, lam, k):
    f = oracle_F(x, theta)
    lam = [Fraction(v) for v in lam]
    return [lam[i] / lam[0] * f[i - 1] ** k for i in range(1, len(lam))]


def as_fractions(v: C0Vector):
    return [to_exact(e).value for e in v]


class TestFMap:
    def test_zero_vector(self):
        theta = E(Fraction(1, 5))
        out = F_map(vec(0, 0), theta)
        assert out == vec(5, 5)  # 1/θ
        assert all(e.norm() == Fraction(1, 5) for e in out)

    def test_worked_example(self):
        theta = Fraction(1, 5)
        out = F_map(vec(5, 25), E(theta))
        expected = oracle_F([Fraction(5), Fraction(25)], theta)
        assert as_fractions(out) == expected
        # frozen: ((−4/5)·5 + 31)/(151/5), ((−4/5)·25 + 31)/(151/5)
        assert expected == [Fraction(135, 151), Fraction(55, 151)]

    def test_theta_one_is_constant(self):
        out = F_map(vec(Fraction(3, 7), 10, 2), E(1))
        assert out == vec(1, 1, 1)

    def test_singular_denominator(self):
        with pytest.raises(SingularMapError):
            F_map(vec(-1, 0), E(1))

    @given(st.lists(st.fractions(max_denominator=1000), min_size=1, max_size=3), st.integers(-3, 0))
    def test_matches_oracle(self, xs, N):
        theta = Fraction(P) ** N
        s = sum(xs, Fraction(0))
        if s + theta == 0:
            return
        assert as_fractions(F_map(vec(*xs), E(theta))) == oracle_F(xs, theta)


def ball_vectors(dim, dv):
    entry = st.builds(
        lambda a, b: Fraction(a * P**dv, b),
        st.integers(-10**6, 10**6),
        st.integers(1, 10**6).filter(lambda b: b % P != 0),
    )
    return st.lists(entry, min_size=dim, max_size=dim)


class TestContraction:
    LAM = weights(1, 5, 25)

    @given(ball_vectors(2, 1), st.integers(-3, 0), st.integers(1, 3))
    def test_ball_is_invariant(self, x, N, k):
        out = F_tau(vec(*x), E(Fraction(P) ** N), self.LAM, k)
        assert out.in_ball(Fraction(1, 5))

    @given(ball_vectors(2, 1), ball_vectors(2, 1), st.integers(-3, 0), st.integers(1, 3))
    @settings(max_examples=200)
    def test_lipschitz(self, x, y, N, k):
        theta = E(Fraction(P) ** N)
        fx = F_tau(vec(*x), theta, self.LAM, k)
        fy = F_tau(vec(*y), theta, self.LAM, k)
        assert (fx - fy).sup_norm() <= Fraction(1, 5) * (vec(*x) - vec(*y)).sup_norm()

    def test_oracle_contraction(self):
        # same bound checked with plain Fractions, independent of the library maps
        rng = random.Random(2)
        lam = [Fraction(1), Fraction(5), Fraction(25)]
        for _ in range(200):
            x = [Fraction(5 * rng.randint(-999, 999), rng.choice([1, 2, 3, 7])) for _ in range(2)]
            y = [Fraction(5 * rng.randint(-999, 999), rng.choice([1, 2, 3, 7])) for _ in range(2)]
            fx, fy = oracle_tau(x, Fraction(1, 25), lam, 2), oracle_tau(y, Fraction(1, 25), lam, 2)
            dx = min(vp(a - b) for a, b in zip(x, y))
            df = min(vp(a - b) for a, b in zip(fx, fy))
            assert df >= dx + 1


class TestSolver:
    def test_fixed_point_satisfies_equation(self):
        lam = weights(1, 5, 25)
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        field_, cert = solve_fixed_point(coupling, lam, 2, target=24)
        assert cert.converged
        x = as_fractions(field_.h)
        residual = [a - b for a, b in zip(oracle_tau(x, Fraction(1, 5), [1, 5, 25], 2), x)]
        assert min(vp(r) for r in residual) >= 24
        assert all(r <= Fraction(1, 5) for r in cert.ratios)

    def test_theta_one_single_step(self):
        lam = weights(1, 5, 25)
        field_, cert = solve_fixed_point(CouplingAssignment.homogeneous(E(5), 0), lam, 2)
        assert field_.h == vec(5, 25)
        assert cert.iterations == 1

    def test_uniqueness_over_random_starts(self):
        lam = weights(1, 5, 25)
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        ref, _ = solve_fixed_point(coupling, lam, 2, target=24)
        for seed in range(5):
            other, cert = solve_fixed_point(coupling, lam, 2, target=24, start="random", seed=seed)
            assert cert.converged
            assert (other.h - ref.h).valuation() >= 24

    def test_iteration_count_within_bound(self):
        lam = weights(1, 5, 25)
        coupling = CouplingAssignment.homogeneous(E(5), -2)
        _, cert = solve_fixed_point(coupling, lam, 3, target=20)
        assert cert.iterations <= iteration_bound(20, 1)

    def test_iteration_bound_values(self):
        assert iteration_bound(24, 1) == 25
        assert iteration_bound(24, 2, 2) == 7
        assert iteration_bound(24, math.inf) == 1
        assert iteration_bound(24, 0) == math.inf

    def test_fixed_backend_agrees_with_exact(self):
        coupling_e = CouplingAssignment.homogeneous(E(5), -1)
        exact, _ = solve_fixed_point(coupling_e, weights(1, 5, 25), 2, target=24)
        F = lambda v: FixedPrecision(v, P, 32)  # noqa: E731
        coupling_f = CouplingAssignment.homogeneous(F(5), -1)
        lam_f = WeightSequence(F(v) for v in (1, 5, 25))
        fixed, cert = solve_fixed_point(coupling_f, lam_f, 2, target=24)
        assert cert.backend == "fixed"
        for a, b in zip(fixed.h, exact.h):
            assert (to_exact(a) - b).valuation() >= 24

    def test_positive_N_rejected(self):
        with pytest.raises(PreconditionError):
            solve_fixed_point(CouplingAssignment.homogeneous(E(5), 1), weights(1, 5), 2)

    def test_delta_one_rejected_without_flag(self):
        with pytest.raises(PreconditionError):
            solve_fixed_point(CouplingAssignment.homogeneous(E(5), -1), weights(1, 1, 1), 2)

    def test_delta_one_exploratory_cap(self):
        lam = weights(1, 1, 1)
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        for seed in range(3):
            try:
                _, cert = solve_fixed_point(
                    coupling, lam, 2, start="random", seed=seed, max_iter=30, allow_delta_one=True
                )
                assert cert.iterations <= 30
            except NonContraction as exc:
                assert exc.certificate.iterations <= 30

    def test_iteration_cap_is_reported(self):
        lam = weights(1, 5, 25)
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        with pytest.raises(IterationCapExceeded) as info:
            solve_fixed_point(coupling, lam, 2, target=24, max_iter=3)
        assert info.value.certificate.iterations == 3

    def test_start_outside_ball(self):
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        with pytest.raises(PreconditionError):
            solve_fixed_point(coupling, weights(1, 5, 25), 2, start=vec(1, 0))

    def test_random_start_lies_in_ball(self):
        v = random_ball_vector(3, 2, E(1), random.Random(0))
        assert v.in_ball(Fraction(1, 25))

    def test_certificate_serializes(self):
        _, cert = solve_fixed_point(CouplingAssignment.homogeneous(E(5), -1), weights(1, 5), 2)
        doc = cert.to_dict()
        assert doc["converged"] and doc["backend"] == "exact"
        assert len(doc["delta_valuations"]) == cert.iterations


class TestPeriodic:
    LAM = weights(1, 5, 25)

    def test_period_one_matches_homogeneous(self):
        hom, _ = solve_fixed_point(CouplingAssignment.homogeneous(E(5), -1), self.LAM, 2)
        per, _ = solve_fixed_point(CouplingAssignment.periodic(E(5), [-1]), self.LAM, 2)
        assert (per.vectors[0] - hom.h).valuation() >= 24

    @pytest.mark.parametrize("by_class", [[-1, -2], [0, -1, -2]])
    def test_class_vectors_satisfy_recurrence(self, by_class):
        coupling = CouplingAssignment.periodic(E(5), by_class)
        field_, cert = solve_fixed_point(coupling, self.LAM, 2, target=24)
        m = len(by_class)
        assert all(r <= Fraction(1, 5) ** m for r in cert.ratios)
        # a class-c vertex has children of class c+1, coupled through θ of class c+1
        for c in range(m):
            child = field_.vectors[(c + 1) % m]
            theta = Fraction(P) ** by_class[(c + 1) % m]
            rhs = oracle_tau(as_fractions(child), theta, [1, 5, 25], 2)
            diff = [a - b for a, b in zip(as_fractions(field_.vectors[c]), rhs)]
            assert min(vp(d) for d in diff) >= 20

    def test_unroll_consistency(self):
        coupling = CouplingAssignment.periodic(E(5), [-1, -2])
        field_, _ = solve_fixed_point(coupling, self.LAM, 2, target=24)
        again = unroll_periodic(field_.vectors[0], coupling, self.LAM, 2)
        assert (again[1] - field_.vectors[1]).valuation() >= 24
        back = periodic_compose(field_.vectors[0], coupling, self.LAM, 2)
        assert (back - field_.vectors[0]).valuation() >= 24

    def test_field_lookup_by_level(self):
        f = PeriodicField([vec(1), vec(2)])
        assert f.at(()) == vec(1) and f.at((1, 2, 1)) == vec(2)


class TestExplicitFields:
    TREE = CayleyTree(2, 3)
    LAM = weights(1, 5, 25)

    def _solved(self):
        coupling = CouplingAssignment.homogeneous(E(5), -1)
        compact, _ = solve_fixed_point(coupling, self.LAM, 2)
        return coupling, expand_field(compact, coupling, self.LAM, self.TREE)

    def test_expanded_field_is_exact(self):
        coupling, f = self._solved()
        rep = verify_recurrence(f, coupling, self.LAM, self.TREE, include_root=True)
        assert not rep.violations and rep.checked == 7
        assert all(v == math.inf for v in rep.per_level.values())

    def test_expanded_field_close_to_compact(self):
        coupling, f = self._solved()
        compact = f.at((1, 1, 1))
        assert all((f.at(x) - compact).valuation() >= 24 for x in self.TREE.vertices)

    def test_fault_injection_is_localized(self):
        coupling, f = self._solved()
        bad = f.replace((1, 2), f.at((1, 2)) + vec(5**6, 0))
        rep = verify_recurrence(bad, coupling, self.LAM, self.TREE)
        flagged = {x for x, _ in rep.violations}
        # the tampered vertex breaks its own equation and its parent's
        assert flagged == {(1,), (1, 2)}
        assert dict(rep.violations)[(1, 2)] == 6

    def test_recurrence_oracle_per_edge(self):
        tree = CayleyTree(2, 2)
        coupling = CouplingAssignment.edgewise(E(5), {((), (1,)): -2, ((1,), (1, 2)): 1}, default=-1)
        boundary = {x: vec(5 * (i + 1), 25) for i, x in enumerate(tree.level(2))}
        f = backward_field(boundary, coupling, self.LAM, tree)
        assert verify_recurrence(f, coupling, self.LAM, tree, include_root=True).ok()
        children = tree.successors(())
        thetas = [Fraction(P) ** coupling.exponent((), y) for y in children]
        expected = [Fraction(5), Fraction(25)]
        for y, th in zip(children, thetas):
            fy = oracle_F(as_fractions(f.at(y)), th)
            expected = [e * v for e, v in zip(expected, fy)]
        assert as_fractions(f.at(())) == expected
        assert recurrence_value((), [f.at(y) for y in children], children, coupling, self.LAM) == f.at(())

    def test_explicit_field_depth(self):
        f = ExplicitField({(): vec(5)}, 0)
        assert () in f and (1,) not in f
        with pytest.raises(KeyError):
            f.at((1,))


class TestGauge:
    def test_round_trip(self):
        lam = weights(2, 5, 25)
        raw = {(): (E(3), E(4), E(Fraction(1, 7))), (1,): (E(1), E(0), E(2))}
        f = normalize_field(raw, lam)
        assert f.at(()) == vec(Fraction(4 * 5, 6), Fraction(25, 42))
        back = denormalize_field(f, lam)
        for x, h in raw.items():
            scaled = [e / h[0] for e in h]
            assert list(back[x]) == scaled

    def test_zero_weight_component(self):
        lam = weights(1, 5, 0)
        f = ExplicitField({(): vec(5, 0)}, 0)
        assert list(denormalize_field(f, lam)[()]) == [E(1), E(1), E(0)]
        with pytest.raises(PreconditionError):
            denormalize_field(ExplicitField({(): vec(5, 1)}, 0), lam)

    def test_vanishing_h0(self):
        with pytest.raises(PreconditionError):
            normalize_field({(): (E(0), E(1))}, weights(1, 5))


def test_field_types_lookup():
    h = vec(5, 25)
    assert TranslationInvariantField(h).at((2, 1, 1)) == h


def test_weight_sequence_basics():
    lam = weights(1, 5, 25, 0)
    assert lam.q == 4 and lam.delta == Fraction(1, 5)
    assert lam[7] == 0
    assert lam.tail() == vec(5, 25, 0)
    with pytest.raises(PAdicError):
        weights(0, 5)
