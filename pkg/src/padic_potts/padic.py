"""Arithmetic in Q_p with the non-Archimedean absolute value.

Two backends share one operator surface:

* :class:`ExactRational` wraps a :class:`fractions.Fraction`. Every quantity in
  the Potts construction is rational when the coupling base is, so this is the
  ground truth used by the verification routines.
* :class:`FixedPrecision` stores ``p**val * unit`` with ``unit`` known modulo
  ``p**prec`` (capped relative precision). Cancellation in addition shrinks
  ``prec``; the number of digits lost is exposed as :attr:`FixedPrecision.loss`.

Mixing a backend with Python ``int``/``Fraction`` operands is allowed (they are
lifted); mixing the two backends is not.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence, Union

DEFAULT_PRECISION = 32

Number = Union[int, Fraction]


class PAdicError(ValueError):
    pass


class SmallPrimeError(PAdicError):
    """Raised for p <= 3 unless explicitly allowed."""


class DomainError(PAdicError):
    """Argument outside the convergence disk of a series."""


class PreconditionError(PAdicError):
    pass


class PrecisionExhausted(ArithmeticError):
    """A fixed-precision result is indistinguishable from zero."""


class BackendMismatch(TypeError):
    pass


class AtLeast(int):
    """Valuation known only from below: the value is zero at working precision."""

    def __repr__(self) -> str:
        return f"AtLeast({int(self)})"


@lru_cache(maxsize=None)
def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    return all(n % d for d in range(3, math.isqrt(n) + 1, 2))


def check_prime(p: int, allow_small_prime: bool = False) -> int:
    if not isinstance(p, int) or not _is_prime(p):
        raise PAdicError(f"{p!r} is not a prime")
    if p <= 3 and not allow_small_prime:
        raise SmallPrimeError(
            f"p={p}: the construction assumes a prime p > 3 "
            "(pass allow_small_prime=True to experiment)"
        )
    return p


@lru_cache(maxsize=4096)
def _ppow(p: int, k: int) -> int:
    return p**k


def _vp(n: int, p: int) -> int:
    """Valuation of a nonzero integer."""
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def _split(n: int, p: int) -> tuple[int, int]:
    v = _vp(n, p)
    return v, n // _ppow(p, v)


def valuation_of_fraction(x: Fraction, p: int) -> int | float:
    if x == 0:
        return math.inf
    return _vp(x.numerator, p) - _vp(x.denominator, p)


class PAdic:
    """Shared operator plumbing; subclasses implement the primitives."""

    __slots__ = ()
    p: int

    # primitives -------------------------------------------------------
    def lift(self, value: Number) -> PAdic:
        raise NotImplementedError

    def valuation(self) -> int | float:
        raise NotImplementedError

    def is_zero(self) -> bool:
        raise NotImplementedError

    def inverse(self) -> PAdic:
        raise NotImplementedError

    def to_fraction(self) -> Fraction:
        raise NotImplementedError

    def _add(self, other):
        raise NotImplementedError

    def _mul(self, other):
        raise NotImplementedError

    # derived ----------------------------------------------------------
    def norm(self) -> Fraction:
        """|x|_p as an exact rational; 0 for zero."""
        v = self.valuation()
        if v == math.inf:
            return Fraction(0)
        if isinstance(v, AtLeast):
            raise PrecisionExhausted(f"norm of a value that is zero modulo p^{int(v)}")
        return Fraction(1, _ppow(self.p, v)) if v >= 0 else Fraction(_ppow(self.p, -v))

    def _coerce(self, other):
        if isinstance(other, PAdic):
            if type(other) is not type(self):
                raise BackendMismatch(
                    f"cannot combine {type(self).__name__} with {type(other).__name__}; "
                    "convert explicitly"
                )
            if other.p != self.p:
                raise PAdicError(f"prime mismatch: {self.p} vs {other.p}")
            return other
        if isinstance(other, (int, Fraction)) and not isinstance(other, bool):
            return self.lift(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._add(other)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._add(-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other._add(-self)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._mul(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._mul(other.inverse())

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other._mul(self.inverse())

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n < 0:
            return self.inverse() ** (-n)
        result = self.lift(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result


class ExactRational(PAdic):
    """A rational number viewed as an element of Q_p."""

    __slots__ = ("value", "p")

    def __init__(self, value: Number | str, p: int, *, allow_small_prime: bool = False):
        check_prime(p, allow_small_prime)
        self.value = Fraction(value)
        self.p = p

    @classmethod
    def _make(cls, value: Fraction, p: int) -> ExactRational:
        obj = cls.__new__(cls)
        obj.value = value
        obj.p = p
        return obj

    def lift(self, value: Number) -> ExactRational:
        return ExactRational._make(Fraction(value), self.p)

    def valuation(self) -> int | float:
        return valuation_of_fraction(self.value, self.p)

    def is_zero(self) -> bool:
        return self.value == 0

    def to_fraction(self) -> Fraction:
        return self.value

    def inverse(self) -> ExactRational:
        if self.value == 0:
            raise ZeroDivisionError("inverse of 0 in Q_p")
        return ExactRational._make(1 / self.value, self.p)

    def _add(self, other: ExactRational) -> ExactRational:
        return ExactRational._make(self.value + other.value, self.p)

    def _mul(self, other: ExactRational) -> ExactRational:
        return ExactRational._make(self.value * other.value, self.p)

    def __neg__(self) -> ExactRational:
        return ExactRational._make(-self.value, self.p)

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n < 0 and self.value == 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return ExactRational._make(self.value**n, self.p)

    def truncate(self, absprec: int) -> ExactRational:
        """Canonical representative ``c * p**v`` of ``self`` modulo ``p**absprec``.

        ``0 <= c < p**(absprec - v)``; values with valuation >= absprec map to 0.
        Keeps iterates of rational maps from growing without bound.
        """
        v = self.valuation()
        if v >= absprec:
            return ExactRational._make(Fraction(0), self.p)
        p = self.p
        num, den = self.value.numerator, self.value.denominator
        modulus = _ppow(p, absprec - v)
        if v >= 0:
            unit_num = num // _ppow(p, v)
            c = unit_num * pow(den, -1, modulus) % modulus
            return ExactRational._make(Fraction(c * _ppow(p, v)), p)
        unit_den = den // _ppow(p, -v)
        c = num * pow(unit_den, -1, modulus) % modulus
        return ExactRational._make(Fraction(c, _ppow(p, -v)), p)

    def __eq__(self, other) -> bool:
        if isinstance(other, ExactRational):
            return self.p == other.p and self.value == other.value
        if isinstance(other, (int, Fraction)):
            return self.value == other
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.value, self.p))

    def __repr__(self) -> str:
        return f"ExactRational({str(self.value)!r}, p={self.p})"

    def __str__(self) -> str:
        return format_padic(self)


class FixedPrecision(PAdic):
    """``p**val * unit`` with ``unit`` known modulo ``p**prec``.

    Three states share the slots:

    * nonzero: ``1 <= prec <= cap`` and ``unit % p != 0``;
    * exact zero: ``val is None`` (arises only from exact inputs such as 0);
    * zero at precision: ``unit == 0``, ``prec == 0``, and ``val`` is the
      absolute precision below which nothing is known.
    """

    __slots__ = ("p", "cap", "val", "unit", "prec")

    def __init__(
        self,
        value: Number | str,
        p: int,
        precision: int = DEFAULT_PRECISION,
        *,
        allow_small_prime: bool = False,
    ):
        check_prime(p, allow_small_prime)
        if precision < 1:
            raise PAdicError("precision must be >= 1")
        other = FixedPrecision._from_fraction(Fraction(value), p, precision)
        for name in self.__slots__:
            setattr(self, name, getattr(other, name))

    @classmethod
    def _make(cls, p, cap, val, unit, prec) -> FixedPrecision:
        obj = cls.__new__(cls)
        obj.p = p
        obj.cap = cap
        obj.val = val
        obj.unit = unit
        obj.prec = prec
        return obj

    @classmethod
    def _from_fraction(cls, x: Fraction, p: int, cap: int) -> FixedPrecision:
        if x == 0:
            return cls._make(p, cap, None, 0, cap)
        vn, un = _split(x.numerator, p)
        vd, ud = _split(x.denominator, p)
        modulus = _ppow(p, cap)
        unit = un * pow(ud, -1, modulus) % modulus
        return cls._make(p, cap, vn - vd, unit, cap)

    @classmethod
    def from_fraction(
        cls, x: Number, p: int, precision: int = DEFAULT_PRECISION
    ) -> FixedPrecision:
        check_prime(p, allow_small_prime=True)
        return cls._from_fraction(Fraction(x), p, precision)

    @classmethod
    def from_digits(
        cls, val: int, digits: Sequence[int], p: int, precision: int | None = None
    ) -> FixedPrecision:
        """Build ``p**val * sum(d_i p**i)``; the digit count is the relative precision."""
        if not digits:
            raise PAdicError("at least one digit is required")
        if digits[0] == 0:
            raise PAdicError("leading digit d0 must be nonzero")
        if any(not 0 <= d < p for d in digits):
            raise PAdicError(f"digits must lie in [0, {p})")
        unit = sum(d * _ppow(p, i) for i, d in enumerate(digits))
        cap = max(precision or DEFAULT_PRECISION, len(digits))
        return cls._make(p, cap, val, unit, len(digits))

    @classmethod
    def zero_at(cls, absprec: int, p: int, precision: int = DEFAULT_PRECISION):
        return cls._make(p, precision, absprec, 0, 0)

    # state -------------------------------------------------------------
    @property
    def is_exact_zero(self) -> bool:
        return self.val is None

    @property
    def is_zero_at_precision(self) -> bool:
        return self.val is not None and self.unit == 0

    def is_zero(self) -> bool:
        return self.unit == 0

    @property
    def absprec(self) -> int | float:
        if self.val is None:
            return math.inf
        return self.val + self.prec

    @property
    def loss(self) -> int:
        """Digits of the ``cap`` lost to cancellation."""
        if self.val is None:
            return 0
        return self.cap - self.prec

    @property
    def digits(self) -> tuple[int, ...]:
        out = []
        u = self.unit
        for _ in range(self.prec):
            u, d = divmod(u, self.p)
            out.append(d)
        return tuple(out)

    def valuation(self) -> int | float:
        if self.val is None:
            return math.inf
        if self.unit == 0:
            return AtLeast(self.val)
        return self.val

    def to_fraction(self) -> Fraction:
        if self.unit == 0:
            return Fraction(0)
        if self.val >= 0:
            return Fraction(self.unit * _ppow(self.p, self.val))
        return Fraction(self.unit, _ppow(self.p, -self.val))

    def lift(self, value: Number) -> FixedPrecision:
        return FixedPrecision._from_fraction(Fraction(value), self.p, self.cap)

    # arithmetic ----------------------------------------------------------
    def __neg__(self) -> FixedPrecision:
        if self.unit == 0:
            return self
        return FixedPrecision._make(
            self.p, self.cap, self.val, (-self.unit) % _ppow(self.p, self.prec), self.prec
        )

    def _add(self, other: FixedPrecision) -> FixedPrecision:
        if self.val is None:
            return other
        if other.val is None:
            return self
        p = self.p
        cap = max(self.cap, other.cap)
        ap = min(self.absprec, other.absprec)
        terms = [t for t in (self, other) if t.unit != 0]
        if not terms:
            return FixedPrecision._make(p, cap, ap, 0, 0)
        v = min(t.val for t in terms)
        if v >= ap:
            return FixedPrecision._make(p, cap, ap, 0, 0)
        modulus = _ppow(p, ap - v)
        s = sum(t.unit * _ppow(p, t.val - v) for t in terms) % modulus
        if s == 0:
            return FixedPrecision._make(p, cap, ap, 0, 0)
        vs, unit = _split(s, p)
        val = v + vs
        prec = min(ap - val, cap)
        return FixedPrecision._make(p, cap, val, unit % _ppow(p, prec), prec)

    def _mul(self, other: FixedPrecision) -> FixedPrecision:
        p = self.p
        cap = max(self.cap, other.cap)
        if self.val is None or other.val is None:
            return FixedPrecision._make(p, cap, None, 0, cap)
        if self.unit == 0 or other.unit == 0:
            return FixedPrecision._make(p, cap, self.val + other.val, 0, 0)
        prec = min(self.prec, other.prec)
        modulus = _ppow(p, prec)
        return FixedPrecision._make(
            p, cap, self.val + other.val, self.unit * other.unit % modulus, prec
        )

    def inverse(self) -> FixedPrecision:
        if self.val is None:
            raise ZeroDivisionError("inverse of 0 in Q_p")
        if self.unit == 0:
            raise PrecisionExhausted(
                f"inverse of a value that is zero modulo p^{self.val}"
            )
        modulus = _ppow(self.p, self.prec)
        return FixedPrecision._make(
            self.p, self.cap, -self.val, pow(self.unit, -1, modulus), self.prec
        )

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n == 0:
            return self.lift(1)
        if self.val is None:
            if n < 0:
                raise ZeroDivisionError("0 raised to a negative power")
            return self
        if self.unit == 0:
            if n < 0:
                raise PrecisionExhausted("negative power of a value that is zero at precision")
            return FixedPrecision._make(self.p, self.cap, self.val * n, 0, 0)
        modulus = _ppow(self.p, self.prec)
        return FixedPrecision._make(
            self.p, self.cap, self.val * n, pow(self.unit, n, modulus), self.prec
        )

    def agrees_with(self, other, absprec: int) -> bool:
        """True when ``self - other`` vanishes modulo ``p**absprec``."""
        diff = self - other
        return diff.valuation() >= absprec

    def __eq__(self, other) -> bool:
        try:
            other = self._coerce(other)
        except (BackendMismatch, PAdicError):
            return False
        if other is NotImplemented:
            return NotImplemented
        if self.val is None and other.val is None:
            return True
        return (self - other).unit == 0

    __hash__ = None

    def __repr__(self) -> str:
        return f"FixedPrecision({format_padic(self)!r}, p={self.p}, cap={self.cap})"

    def __str__(self) -> str:
        return format_padic(self)


# functional surface ---------------------------------------------------


def valuation(x: PAdic) -> int | float:
    """v_p(x); ``math.inf`` for exact zero, :class:`AtLeast` for zero at precision."""
    return x.valuation()


def norm(x: PAdic) -> Fraction:
    return x.norm()


def to_fixed(x: PAdic, precision: int = DEFAULT_PRECISION) -> FixedPrecision:
    if isinstance(x, FixedPrecision):
        return x
    return FixedPrecision._from_fraction(x.to_fraction(), x.p, precision)


def to_exact(x: PAdic) -> ExactRational:
    if isinstance(x, ExactRational):
        return x
    return ExactRational._make(x.to_fraction(), x.p)


def make(value: Number | str, p: int, backend: str = "exact", precision: int = DEFAULT_PRECISION,
         *, allow_small_prime: bool = False) -> PAdic:
    """Construct a number in the named backend (``"exact"`` or ``"fixed"``)."""
    if isinstance(value, str):
        return parse_padic(value, p, backend, precision, allow_small_prime=allow_small_prime)
    if backend == "exact":
        return ExactRational(value, p, allow_small_prime=allow_small_prime)
    if backend == "fixed":
        return FixedPrecision(value, p, precision, allow_small_prime=allow_small_prime)
    raise PAdicError(f"unknown backend {backend!r}")


def convert(x: PAdic, backend: str, precision: int = DEFAULT_PRECISION) -> PAdic:
    if backend == "exact":
        return to_exact(x)
    if backend == "fixed":
        return to_fixed(x, precision)
    raise PAdicError(f"unknown backend {backend!r}")


def exp_p(x: PAdic, precision: int | None = None) -> PAdic:
    """The p-adic exponential, summed until the tail vanishes at working precision.

    For :class:`ExactRational` the result is the canonical representative modulo
    ``p**precision`` (default :data:`DEFAULT_PRECISION`). For
    :class:`FixedPrecision` the working precision is the operand's cap.
    """
    p = x.p
    v = x.valuation()
    if v == math.inf:
        return x.lift(1)
    if isinstance(v, AtLeast):
        raise PrecisionExhausted("exp_p of a value that is zero at precision")
    # convergence disk |x| < p^(-1/(p-1))  <=>  v * (p - 1) > 1
    if v * (p - 1) <= 1:
        raise DomainError(
            f"exp_p diverges: |x|_p = p^{-v} is not below p^(-1/(p-1)) for p={p}"
        )
    if isinstance(x, FixedPrecision):
        target = x.cap
    else:
        target = precision if precision is not None else DEFAULT_PRECISION
    # v(x^n/n!) >= n*v - (n-1)/(p-1), increasing in n; stop once it reaches target
    total = x.lift(1)
    term = x.lift(1)
    n = 0
    while True:
        n += 1
        if n * v * (p - 1) - (n - 1) >= target * (p - 1):
            break
        term = term * x / n
        total = total + term
    if isinstance(total, ExactRational):
        total = total.truncate(target)
    return total


def product_difference_bound_check(a: Sequence[PAdic], b: Sequence[PAdic]) -> bool:
    """Check |prod a - prod b|_p <= max |a_i - b_i|_p for tuples in the unit ball."""
    if len(a) != len(b):
        raise PreconditionError("sequences must have equal length")
    if not a:
        raise PreconditionError("sequences must be nonempty")
    for x in (*a, *b):
        if x.norm() > 1:
            raise PreconditionError(f"{x} lies outside the closed unit ball")
    prod_a = a[0]
    prod_b = b[0]
    for x, y in zip(a[1:], b[1:]):
        prod_a = prod_a * x
        prod_b = prod_b * y
    lhs = (prod_a - prod_b).norm()
    rhs = max((x - y).norm() for x, y in zip(a, b))
    return lhs <= rhs


@dataclass(frozen=True)
class Ball:
    """``B(center, r)`` (open) or the sphere ``S(center, r)``."""

    center: PAdic
    radius: Fraction
    kind: str = "open"

    def __post_init__(self):
        r = Fraction(self.radius)
        object.__setattr__(self, "radius", r)
        if self.kind not in ("open", "sphere"):
            raise PAdicError(f"unknown ball kind {self.kind!r}")
        p = self.center.p
        if r <= 0 or r != Fraction(p) ** -valuation_of_fraction(r, p):
            raise PAdicError(f"radius {r} is not an integer power of p={self.center.p}")

    def __contains__(self, x: PAdic) -> bool:
        d = (x - self.center).norm()
        return d < self.radius if self.kind == "open" else d == self.radius


# text format ----------------------------------------------------------

_DIGITS_RE = re.compile(r"^\s*(-?\d+)\s*:\s*(\d+(?:\s*,\s*\d+)*)\s*$")
_BIGO_RE = re.compile(r"^\s*O\(p\^(-?\d+)\)\s*$")


def format_padic(x: PAdic) -> str:
    """Canonical literal: ``"a/b"`` or ``"a"`` (exact), ``"v:d0,d1,..."`` (fixed).

    A fixed-precision zero-at-precision prints as ``"O(p^v)"``.
    """
    if isinstance(x, ExactRational):
        return str(x.value)
    if x.val is None:
        return "0"
    if x.unit == 0:
        return f"O(p^{x.val})"
    return f"{x.val}:" + ",".join(str(d) for d in x.digits)


def parse_padic(
    text: str,
    p: int,
    backend: str = "exact",
    precision: int = DEFAULT_PRECISION,
    *,
    allow_small_prime: bool = False,
) -> PAdic:
    check_prime(p, allow_small_prime)
    text = str(text).strip()
    m = _DIGITS_RE.match(text)
    if m:
        val = int(m.group(1))
        digits = [int(d) for d in m.group(2).split(",")]
        fixed = FixedPrecision.from_digits(val, digits, p, precision)
        return fixed if backend == "fixed" else to_exact(fixed)
    m = _BIGO_RE.match(text)
    if m:
        if backend != "fixed":
            raise PAdicError("O(p^v) literals only exist in the fixed backend")
        return FixedPrecision.zero_at(int(m.group(1)), p, precision)
    try:
        value = Fraction(text)
    except ValueError:
        raise PAdicError(f"unparseable p-adic literal {text!r}") from None
    if "." in text or "e" in text.lower():
        raise PAdicError(f"decimal literals are not exact: {text!r}")
    if backend == "exact":
        return ExactRational._make(value, p)
    if backend == "fixed":
        return FixedPrecision._from_fraction(value, p, precision)
    raise PAdicError(f"unknown backend {backend!r}")
