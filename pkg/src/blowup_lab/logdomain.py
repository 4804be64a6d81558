"""Signed base-2 logarithmic numbers and the tower 2**(2**n).

The tower grows double-exponentially: ``2**(2**10)`` already overflows a
double.  ``LogReal`` keeps sign and ``log2|x|`` separately so products,
powers and signed sums of such values stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Mapping, Union

Number = Union[int, float, Fraction]

# Below this index the tower polynomials are evaluated exactly with ints.
EXACT_INDEX_LIMIT = 8


def exact_log2(x: Number) -> float:
    """log2 of a positive int, Fraction or float without overflowing."""
    if isinstance(x, Fraction):
        return math.log2(x.numerator) - math.log2(x.denominator)
    return math.log2(x)


@total_ordering
@dataclass(frozen=True)
class LogReal:
    """A real number stored as ``sign * 2**log2abs``."""

    sign: int
    log2abs: float

    @classmethod
    def from_value(cls, x: Number) -> "LogReal":
        if x == 0:
            return ZERO
        sign = 1 if x > 0 else -1
        return cls(sign, exact_log2(abs(x)))

    @classmethod
    def pow2(cls, exponent: float) -> "LogReal":
        return cls(1, float(exponent))

    def is_zero(self) -> bool:
        return self.sign == 0

    def to_float(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.log2abs >= 1024:
            return self.sign * math.inf
        return self.sign * 2.0 ** self.log2abs

    __float__ = to_float

    def __neg__(self) -> "LogReal":
        return LogReal(-self.sign, self.log2abs)

    def __mul__(self, other: "LogReal | Number") -> "LogReal":
        other = _coerce(other)
        if self.sign == 0 or other.sign == 0:
            return ZERO
        return LogReal(self.sign * other.sign, self.log2abs + other.log2abs)

    __rmul__ = __mul__

    def __truediv__(self, other: "LogReal | Number") -> "LogReal":
        other = _coerce(other)
        if other.sign == 0:
            raise ZeroDivisionError("LogReal division by zero")
        if self.sign == 0:
            return ZERO
        return LogReal(self.sign * other.sign, self.log2abs - other.log2abs)

    def __rtruediv__(self, other: Number) -> "LogReal":
        return _coerce(other) / self

    def __pow__(self, k: float) -> "LogReal":
        if self.sign == 0:
            if k <= 0:
                raise ZeroDivisionError("0 raised to a nonpositive power")
            return ZERO
        if self.sign < 0:
            if float(k).is_integer():
                sign = -1 if int(k) % 2 else 1
                return LogReal(sign, self.log2abs * k)
            raise ValueError("fractional power of a negative LogReal")
        return LogReal(1, self.log2abs * k)

    def __add__(self, other: "LogReal | Number") -> "LogReal":
        return log_sum([self, _coerce(other)])

    __radd__ = __add__

    def __sub__(self, other: "LogReal | Number") -> "LogReal":
        return log_sum([self, -_coerce(other)])

    def __rsub__(self, other: Number) -> "LogReal":
        return log_sum([_coerce(other), -self])

    def _key(self) -> tuple:
        if self.sign == 0:
            return (0, 0.0)
        return (self.sign, self.sign * self.log2abs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, (LogReal, int, float, Fraction)):
            return NotImplemented
        return self._key() == _coerce(other)._key()

    def __lt__(self, other: "LogReal | Number") -> bool:
        return self._key() < _coerce(other)._key()

    def __hash__(self) -> int:
        return hash(self._key())


ZERO = LogReal(0, -math.inf)


def _coerce(x: "LogReal | Number") -> LogReal:
    return x if isinstance(x, LogReal) else LogReal.from_value(x)


def log_sum(terms: Iterable[LogReal]) -> LogReal:
    """Signed log-sum-exp in base 2.

    Terms are rescaled by the largest magnitude before summing, so the
    result is accurate to double precision relative to that magnitude.
    """
    terms = [t for t in terms if t.sign != 0]
    if not terms:
        return ZERO
    top = max(t.log2abs for t in terms)
    total = math.fsum(t.sign * 2.0 ** (t.log2abs - top) for t in terms)
    if total == 0.0:
        return ZERO
    return LogReal(1 if total > 0 else -1, top + math.log2(abs(total)))


@dataclass(frozen=True)
class PhiSequence:
    """The tower value ``phi_n = 2**(2**n)`` held by its index."""

    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("tower index must be nonnegative")

    @property
    def log2_value(self) -> int:
        return 1 << self.index

    @property
    def exact(self) -> int:
        return 1 << self.log2_value

    @property
    def float_value(self) -> float | None:
        if self.log2_value >= 1024:
            return None
        return math.ldexp(1.0, self.log2_value)

    def log(self) -> LogReal:
        return LogReal.pow2(self.log2_value)

    def next(self) -> "PhiSequence":
        return PhiSequence(self.index + 1)

    def poly_exact(self, coeffs: Mapping[int, Number]) -> Fraction:
        """Exact value of ``sum c_k phi**k`` for integer exponents."""
        phi = self.exact
        total = Fraction(0)
        for k, c in coeffs.items():
            total += Fraction(c) * (Fraction(phi) ** k)
        return total

    def poly_log(self, coeffs: Mapping[float, Number]) -> LogReal:
        """``sum c_k phi**k`` in log domain; real exponents allowed."""
        lp = float(self.log2_value)
        parts = []
        for k, c in coeffs.items():
            if c == 0:
                continue
            lc = LogReal.from_value(c)
            parts.append(LogReal(lc.sign, lc.log2abs + k * lp))
        return log_sum(parts)

    def poly(self, coeffs: Mapping[int, Number]) -> "Fraction | LogReal":
        """Exact below ``EXACT_INDEX_LIMIT``, log domain from there on."""
        if self.index < EXACT_INDEX_LIMIT:
            return self.poly_exact(coeffs)
        return self.poly_log(coeffs)


def phi(n: int) -> PhiSequence:
    return PhiSequence(n)
