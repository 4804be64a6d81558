"""Piecewise-defined scalar source terms ``f`` for ``u' = f(u)``.

Breakpoints and the coefficients of constant and affine pieces are kept
as exact rationals (``fractions.Fraction``); the tower construction has
breakpoints such as ``2**64 + 1/2`` that no double can hold.  Evaluation
is exact and rounded to float only at the end.

Intervals are half-open ``[lo, hi)``; a value at a breakpoint comes from
the piece on the right.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import ConfigError, CoverageError, PositivityError
from .logdomain import EXACT_INDEX_LIMIT, LogReal, PhiSequence

Exact = Union[Fraction, float]  # float only for +-inf

DEFAULT_QUAD_TOL = 1e-10
TAIL_RULES = ("repeat-last", "truncate")


def as_exact(x) -> Exact:
    """Convert a number to an exact rational; infinities stay float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if math.isinf(x):
            return x
        if math.isnan(x):
            raise ValueError("NaN is not a valid breakpoint")
    if isinstance(x, str):
        if x in ("inf", "+inf"):
            return math.inf
        if x == "-inf":
            return -math.inf
    return Fraction(x)


def _to_float(x) -> float:
    try:
        return float(x)
    except OverflowError:
        return math.inf if x > 0 else -math.inf


# -- analytic pieces -------------------------------------------------------


@dataclass(frozen=True)
class AnalyticSpec:
    """A named smooth source with the facts the solvers need about it.

    ``recip_antiderivative`` is a closed form ``F`` with ``F' = 1/f``;
    ``recip_limit`` is ``lim F(s)`` as ``s -> inf`` (``math.inf`` when the
    reciprocal integral diverges).  ``slope_exponent`` describes how fast
    ``|f'|`` grows: ``|f'(s)| ~ s**slope_exponent`` (times ``log s`` when
    ``slope_has_log``).
    """

    name: str
    value: Callable[[float], float]
    derivative: Callable[[float], float]
    lipschitz: Callable[[float, float], float]
    recip_antiderivative: Optional[Callable[[float], float]] = None
    recip_limit: Optional[float] = None
    slope_exponent: float = math.inf
    slope_has_log: bool = False


def _s_ln_s(s: float) -> float:
    return s * math.log(s) if s > 0 else 0.0


def _lnln(s: float) -> float:
    return math.log(math.log(s))


ANALYTIC: dict[str, AnalyticSpec] = {
    "s_squared": AnalyticSpec(
        name="s_squared",
        value=lambda s: s * s,
        derivative=lambda s: 2.0 * s,
        lipschitz=lambda lo, hi: 2.0 * max(abs(lo), abs(hi)),
        recip_antiderivative=lambda s: -1.0 / s,
        recip_limit=0.0,
        slope_exponent=1.0,
    ),
    "s_ln_s": AnalyticSpec(
        name="s_ln_s",
        value=_s_ln_s,
        derivative=lambda s: math.log(s) + 1.0,
        lipschitz=lambda lo, hi: max(abs(math.log(lo) + 1.0), abs(math.log(hi) + 1.0))
        if lo > 0
        else math.inf,
        recip_antiderivative=_lnln,
        recip_limit=math.inf,
        slope_exponent=0.0,
        slope_has_log=True,
    ),
    "exp": AnalyticSpec(
        name="exp",
        value=lambda s: math.exp(s) if s < 709.0 else math.inf,
        derivative=lambda s: math.exp(s) if s < 709.0 else math.inf,
        lipschitz=lambda lo, hi: math.exp(hi) if hi < 709.0 else math.inf,
        recip_antiderivative=lambda s: -math.exp(-s),
        recip_limit=0.0,
    ),
}


# -- piece kinds -----------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: Fraction

    def exact_at(self, s) -> Fraction:
        return self.value


@dataclass(frozen=True)
class Affine:
    slope: Fraction
    intercept: Fraction

    def exact_at(self, s) -> Fraction:
        return self.slope * Fraction(s) + self.intercept


@dataclass(frozen=True)
class Analytic:
    name: str

    @property
    def spec(self) -> AnalyticSpec:
        return ANALYTIC[self.name]

    def exact_at(self, s):
        return None


Kind = Union[Constant, Affine, Analytic]


@dataclass(frozen=True)
class Piece:
    lo: Exact
    hi: Exact
    kind: Kind

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", as_exact(self.lo))
        object.__setattr__(self, "hi", as_exact(self.hi))
        if not self.lo < self.hi:
            raise ConfigError(f"empty piece [{self.lo}, {self.hi})")
        if isinstance(self.kind, Constant):
            object.__setattr__(self, "kind", Constant(Fraction(self.kind.value)))
        elif isinstance(self.kind, Affine):
            object.__setattr__(
                self, "kind", Affine(Fraction(self.kind.slope), Fraction(self.kind.intercept))
            )
        elif isinstance(self.kind, Analytic):
            if self.kind.name not in ANALYTIC:
                raise ConfigError(f"unknown analytic piece {self.kind.name!r}")
        else:
            raise ConfigError(f"unsupported piece kind {self.kind!r}")

    def value(self, s) -> float:
        if isinstance(self.kind, Analytic):
            return self.kind.spec.value(float(s))
        return _to_float(self.kind.exact_at(s))

    def exact_value(self, s) -> Optional[Fraction]:
        """Exact value for constant and affine pieces, else None."""
        return self.kind.exact_at(s)

    def left_limit(self) -> float:
        """Value approached at ``hi`` from inside the piece."""
        return self.value(self.hi)

    def slope_bound(self, lo, hi) -> float:
        k = self.kind
        if isinstance(k, Constant):
            return 0.0
        if isinstance(k, Affine):
            return abs(_to_float(k.slope))
        return k.spec.lipschitz(float(lo), float(hi))


# -- generators (infinite constructions) ------------------------------------


class ExampleDGenerator:
    """The double-exponential staircase with affine collars.

    Plateau ``n`` carries ``phi_{n+1} - phi_n`` on ``[phi_n + 1/2,
    phi_{n+1} - 1/2)``; collar ``n`` is ``a_n s + b_n`` on ``[phi_n - 1/2,
    phi_n + 1/2)``, and ``[0, phi_1 - 1/2)`` carries the constant 2.
    """

    name = "example_d"

    def __init__(self, n_max: int, log_domain: bool = True):
        if n_max < 1:
            raise ConfigError("example-d needs n_max >= 1")
        if n_max >= EXACT_INDEX_LIMIT and not log_domain:
            raise ConfigError(
                f"n_max={n_max} needs log2-domain arithmetic, which is disabled"
            )
        self.n_max = n_max
        self.log_domain = log_domain

    def params(self) -> dict:
        return {"n_max": self.n_max, "log_domain": self.log_domain}

    def _poly(self, n: int, coeffs):
        if n >= EXACT_INDEX_LIMIT and not self.log_domain:
            raise ConfigError("log2-domain arithmetic disabled")
        return PhiSequence(n).poly(coeffs)

    def slope(self, n: int):
        """Collar slope ``a_n`` (exact Fraction or LogReal)."""
        return self._poly(n - 1, {4: 1, 2: -2, 1: 1})

    def intercept(self, n: int):
        return self._poly(n - 1, {6: -1, 4: Fraction(5, 2), 3: -1, 1: Fraction(-1, 2)})

    @staticmethod
    def slope_exact(n: int) -> Fraction:
        return PhiSequence(n - 1).poly_exact({4: 1, 2: -2, 1: 1})

    @staticmethod
    def intercept_exact(n: int) -> Fraction:
        return PhiSequence(n - 1).poly_exact(
            {6: -1, 4: Fraction(5, 2), 3: -1, 1: Fraction(-1, 2)}
        )

    @staticmethod
    def slope_log(n: int) -> LogReal:
        return PhiSequence(n - 1).poly_log({4: 1, 2: -2, 1: 1})

    @staticmethod
    def plateau_exact(n: int) -> int:
        return PhiSequence(n + 1).exact - PhiSequence(n).exact

    def pieces(self) -> list[Piece]:
        half = Fraction(1, 2)
        out = [Piece(Fraction(0), PhiSequence(1).exact - half, Constant(Fraction(2)))]
        for n in range(1, self.n_max + 1):
            p = PhiSequence(n).exact
            q = PhiSequence(n + 1).exact
            out.append(Piece(p - half, p + half, Affine(self.slope_exact(n), self.intercept_exact(n))))
            out.append(Piece(p + half, q - half, Constant(Fraction(q - p))))
        return out

    def reciprocal_lower_bound(self) -> tuple[Fraction, str]:
        """Uniform lower bound on the reciprocal integral over each plateau.

        Plateau ``n`` contributes ``1 - 1/(phi_{n+1} - phi_n)``, which
        increases with ``n``; the value at ``n = 1`` bounds all of them.
        """
        gap = self.plateau_exact(1)
        return 1 - Fraction(1, gap), "plateau n contributes 1 - 1/(phi_{n+1}-phi_n), increasing in n"

    slopes_unbounded = True


class AlternatingGenerator:
    """Disjoint-support sum ``g + h`` on unit cells.

    ``h = 1`` on ``[2k, 2k+1)`` and ``g = growth**(k+1)`` on ``[2k+1, 2k+2)``.
    The reciprocal integral of ``h`` diverges whatever ``g`` is.
    """

    name = "alternating"

    def __init__(self, n_max: int, growth: Fraction = Fraction(10)):
        if n_max < 0:
            raise ConfigError("n_max must be nonnegative")
        if growth <= 0:
            raise ConfigError("growth must be positive")
        self.n_max = n_max
        self.growth = Fraction(growth)

    def params(self) -> dict:
        return {"n_max": self.n_max, "growth": str(self.growth)}

    def pieces(self) -> list[Piece]:
        out = []
        for k in range(self.n_max + 1):
            out.append(Piece(Fraction(2 * k), Fraction(2 * k + 1), Constant(Fraction(1))))
            out.append(Piece(Fraction(2 * k + 1), Fraction(2 * k + 2), Constant(self.growth ** (k + 1))))
        return out

    def reciprocal_lower_bound(self) -> tuple[Fraction, str]:
        return Fraction(1), "each h cell has length 1 and value 1"

    slopes_unbounded = True


GENERATORS = {"example_d": ExampleDGenerator, "alternating": AlternatingGenerator}


# -- the source ------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseSource:
    """Ordered, contiguous pieces plus a rule for values past the last one.

    ``tail="repeat-last"`` extends the last piece to ``+inf``;
    ``tail="truncate"`` makes evaluation past it a ``CoverageError``.
    """

    pieces: tuple[Piece, ...]
    tail: str = "repeat-last"
    generator: object = None
    name: Optional[str] = None
    _los: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        pieces = tuple(self.pieces)
        if not pieces:
            raise ConfigError("a source needs at least one piece")
        if self.tail not in TAIL_RULES:
            raise ConfigError(f"unknown tail rule {self.tail!r}")
        for left, right in zip(pieces, pieces[1:]):
            if left.hi != right.lo:
                raise ConfigError(f"pieces do not tile: {left.hi} != {right.lo}")
        if self.tail == "repeat-last" and pieces[-1].hi != math.inf:
            last = pieces[-1]
            pieces = pieces[:-1] + (Piece(last.lo, math.inf, last.kind),)
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "_los", [p.lo for p in pieces])

    @property
    def lo(self) -> Exact:
        return self.pieces[0].lo

    @property
    def hi(self) -> Exact:
        return self.pieces[-1].hi

    def covers(self, s) -> bool:
        return self.lo <= s < self.hi or (s == math.inf and self.hi == math.inf)

    def locate(self, s) -> int:
        """Index of the piece whose half-open interval contains ``s``."""
        if isinstance(s, float) and math.isnan(s):
            raise CoverageError("NaN state")
        if not (self.lo <= s < self.hi):
            raise CoverageError(f"s={s} outside [{self.lo}, {self.hi})")
        return bisect.bisect_right(self._los, s) - 1

    def __call__(self, s) -> float:
        return self.pieces[self.locate(s)].value(s)

    def exact(self, s) -> Optional[Fraction]:
        return self.pieces[self.locate(s)].exact_value(s)

    def breakpoints(self) -> list[Exact]:
        return [p.lo for p in self.pieces[1:]]

    def is_continuous_at(self, i: int) -> bool:
        """Whether the left limit of piece ``i`` equals piece ``i+1`` at the junction."""
        left, right = self.pieces[i], self.pieces[i + 1]
        a, b = left.exact_value(left.hi), right.exact_value(right.lo)
        if a is not None and b is not None:
            return a == b
        x = left.left_limit()
        y = right.value(right.lo)
        return math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-15)

    def float_prefix(self) -> int:
        """Number of leading pieces whose breakpoints and coefficients are exact doubles."""
        count = 0
        for p in self.pieces:
            ok = all(
                isinstance(v, float) or _to_float(v) == v
                for v in (p.lo, p.hi)
            )
            if isinstance(p.kind, Affine):
                ok = ok and all(
                    math.isfinite(_to_float(v)) for v in (p.kind.slope, p.kind.intercept)
                )
            if not ok or _to_float(p.lo) >= _to_float(p.hi):
                break
            count += 1
        return count

    def to_dict(self) -> dict:
        gen = None
        if self.generator is not None:
            gen = {"name": self.generator.name, **self.generator.params()}
        return {
            "name": self.name,
            "tail": self.tail,
            "generator": gen,
            "pieces": [_piece_to_dict(p) for p in self.pieces],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "PiecewiseSource":
        pieces = tuple(_piece_from_dict(d) for d in doc["pieces"])
        gen = None
        if doc.get("generator"):
            g = dict(doc["generator"])
            name = g.pop("name")
            if name not in GENERATORS:
                raise ConfigError(f"unknown generator {name!r}")
            if "growth" in g:
                g["growth"] = Fraction(g["growth"])
            gen = GENERATORS[name](**g)
        return cls(pieces, tail=doc.get("tail", "repeat-last"), generator=gen, name=doc.get("name"))

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseSource":
        return cls.from_dict(json.loads(text))


def _num_str(x: Exact) -> str:
    if isinstance(x, float):
        return "inf" if x > 0 else "-inf"
    return str(x)


def _piece_to_dict(p: Piece) -> dict:
    d = {"lo": _num_str(p.lo), "hi": _num_str(p.hi)}
    k = p.kind
    if isinstance(k, Constant):
        d.update(kind="constant", value=str(k.value))
    elif isinstance(k, Affine):
        d.update(kind="affine", slope=str(k.slope), intercept=str(k.intercept))
    else:
        d.update(kind="analytic", name=k.name)
    return d


def _piece_from_dict(d: dict) -> Piece:
    kind = d["kind"]
    if kind == "constant":
        k = Constant(Fraction(d["value"]))
    elif kind == "affine":
        k = Affine(Fraction(d["slope"]), Fraction(d["intercept"]))
    elif kind == "analytic":
        k = Analytic(d["name"])
    else:
        raise ConfigError(f"unknown piece kind {kind!r}")
    return Piece(as_exact(d["lo"]), as_exact(d["hi"]), k)


# -- operations ------------------------------------------------------------


def evaluate(f: PiecewiseSource, s) -> float:
    """Value of ``f`` at ``s``; right-continuous at breakpoints."""
    return f(s)


def evaluate_array(f: PiecewiseSource, s: np.ndarray) -> np.ndarray:
    return np.array([f(float(x)) for x in np.ravel(s)]).reshape(np.shape(s))


def _jump_at(f: PiecewiseSource, i: int) -> bool:
    return not f.is_continuous_at(i)


def lipschitz_on(f: PiecewiseSource, lo, hi) -> float:
    """Supremum of difference quotients of ``f`` over ``[lo, hi]``.

    Exact for constant and affine pieces, the declared bound for analytic
    ones; a jump inside the interval gives ``inf``.
    """
    lo, hi = as_exact(lo), as_exact(hi)
    if not lo < hi:
        raise ValueError("need lo < hi")
    if lo < f.lo or hi > f.hi:
        raise CoverageError(f"[{lo}, {hi}] not inside [{f.lo}, {f.hi})")
    i0 = f.locate(lo)
    bound = 0.0
    for i in range(i0, len(f.pieces)):
        p = f.pieces[i]
        if p.lo > hi:
            break
        a, b = max(lo, p.lo), min(hi, p.hi)
        if a < b or (a == b and i == i0):
            bound = max(bound, p.slope_bound(a, b))
        if p.hi <= hi and i + 1 < len(f.pieces) and _jump_at(f, i):
            return math.inf
    return bound


def _reciprocal_piece(p: Piece, a: Fraction, b: Exact, tol: float) -> tuple[float, float]:
    """Integral of 1/f over ``[a, b]`` inside one piece, with error estimate."""
    k = p.kind
    if isinstance(k, Constant):
        if k.value <= 0:
            raise PositivityError(f"f = {k.value} <= 0 on [{p.lo}, {p.hi})")
        if b == math.inf:
            return math.inf, 0.0
        return _to_float((b - a) / k.value), 0.0
    if isinstance(k, Affine):
        wa = k.exact_at(a)
        if wa <= 0:
            raise PositivityError(f"f({a}) = {wa} <= 0")
        if b == math.inf:
            if k.slope < 0:
                raise PositivityError("affine tail turns negative")
            return math.inf, 0.0
        wb = k.exact_at(b)
        if wb <= 0:
            raise PositivityError(f"f({b}) = {wb} <= 0")
        if k.slope == 0:
            return _to_float((b - a) / wa), 0.0
        rel = _to_float(k.slope * (b - a) / wa)
        return math.log1p(rel) / _to_float(k.slope), 0.0
    spec = k.spec
    fa = float(a)
    if b == math.inf:
        if spec.recip_antiderivative is None or spec.recip_limit is None:
            val, err = integrate.quad(lambda s: 1.0 / spec.value(s), fa, math.inf, epsabs=tol, epsrel=0, limit=400)
            return val, err
        if spec.recip_limit == math.inf:
            return math.inf, 0.0
        if spec.value(fa) <= 0:
            raise PositivityError(f"f({fa}) <= 0")
        return spec.recip_limit - spec.recip_antiderivative(fa), 0.0
    fb = float(b)
    probe = np.linspace(fa, fb, 65)
    if min(spec.value(x) for x in probe) <= 0:
        raise PositivityError(f"{spec.name} is nonpositive on [{fa}, {fb}]")
    val, err = integrate.quad(lambda s: 1.0 / spec.value(s), fa, fb, epsabs=tol, epsrel=0, limit=400)
    return val, err


def reciprocal_integral_with_error(
    f: PiecewiseSource, a, b, tol: float = DEFAULT_QUAD_TOL
) -> tuple[float, float, int]:
    """``(integral of 1/f over [a, b], error estimate, pieces touched)``."""
    a, b = as_exact(a), as_exact(b)
    if not a < b:
        raise ValueError("need a < b")
    if b > f.hi:
        raise CoverageError(f"b={b} beyond coverage {f.hi}")
    i0 = f.locate(a)
    segments = []
    for i in range(i0, len(f.pieces)):
        p = f.pieces[i]
        if p.lo >= b:
            break
        segments.append((p, max(a, p.lo), min(b, p.hi)))
    n_analytic = sum(isinstance(p.kind, Analytic) for p, _, _ in segments) or 1
    total, err = 0.0, 0.0
    terms = []
    for p, x, y in segments:
        v, e = _reciprocal_piece(p, x, y, tol / n_analytic)
        terms.append(v)
        err += e
    total = math.fsum(terms)
    return total, err, len(segments)


def reciprocal_integral(f: PiecewiseSource, a, b, tol: float = DEFAULT_QUAD_TOL) -> float:
    """Time for the trajectory of ``u' = f(u)`` to travel from ``a`` to ``b``."""
    return reciprocal_integral_with_error(f, a, b, tol)[0]


# -- constructions ---------------------------------------------------------


def build_example_c() -> PiecewiseSource:
    """``s ln s`` for ``s >= 1`` and ``s - 1`` below; C^1 at the junction."""
    return PiecewiseSource(
        (
            Piece(-math.inf, Fraction(1), Affine(Fraction(1), Fraction(-1))),
            Piece(Fraction(1), math.inf, Analytic("s_ln_s")),
        ),
        name="example-c",
    )


def build_example_d(n_max: int = 8, log_domain: bool = True) -> PiecewiseSource:
    """Tower staircase truncated after plateau ``n_max``."""
    gen = ExampleDGenerator(n_max, log_domain=log_domain)
    return PiecewiseSource(tuple(gen.pieces()), tail="truncate", generator=gen, name="example-d")


def build_alternating(n_max: int = 6, growth=10) -> PiecewiseSource:
    gen = AlternatingGenerator(n_max, Fraction(growth))
    return PiecewiseSource(tuple(gen.pieces()), tail="truncate", generator=gen, name="alternating")


def constant_source(c, lo=-math.inf) -> PiecewiseSource:
    return PiecewiseSource((Piece(lo, math.inf, Constant(Fraction(c))),), name=f"constant({c})")


def affine_source(slope, intercept, lo=-math.inf) -> PiecewiseSource:
    return PiecewiseSource(
        (Piece(lo, math.inf, Affine(Fraction(slope), Fraction(intercept))),),
        name=f"affine({slope},{intercept})",
    )


def analytic_source(name: str, lo=0) -> PiecewiseSource:
    return PiecewiseSource((Piece(lo, math.inf, Analytic(name)),), name=name)


NAMED_SOURCES: dict[str, Callable[[], PiecewiseSource]] = {
    "example-c": build_example_c,
    "example-d": build_example_d,
    "s_squared": lambda: analytic_source("s_squared", 0),
    "exp": lambda: analytic_source("exp", -math.inf),
    "identity": lambda: affine_source(1, 0),
    "s_minus_1": lambda: affine_source(1, -1),
    "zero": lambda: constant_source(0),
    "one": lambda: constant_source(1),
    "alternating": build_alternating,
}


def named_source(name: str) -> PiecewiseSource:
    try:
        return NAMED_SOURCES[name]()
    except KeyError:
        raise ConfigError(f"unknown source {name!r}; choose from {sorted(NAMED_SOURCES)}") from None


def load_source(spec: str) -> PiecewiseSource:
    """A registered name or a path to a JSON source document."""
    if spec in NAMED_SOURCES:
        return named_source(spec)
    with open(spec) as fh:
        return PiecewiseSource.from_json(fh.read())


def check_tiling(f: PiecewiseSource) -> bool:
    return all(a.hi == b.lo for a, b in zip(f.pieces, f.pieces[1:]))


def continuity_residuals(f: PiecewiseSource) -> list[Fraction]:
    """Exact jumps at the internal breakpoints between rational pieces."""
    out = []
    for left, right in zip(f.pieces, f.pieces[1:]):
        a, b = left.exact_value(left.hi), right.exact_value(right.lo)
        if a is None or b is None:
            continue
        out.append(abs(a - b))
    return out
