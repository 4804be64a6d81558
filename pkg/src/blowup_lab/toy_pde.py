"""The spatially decoupled equation ``v_t = f(v)`` on block initial data.

Each point evolves along its own kinetic trajectory, so a block function
stays a block function; only the values move.  L^p norms of block data
are series over blocks, and for the tower data ``psi = phi_n`` on
``[phi_n**-8, phi_n**-4)`` those series are decided analytically: terms
are Laurent polynomials in ``phi_n``, handled in log domain.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .conditions import linear_growth_constant
from .errors import ConfigError, NoBlowupError
from .kinetics import blowup_time, example_d_envelope, flow, invert_blowup_time
from .logdomain import EXACT_INDEX_LIMIT, LogReal, PhiSequence
from .piecewise_source import ExampleDGenerator, PiecewiseSource, _to_float, as_exact


@dataclass(frozen=True)
class Block:
    lo: Fraction
    hi: Fraction
    value: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", Fraction(self.lo))
        object.__setattr__(self, "hi", Fraction(self.hi))
        if not self.lo < self.hi:
            raise ConfigError(f"empty block [{self.lo}, {self.hi})")

    @property
    def measure(self) -> Fraction:
        return self.hi - self.lo


@dataclass(frozen=True)
class BlockFunction:
    """Piecewise-constant nonnegative data on ``(0, L]``, zero off the blocks.

    ``generator`` names an infinite family this object truncates
    (``{"name": "example_d", "n_max": k}``); the blocks are then its first
    ``k + 1`` members.
    """

    blocks: tuple
    length: Fraction = Fraction(1)
    generator: Optional[dict] = None

    def __post_init__(self) -> None:
        blocks = tuple(sorted(self.blocks, key=lambda b: b.lo))
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "length", Fraction(self.length))
        for b in blocks:
            if isinstance(b.value, float) and not math.isfinite(b.value):
                raise ConfigError("block values must be finite")
            if b.value < 0:
                raise ConfigError("block values must be nonnegative")
            if b.lo < 0 or b.hi > self.length:
                raise ConfigError(f"block [{b.lo}, {b.hi}) outside (0, {self.length}]")
        for a, b in zip(blocks, blocks[1:]):
            if a.hi > b.lo:
                raise ConfigError("blocks overlap")

    @property
    def support_measure(self) -> Fraction:
        return sum((b.measure for b in self.blocks), Fraction(0))

    @property
    def background_measure(self) -> Fraction:
        """Measure of the zero region, including unmaterialised tower blocks' complement."""
        if self.generator and self.generator.get("name") == "example_d":
            return self.length - Fraction(1, 16)
        return self.length - self.support_measure

    @property
    def is_tower(self) -> bool:
        return bool(self.generator) and self.generator.get("name") == "example_d"

    @property
    def n_max(self) -> Optional[int]:
        return self.generator.get("n_max") if self.generator else None

    def level_set_measure(self, M) -> Fraction:
        """Measure of ``{psi >= M}`` over the materialised blocks."""
        return sum((b.measure for b in self.blocks if b.value >= M), Fraction(0))

    def to_dict(self) -> dict:
        return {
            "L": str(self.length),
            "blocks": [{"lo": str(b.lo), "hi": str(b.hi), "value": str(b.value)} for b in self.blocks],
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BlockFunction":
        gen = doc.get("generator")
        if gen and gen.get("name") == "example_d":
            return example_d_psi(gen["n_max"])
        blocks = tuple(Block(Fraction(b["lo"]), Fraction(b["hi"]), Fraction(b["value"])) for b in doc["blocks"])
        return cls(blocks, Fraction(doc.get("L", 1)), gen)


def example_d_psi(n_max: int = 8) -> BlockFunction:
    """Tower data: value ``phi_n`` on ``[phi_n**-8, phi_n**-4)`` for ``0 <= n <= n_max``."""
    if n_max < 0:
        raise ConfigError("n_max must be nonnegative")
    blocks = []
    for n in range(n_max + 1):
        p = PhiSequence(n).exact
        blocks.append(Block(Fraction(1, p**8), Fraction(1, p**4), Fraction(p)))
    return BlockFunction(tuple(blocks), Fraction(1), {"name": "example_d", "n_max": n_max})


def constant_block(value, lo=0, hi=1, length=1) -> BlockFunction:
    return BlockFunction((Block(Fraction(lo), Fraction(hi), Fraction(value)),), Fraction(length))


# -- series verdicts ---------------------------------------------------------


@dataclass(frozen=True)
class SeriesVerdict:
    """Outcome for a series of nonnegative terms.

    ``convergent``: ``sum`` with ``err`` bounding the neglected tail.
    ``divergent``: every term with index ``>= n0`` is at least ``c``;
    ``term_rule`` lets ``recompute_term`` re-derive terms independently.
    ``inconclusive``: partial sums only.
    """

    verdict: str
    terms: tuple
    partial_sums: tuple
    sum: Optional[float] = None
    err: Optional[float] = None
    n0: Optional[int] = None
    c: Optional[float] = None
    certificate: str = ""
    term_rule: Optional[dict] = None
    p: float = 2.0

    @property
    def terms_computed(self) -> int:
        return len(self.terms)

    @property
    def norm(self) -> Optional[float]:
        return None if self.sum is None else self.sum ** (1.0 / self.p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = list(self.terms)
        d["partial_sums"] = list(self.partial_sums)
        d["terms_computed"] = self.terms_computed
        return d


def _tower_power_term(n: int, p: float) -> LogReal:
    # value**p * measure = phi**(p-4) - phi**(p-8)
    return PhiSequence(n).poly_log({p - 4: 1, p - 8: -1})


def _tower_power_term_exact(n: int, p: int) -> Fraction:
    ph = Fraction(PhiSequence(n).exact)
    return ph**p * (1 / ph**4 - 1 / ph**8)


def _envelope_ratio(n: int) -> LogReal:
    """``(phi^2 - phi)^2 (phi^8 - phi^4) / phi^12`` expanded in powers of ``phi``."""
    return PhiSequence(n).poly_log({0: 1, -1: -2, -2: 1, -4: -1, -5: 2, -6: -1})


def _envelope_term(n: int, t: float) -> LogReal:
    return LogReal.from_value(t * t / 4) * _envelope_ratio(n)


def recompute_term(verdict: SeriesVerdict, n: int) -> float:
    """Independent recomputation of term ``n`` from the verdict's rule."""
    rule = verdict.term_rule or {}
    kind = rule.get("kind")
    if kind == "tower_power":
        return _tower_power_term(n, rule["p"]).to_float()
    if kind == "tower_envelope":
        return _envelope_term(n, rule["t"]).to_float()
    raise ValueError(f"verdict has no recomputable term rule ({kind!r})")


def verify_divergence(verdict: SeriesVerdict, k: int = 20) -> bool:
    """Recompute terms ``n0 .. n0+k`` and confirm each is at least ``c``."""
    if verdict.verdict != "divergent":
        return False
    if verdict.c == math.inf:
        return True
    return all(recompute_term(verdict, n) >= verdict.c for n in range(verdict.n0, verdict.n0 + k + 1))


def _running(terms: Sequence[float]) -> tuple:
    out, acc = [], []
    for x in terms:
        acc.append(x)
        out.append(math.fsum(acc))
    return tuple(out)


def lp_norm_block(psi: BlockFunction, p: float, n_terms: int = 20) -> SeriesVerdict:
    """``integral of psi**p`` as a series over blocks, with a verdict."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    if not psi.is_tower:
        exact_p = float(p).is_integer()
        terms = []
        for b in psi.blocks:
            if exact_p:
                terms.append(_to_float(b.value ** int(p) * b.measure))
            else:
                terms.append(float(b.value) ** p * float(b.measure))
        sums = _running(terms)
        return SeriesVerdict("convergent", tuple(terms), sums, sum=sums[-1] if sums else 0.0,
                             err=0.0, certificate="finitely many blocks", p=p)
    terms = []
    for n in range(n_terms):
        if n < EXACT_INDEX_LIMIT and float(p).is_integer():
            terms.append(_to_float(_tower_power_term_exact(n, int(p))))
        else:
            terms.append(_tower_power_term(n, p).to_float())
    sums = _running(terms)
    rule = {"kind": "tower_power", "p": p}
    if p < 4:
        # term_n <= x_n = phi_n**(p-4) and x_{n+1} = x_n**2, so the tail is below x/(1-x)
        x = PhiSequence(n_terms).poly_log({p - 4: 1}).to_float()
        tail = x / (1 - x)
        return SeriesVerdict("convergent", tuple(terms), sums, sum=sums[-1], err=tail,
                             certificate=f"geometric tail bound phi_N^(p-4)/(1-phi_N^(p-4)) with N={n_terms}",
                             term_rule=rule, p=p)
    # p >= 4: phi**(p-4) and 1 - phi**-4 both increase with n
    c = terms[0]
    return SeriesVerdict("divergent", tuple(terms), sums, n0=0, c=c,
                         certificate="terms phi_n^(p-4) (1 - phi_n^-4) increase in n",
                         term_rule=rule, p=p)


# -- evolution ---------------------------------------------------------------


@dataclass(frozen=True)
class EvolvedBlocks:
    """Block data after time ``t``; blown-up blocks carry ``inf``."""

    t: float
    intervals: tuple  # (lo, hi) pairs, unchanged from the data
    values: tuple
    blown: tuple
    background: Optional[float]
    background_measure: Fraction
    generator: Optional[dict] = None

    @property
    def blown_measure(self) -> Fraction:
        return sum((hi - lo for (lo, hi), b in zip(self.intervals, self.blown) if b), Fraction(0))

    def lp_power(self, p: float) -> float:
        """``integral |v|**p`` over the materialised blocks and the background."""
        if any(self.blown):
            return math.inf
        parts = [abs(v) ** p * float(hi - lo) for (lo, hi), v in zip(self.intervals, self.values)]
        if self.background is not None:
            parts.append(abs(self.background) ** p * float(self.background_measure))
        return math.fsum(parts)


def evolve_block(psi: BlockFunction, f: PiecewiseSource, t: float) -> EvolvedBlocks:
    """Replace each block value ``v`` by the kinetic flow of ``v`` after time ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    values, blown = [], []
    for b in psi.blocks:
        if t == 0:
            values.append(_to_float(b.value))
            blown.append(False)
            continue
        r = flow(f, b.value, t)
        values.append(r.value if r.alive else math.inf)
        blown.append(not r.alive)
    bg = None
    if psi.background_measure > 0:
        r0 = flow(f, 0, t) if t > 0 else None
        bg = 0.0 if r0 is None else (r0.value if r0.alive else math.inf)
    return EvolvedBlocks(
        t, tuple((b.lo, b.hi) for b in psi.blocks), tuple(values), tuple(blown),
        bg, psi.background_measure, psi.generator,
    )


def instantaneous_blowup_certificate(
    f: PiecewiseSource, psi: BlockFunction, t: float, n_probe: int = 21
) -> SeriesVerdict:
    """Decide whether ``v(t)`` leaves L^2 (the series of squared block masses).

    For tower data under the tower source the evolved value of block ``n``
    is at least ``phi_n + t (phi_n^2 - phi_n)/2`` (``t <= 1/2``; later
    times only increase it), so term ``n`` is at least
    ``(t^2/4) R_n`` with ``R_n = (phi^2-phi)^2 (phi^8-phi^4)/phi^12``.
    ``R_n`` increases to 1, giving ``c = t^2/8`` from the first ``n``
    with ``R_n >= 1/2``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return lp_norm_block(psi, 2, n_probe)
    tower = psi.is_tower and isinstance(f.generator, ExampleDGenerator)
    # the tower bound only needs t <= 1/2; evolving further can exit a truncated source
    ev = evolve_block(psi, f, min(float(t), 0.5) if tower else t)
    if any(ev.blown):
        n0 = ev.blown.index(True)
        return SeriesVerdict("divergent", (), (), n0=n0, c=math.inf,
                             certificate="pointwise blow-up before t on a set of positive measure")
    if tower:
        s = min(float(t), 0.5)
        # the flows we can evaluate must respect the envelope the certificate uses
        # blocks are stored by position, so tower index n runs backwards
        for n, v in enumerate(reversed(ev.values)):
            lo, _ = example_d_envelope(n, Fraction(s)) if n < EXACT_INDEX_LIMIT else (None, None)
            if lo is not None and v < float(lo) * (1 - 1e-12):
                return SeriesVerdict("inconclusive", (), (), certificate=f"envelope violated at block {n}")
        terms = tuple(_envelope_term(n, s).to_float() for n in range(n_probe))
        n0 = next(n for n in range(64) if _envelope_ratio(n) >= LogReal.from_value(0.5))
        return SeriesVerdict(
            "divergent", terms, _running(terms), n0=n0, c=s * s / 8,
            certificate="term_n >= (t^2/4) R_n, R_n increasing in n, R_n0 >= 1/2",
            term_rule={"kind": "tower_envelope", "t": s},
        )
    C = linear_growth_constant(f)
    if psi.is_tower and C is not None:
        # |v| <= e^{Ct} psi + (e^{Ct} - 1) pointwise; unmaterialised blocks n > n_max
        # contribute at most (2 e^{Ct})^2 sum phi_n^-2
        g = math.exp(C * t)
        x = PhiSequence(psi.n_max + 1).poly_log({-2: 1}).to_float()
        tail = 4 * g * g * x / (1 - x)
        terms = tuple(v * v * float(hi - lo) for (lo, hi), v in zip(ev.intervals, ev.values))
        if ev.background is not None:
            terms = terms + (ev.background ** 2 * float(ev.background_measure),)
        sums = _running(terms)
        return SeriesVerdict("convergent", terms, sums, sum=sums[-1], err=tail,
                             certificate=f"uniform linear growth C={C}: Gronwall tail bound")
    if not psi.is_tower:
        total = ev.lp_power(2)
        terms = tuple(v * v * float(hi - lo) for (lo, hi), v in zip(ev.intervals, ev.values))
        if ev.background is not None:
            terms = terms + (ev.background ** 2 * float(ev.background_measure),)
        return SeriesVerdict("convergent", terms, _running(terms), sum=total, err=0.0,
                             certificate="finitely many blocks, all alive")
    terms = tuple(v * v * float(hi - lo) for (lo, hi), v in zip(ev.intervals, ev.values))
    return SeriesVerdict("inconclusive", terms, _running(terms), certificate="no tail argument available")


@dataclass(frozen=True)
class OnsetResult:
    measure: float
    level: Optional[float]
    pointwise_blowup: bool
    exact_measure: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def blowup_onset_measure(f: PiecewiseSource, psi: BlockFunction, t: float, tol: float = 1e-10) -> OnsetResult:
    """Measure of ``{x : T(psi(x)) <= t}``, the set that has blown up by time ``t``."""
    if t <= 0:
        raise ValueError("t must be positive")
    try:
        M = invert_blowup_time(f, t)
    except NoBlowupError:
        return OnsetResult(0.0, None, False)

    cache: dict = {}

    def T(v) -> float:
        if v not in cache:
            r = blowup_time(f, v)
            cache[v] = r.T if r.finite else math.inf
        return cache[v]

    measure = Fraction(0)
    for b in psi.blocks:
        if b.value > 0 and f.covers(b.value) and T(b.value) <= t + tol:
            measure += b.measure
    if psi.is_tower:
        # blocks n >= k carry phi_n >= M and fill (0, phi_k^-4); add those not materialised
        k = psi.n_max + 1
        while PhiSequence(k).log2_value < math.log2(M):
            k += 1
        measure += Fraction(1, PhiSequence(k).exact ** 4)
    return OnsetResult(_to_float(measure), M, True, str(measure))


@dataclass(frozen=True)
class PowerlawNorm:
    """``||v(t)||_p^p`` for data ``x**-r`` under ``U ln U``; ``value`` is None after blow-up."""

    r: float
    p: float
    t: float
    value: Optional[float]
    blown_up: bool
    blowup_time: float

    def to_dict(self) -> dict:
        return asdict(self)


def powerlaw_norm_example_c(r: float, p: float, t: float) -> PowerlawNorm:
    """Closed form ``1 / (1 - r p e^t)``, finite for ``t < ln(1/(r p))``."""
    if not (r > 0 and p >= 1):
        raise ValueError("need r > 0 and p >= 1")
    if r * p >= 1:
        raise ValueError("psi = x^-r is not in L^p when r >= 1/p")
    if t < 0:
        raise ValueError("t must be nonnegative")
    T = math.log(1.0 / (r * p))
    if t >= T:
        return PowerlawNorm(r, p, t, None, True, T)
    return PowerlawNorm(r, p, t, 1.0 / (1.0 - r * p * math.exp(t)), False, T)


@dataclass(frozen=True)
class LipschitzBoundCheck:
    norm: float
    bound: float
    C: float
    t: float
    p: float

    @property
    def holds(self) -> bool:
        return self.norm <= self.bound * (1 + 1e-12)


def lipschitz_bound_check(f: PiecewiseSource, psi: BlockFunction, t: float, p: float) -> LipschitzBoundCheck:
    """Compare ``||v(t)||_p`` with ``e^{Ct} ||psi||_p + (e^{Ct} - 1) L^{1/p}``."""
    C = linear_growth_constant(f)
    if C is None:
        raise ConfigError("source has no uniform linear growth constant")
    if psi.is_tower:
        raise ConfigError("bound check needs finitely many blocks")
    ev = evolve_block(psi, f, t)
    norm = ev.lp_power(p) ** (1.0 / p)
    psi_norm = math.fsum(float(b.value) ** p * float(b.measure) for b in psi.blocks) ** (1.0 / p)
    g = math.exp(C * t)
    return LipschitzBoundCheck(norm, g * psi_norm + (g - 1) * float(psi.length) ** (1.0 / p), C, t, p)


def random_block_function(rng, n_blocks: int = 6, max_value: float = 10.0, length=1) -> BlockFunction:
    """Disjoint blocks with dyadic endpoints and values drawn from ``rng``."""
    grid = 1 << 12
    cuts = sorted(set(int(c) for c in rng.integers(0, grid + 1, size=2 * n_blocks)))
    blocks = []
    for lo, hi in zip(cuts[::2], cuts[1::2]):
        if hi > lo:
            v = Fraction(int(rng.integers(0, 1 << 20)), 1 << 20) * Fraction(max_value)
            blocks.append(Block(Fraction(lo, grid) * length, Fraction(hi, grid) * length, v))
    return BlockFunction(tuple(blocks), Fraction(length))
