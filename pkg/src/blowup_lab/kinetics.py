"""Scalar kinetic flows ``u' = f(u)`` for piecewise sources.

Constant and affine pieces are crossed in closed form: on a constant
piece the state moves linearly, on an affine piece the source value
``w = f(u)`` obeys ``w' = a w``.  Analytic pieces go through an embedded
Runge-Kutta pair with terminal events on the piece boundary, so every
transition lands exactly on a breakpoint.

A trajectory is only reported as blown up when the remaining reciprocal
integral (the time left to reach infinity) is finite and shorter than the
time budget; large values alone never count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CoverageError, NoBlowupError, PositivityError
from .logdomain import EXACT_INDEX_LIMIT, LogReal, PhiSequence
from .piecewise_source import (
    DEFAULT_QUAD_TOL,
    Affine,
    Analytic,
    Constant,
    PiecewiseSource,
    _reciprocal_piece,
    _to_float,
    as_exact,
)

log = logging.getLogger(__name__)

RTOL = 1e-9
ATOL = 1e-12
MAX_STEPS = 10**6
BISECTION_CAP = 200


@dataclass(frozen=True)
class FlowOutcome:
    """Result of evolving one trajectory for ``elapsed`` time units."""

    status: str  # "alive" | "blown_up"
    value: Optional[float]
    blowup_time: Optional[float]
    elapsed: float
    pieces_traversed: int = 0
    error_estimate: float = 0.0

    @property
    def alive(self) -> bool:
        return self.status == "alive"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BlowupTimeResult:
    """Verdict on ``T(z0) = int_{z0}^inf ds / f(s)``.

    ``finite``: ``T`` and ``err``.  ``infinite``: ``partial_sums`` grow
    without bound, each further piece adding at least ``piece_bound``.
    ``inconclusive``: ``lower_bound`` on ``T``.
    """

    verdict: str
    z0: float
    T: Optional[float] = None
    err: float = 0.0
    partial_sums: tuple = ()
    contributions: tuple = ()
    piece_indices: tuple = ()  # source piece of each contribution
    piece_bound: Optional[float] = None
    lower_bound: Optional[float] = None
    certificate: str = ""

    @property
    def finite(self) -> bool:
        return self.verdict == "finite"

    @property
    def infinite(self) -> bool:
        return self.verdict == "infinite"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partial_sums"] = list(self.partial_sums)
        d["contributions"] = [list(c) for c in self.contributions]
        d["piece_indices"] = list(self.piece_indices)
        return d


# -- scalar flow -------------------------------------------------------------


def _exit_time_closed(p, z, up: bool) -> Optional[float]:
    """Time to reach the boundary in the direction of motion, or None."""
    target = p.hi if up else p.lo
    if isinstance(target, float):  # infinite boundary
        return None
    k = p.kind
    if isinstance(k, Constant):
        return _to_float((target - z) / k.value)
    w0 = k.exact_at(z)
    wt = k.exact_at(target)
    if wt == 0 or (wt > 0) != (w0 > 0):
        return None  # equilibrium between z and target
    if k.slope == 0:
        return _to_float((target - z) / w0)
    arg = _to_float(k.slope * (target - z) / w0)
    if arg <= -1.0:
        return None
    t = math.log1p(arg) / _to_float(k.slope)
    return t if t > 0 else None


def _advance_closed(p, z, dt: float) -> float:
    k = p.kind
    zf = _to_float(z)
    if isinstance(k, Constant):
        return zf + _to_float(k.value) * dt
    w0 = _to_float(k.exact_at(z))
    a = _to_float(k.slope)
    if a == 0:
        return zf + w0 * dt
    return zf + w0 * math.expm1(a * dt) / a


def _integrate_analytic(p, z: float, up: bool, budget: float, rtol: float, atol: float, max_steps: int):
    """Integrate inside an analytic piece; returns (t_used, z_end, hit_boundary, err)."""
    spec = p.kind.spec
    target = p.hi if up else p.lo
    events = None
    if not isinstance(target, float):
        tf = float(target)

        def hit(t, y):
            return y[0] - tf

        hit.terminal = True
        hit.direction = 1 if up else -1
        events = [hit]
    sol = solve_ivp(
        lambda t, y: [spec.value(y[0])],
        (0.0, budget),
        [z],
        method="DOP853",
        rtol=rtol,
        atol=atol,
        events=events,
    )
    if sol.status == -1:
        raise ArithmeticError(f"integration failed in {spec.name}: {sol.message}")
    if sol.nfev > max_steps * 12:
        raise ArithmeticError("step budget exceeded")
    err = float(rtol * abs(sol.y[0, -1]) + atol)
    if events is not None and sol.t_events[0].size:
        return float(sol.t_events[0][0]), target, True, err
    return budget, float(sol.y[0, -1]), False, err


def flow(
    f: PiecewiseSource,
    z0,
    t: float,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_steps: int = MAX_STEPS,
    tol: float = DEFAULT_QUAD_TOL,
) -> FlowOutcome:
    """Evolve ``u' = f(u), u(0) = z0`` up to time ``t``."""
    if t < 0:
        raise ValueError("flows run forward in time only")
    z = as_exact(z0)
    if isinstance(z, float):
        raise CoverageError("initial value must be finite")
    i = f.locate(z)
    used = 0.0
    traversed = 0
    err = 0.0
    while True:
        p = f.pieces[i]
        remaining = t - used
        w = p.value(z)
        if w == 0 or remaining <= 0:
            return FlowOutcome("alive", _to_float(z), None, t, traversed, err)
        up = w > 0
        if isinstance(p.kind, Analytic):
            if up and p.hi == math.inf:
                tail, terr = _reciprocal_piece(p, Fraction(z), math.inf, tol)
                if tail <= remaining:
                    return FlowOutcome("blown_up", None, used + tail, t, traversed, err + terr)
            dt, z_new, hit, e = _integrate_analytic(p, _to_float(z), up, remaining, rtol, atol, max_steps)
            err += e
            if not hit:
                return FlowOutcome("alive", z_new, None, t, traversed, err)
            used += dt
            z = z_new
        else:
            dt = _exit_time_closed(p, z, up)
            if dt is None or dt > remaining:
                return FlowOutcome("alive", _advance_closed(p, z, remaining), None, t, traversed, err)
            used += dt
            z = p.hi if up else p.lo
        traversed += 1
        i += 1 if up else -1
        if not 0 <= i < len(f.pieces):
            raise CoverageError(
                f"trajectory from {z0} leaves the covered range at u={z} (time {used})"
            )
        # A sign change across a discontinuity pins the trajectory.
        w_next = f.pieces[i].value(z)
        if w_next == 0 or (w_next > 0) != up:
            return FlowOutcome("alive", _to_float(z), None, t, traversed, err)


def trajectory(f: PiecewiseSource, z0, times: Sequence[float], **kw) -> list[FlowOutcome]:
    return [flow(f, z0, s, **kw) for s in times]


# -- vectorised flow for constant/affine prefixes -------------------------------


@dataclass
class _FP:
    """Float copies of the leading constant/affine pieces, affine ones anchored."""

    lo: np.ndarray
    hi: np.ndarray
    affine: np.ndarray
    w_anchor: np.ndarray
    slope: np.ndarray
    anchor: np.ndarray


def _float_pieces(f: PiecewiseSource) -> _FP:
    ps = f.pieces[: f.float_prefix()]
    if any(isinstance(p.kind, Analytic) for p in ps):
        raise TypeError("vectorised flow needs constant/affine pieces")
    # w = w_anchor + a (z - anchor) with a finite anchor avoids cancellation on tall collars
    anchors = [
        p.lo if not isinstance(p.lo, float) else (p.hi if not isinstance(p.hi, float) else Fraction(0))
        for p in ps
    ]
    return _FP(
        lo=np.array([_to_float(p.lo) for p in ps]),
        hi=np.array([_to_float(p.hi) for p in ps]),
        affine=np.array([isinstance(p.kind, Affine) for p in ps]),
        w_anchor=np.array([_to_float(p.kind.exact_at(a)) for p, a in zip(ps, anchors)]),
        slope=np.array([_to_float(p.kind.slope) if isinstance(p.kind, Affine) else 0.0 for p in ps]),
        anchor=np.array([_to_float(a) for a in anchors]),
    )


_FP_CACHE: dict[int, tuple] = {}


def _fp_for(f: PiecewiseSource) -> _FP:
    hit = _FP_CACHE.get(id(f))
    if hit is not None and hit[0] is f:
        return hit[1]
    fp = _float_pieces(f)
    _FP_CACHE[id(f)] = (f, fp)
    return fp


def flow_array(f: PiecewiseSource, z: np.ndarray, t: float) -> np.ndarray:
    """Closed-form flow applied elementwise; constant/affine sources only.

    Falls back to the scalar ``flow`` when ``f`` has analytic pieces
    (blown-up entries become ``inf``).
    """
    z = np.asarray(z, dtype=float)
    if t == 0:
        return z.copy()
    if any(isinstance(p.kind, Analytic) for p in f.pieces):
        out = np.empty_like(z)
        for j, zj in np.ndenumerate(z):
            r = flow(f, float(zj), t)
            out[j] = r.value if r.alive else math.inf
        return out
    fp = _fp_for(f)
    k = len(fp.lo)
    shape = z.shape
    z = z.ravel().copy()
    if np.any(z < fp.lo[0]) or np.any(z >= fp.hi[k - 1]):
        raise CoverageError("state outside the float-representable range of the source")
    idx = np.searchsorted(fp.lo, z, side="right") - 1
    rem = np.full(z.shape, float(t))
    active = np.ones(z.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(4 * k + 8):
            if not active.any():
                break
            a_idx = np.flatnonzero(active)
            ii = idx[a_idx]
            zz = z[a_idx]
            aff = fp.affine[ii]
            a = fp.slope[ii]
            w = np.where(aff, fp.w_anchor[ii] + a * (zz - fp.anchor[ii]), fp.w_anchor[ii])
            up = w > 0
            target = np.where(up, fp.hi[ii], fp.lo[ii])
            dist = target - zz
            t_const = dist / w
            arg = a * dist / w
            t_aff = np.where(a != 0, np.log1p(arg) / a, dist / w)
            t_exit = np.where(aff, t_aff, t_const)
            t_exit = np.where(np.isfinite(t_exit) & (t_exit > 0) & np.isfinite(target), t_exit, np.inf)
            r = rem[a_idx]
            stop = (w == 0) | (t_exit > r)
            # finish trajectories that stay in their piece
            zs = zz[stop]
            ws, as_, rs = w[stop], a[stop], r[stop]
            aff_s = aff[stop]
            grow = np.where(as_ != 0, np.expm1(as_ * rs) / np.where(as_ != 0, as_, 1.0), rs)
            z[a_idx[stop]] = zs + ws * np.where(aff_s, grow, rs)
            active[a_idx[stop]] = False
            # move the others onto the boundary and into the next piece
            mv = ~stop
            j = a_idx[mv]
            z[j] = target[mv]
            rem[j] = r[mv] - t_exit[mv]
            new_i = ii[mv] + np.where(up[mv], 1, -1)
            if np.any(new_i >= k) or np.any(new_i < 0):
                raise CoverageError("trajectory left the float-representable range of the source")
            idx[j] = new_i
            aff_n = fp.affine[new_i]
            w_n = np.where(aff_n, fp.w_anchor[new_i] + fp.slope[new_i] * (z[j] - fp.anchor[new_i]), fp.w_anchor[new_i])
            pinned = (w_n == 0) | ((w_n > 0) != up[mv])
            active[j[pinned]] = False
        else:
            raise RuntimeError("vectorised flow did not settle")
    return z.reshape(shape)


# -- blow-up time ------------------------------------------------------------


def _tail_evidence(p, x) -> tuple[list[float], float, str]:
    """Partial sums over a divergent infinite last piece."""
    k = p.kind
    sums, acc = [], 0.0
    if isinstance(k, Constant) or (isinstance(k, Affine) and k.slope == 0):
        c = _to_float(k.exact_at(x))
        # unit-time cells: length c each
        for _ in range(10):
            acc += 1.0
            sums.append(acc)
        return sums, 1.0, f"constant tail {c}: every interval of length {c} takes unit time"
    if isinstance(k, Affine):
        a = _to_float(k.slope)
        bound = math.log(2.0) / a
        for _ in range(10):
            acc += bound
            sums.append(acc)
        return sums, bound, "affine tail: each doubling of f costs ln(2)/slope"
    spec = k.spec
    F = spec.recip_antiderivative
    xs = [max(float(x), 1.0) + 1.0]
    for _ in range(10):
        xs.append(xs[-1] ** 2 if xs[-1] < 1e150 else xs[-1] * 1e10)
    contribs = [F(b) - F(a) for a, b in zip(xs, xs[1:])]
    for c in contribs:
        acc += c
        sums.append(acc)
    return sums, min(contribs), f"{spec.name}: reciprocal antiderivative is unbounded"


def blowup_time(f: PiecewiseSource, z0, tol: float = DEFAULT_QUAD_TOL) -> BlowupTimeResult:
    """Blow-up time of the trajectory from ``z0``, certified piece by piece."""
    z = as_exact(z0)
    zf = _to_float(z)
    i = f.locate(z)
    w0 = f(z)
    if w0 < 0:
        raise PositivityError(f"f({zf}) = {w0} < 0")
    if w0 == 0:
        return BlowupTimeResult(
            "infinite", zf, partial_sums=(math.inf,), certificate="f(z0) = 0: stationary point"
        )
    total, err = [], 0.0
    sums, contributions, idx = [], [], []
    for j, p in enumerate(f.pieces[i:], start=i):
        a = max(z, p.lo)
        if p.hi == math.inf:
            k = p.kind
            if isinstance(k, Analytic):
                spec = k.spec
                v, e = _reciprocal_piece(p, a, math.inf, tol)
                if math.isfinite(v) and (spec.recip_limit is not None or e <= tol):
                    total.append(v)
                    err += e
                    T = math.fsum(total)
                    return BlowupTimeResult(
                        "finite", zf, T=T, err=err, partial_sums=tuple(sums + [T]),
                        contributions=tuple(contributions + [(_to_float(a), v)]),
                        piece_indices=tuple(idx + [j]),
                        certificate=f"closed-form tail of {spec.name}",
                    )
                if math.isinf(v) and spec.recip_limit == math.inf:
                    ev, bound, why = _tail_evidence(p, a)
                    base = math.fsum(total)
                    return BlowupTimeResult(
                        "infinite", zf, partial_sums=tuple(sums + [base + s for s in ev]),
                        contributions=tuple(contributions), piece_indices=tuple(idx),
                        piece_bound=bound, certificate=why,
                    )
                return BlowupTimeResult(
                    "inconclusive", zf, lower_bound=math.fsum(total), partial_sums=tuple(sums),
                    contributions=tuple(contributions), piece_indices=tuple(idx),
                    certificate="tail quadrature did not converge",
                )
            v, _ = _reciprocal_piece(p, a, math.inf, tol)  # raises on negative affine tails
            ev, bound, why = _tail_evidence(p, a)
            base = math.fsum(total)
            return BlowupTimeResult(
                "infinite", zf, partial_sums=tuple(sums + [base + s for s in ev]),
                contributions=tuple(contributions), piece_indices=tuple(idx),
                piece_bound=bound, certificate=why,
            )
        v, e = _reciprocal_piece(p, a, p.hi, tol)
        total.append(v)
        err += e
        contributions.append((_to_float(a), v))
        idx.append(j)
        sums.append(math.fsum(total))
    gen = f.generator
    if gen is not None and hasattr(gen, "reciprocal_lower_bound"):
        bound, why = gen.reciprocal_lower_bound()
        if bound > 0:
            return BlowupTimeResult(
                "infinite", zf, partial_sums=tuple(sums), contributions=tuple(contributions),
                piece_indices=tuple(idx),
                piece_bound=float(bound), certificate=why,
            )
    return BlowupTimeResult(
        "inconclusive", zf, lower_bound=math.fsum(total), partial_sums=tuple(sums),
        contributions=tuple(contributions), piece_indices=tuple(idx),
        certificate="source truncated without a tail rule",
    )


def invert_blowup_time(f: PiecewiseSource, eps: float, tol: float = 1e-12) -> float:
    """Initial value ``z`` with ``T(z) = eps``, by bisection on the decreasing map ``T``."""
    if eps <= 0:
        raise ValueError("eps must be positive")

    def T(z: float) -> float:
        r = blowup_time(f, z, tol=min(tol, DEFAULT_QUAD_TOL))
        if r.finite:
            return r.T
        if r.infinite:
            return math.inf
        raise NoBlowupError(f"blow-up time at z={z} is inconclusive")

    lo_cov = _to_float(f.lo)
    start = 1.0 if f.covers(1.0) else (lo_cov + 1.0 if math.isfinite(lo_cov) else 0.0)
    if not f.covers(start):
        start = _to_float(f.pieces[0].hi) - 1.0
    z_lo = start
    span = 1.0
    while T(z_lo) < eps:
        nxt = z_lo - span
        if nxt < lo_cov or (nxt == lo_cov and not f.covers(nxt)):
            nxt = (z_lo + lo_cov) / 2 if math.isfinite(lo_cov) else nxt
            if nxt == z_lo:
                raise NoBlowupError("cannot bracket eps from below")
        z_lo = nxt
        span *= 2
    z_hi = z_lo + 1.0
    span = 1.0
    for _ in range(BISECTION_CAP):
        if T(z_hi) <= eps:
            break
        span *= 2
        z_hi = z_lo + span
        if not f.covers(z_hi):
            raise NoBlowupError(f"T(z) stays above eps={eps} on the covered range")
    else:
        raise NoBlowupError(f"no finite blow-up time below eps={eps}")
    if T(z_hi) == math.inf:
        raise NoBlowupError("source has no finite blow-up times")
    for _ in range(BISECTION_CAP):
        mid = 0.5 * (z_lo + z_hi)
        if mid <= z_lo or mid >= z_hi:
            break
        if T(mid) > eps:
            z_lo = mid
        else:
            z_hi = mid
    z = 0.5 * (z_lo + z_hi)
    if abs(T(z) - eps) > tol * max(1.0, eps) and abs(T(z_lo) - T(z_hi)) > tol:
        log.warning("bisection ended with |T(z)-eps| = %g", abs(T(z) - eps))
    return z


# -- comparison principle ------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeReport:
    times: tuple
    lower: tuple
    middle: tuple
    upper: tuple
    max_violation: float
    complete: bool
    blown_at: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def comparison_envelope(
    f: PiecewiseSource, x0, y0, z0, t_grid: Sequence[float], **kw
) -> EnvelopeReport:
    """Evaluate three ordered flows on ``t_grid`` and report the worst ordering violation."""
    if not (x0 <= y0 <= z0):
        raise ValueError("initial data must be ordered x0 <= y0 <= z0")
    times, xs, ys, zs = [], [], [], []
    worst = 0.0
    for t in sorted(t_grid):
        outs = [flow(f, v, t, **kw) for v in (x0, y0, z0)]
        if not all(o.alive for o in outs):
            blown = min(o.blowup_time for o in outs if not o.alive)
            return EnvelopeReport(tuple(times), tuple(xs), tuple(ys), tuple(zs), worst, False, blown)
        x, y, z = (o.value for o in outs)
        worst = max(worst, x - y, y - z, 0.0)
        times.append(t)
        xs.append(x)
        ys.append(y)
        zs.append(z)
    return EnvelopeReport(tuple(times), tuple(xs), tuple(ys), tuple(zs), worst, True)


def example_d_envelope(n: int, t) -> tuple:
    """Bounds on the example-d flow from ``phi_n`` for ``0 <= t <= 1/2``.

    Lower: ``phi_n + t (phi_n^2 - phi_n) / 2``; upper: ``phi_n + t (phi_n^2 - phi_n)``.
    Exact rationals below the log-domain threshold, ``LogReal`` above it.
    """
    seq = PhiSequence(n)
    if n < EXACT_INDEX_LIMIT:
        t = Fraction(t)
        p = seq.exact
        return p + t * (p * p - p) / 2, p + t * (p * p - p)
    t = float(t)
    lower = seq.poly_log({1: 1 - t / 2, 2: t / 2})
    upper = seq.poly_log({1: 1 - t, 2: t})
    return lower, upper
