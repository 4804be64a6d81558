"""Method-of-lines solver for ``u_t - u_xx = f(u)`` on (0, 1), zero Dirichlet data.

Time stepping is Strang splitting: half a step of the exact kinetic flow,
one theta-method diffusion step, another half reaction step.  Because the
reaction sub-steps are the closed-form kinetic flow, the only splitting
error comes from the non-commutation of the two operators.

Unbounded block data are handled by truncation ladders ``min(psi, M)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, CoverageError, InstabilityError
from .kinetics import flow_array
from .logdomain import PhiSequence
from .piecewise_source import PiecewiseSource
from .toy_pde import Block, BlockFunction

log = logging.getLogger(__name__)

OVERFLOW_GUARD = 1e12


# -- mesh --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    grading: str = "uniform"
    ratio: Optional[float] = None
    finest: Optional[float] = None
    h_max: Optional[float] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or len(x) < 5:
            raise ConfigError("mesh needs at least 3 interior nodes")
        if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise ConfigError("mesh nodes must increase strictly from 0 to 1")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, n_nodes: int) -> "Mesh":
        return cls(np.linspace(0.0, 1.0, n_nodes), "uniform")

    @classmethod
    def geometric(cls, ratio: float = 0.7, finest: float = 2.0**-36, h_max: float = 1 / 64) -> "Mesh":
        """Cells grow by ``1/ratio`` away from 0 until they reach ``h_max``."""
        if not 0 < ratio < 1:
            raise ConfigError("ratio must lie in (0, 1)")
        if not 0 < finest <= h_max < 0.5:
            raise ConfigError("need 0 < finest <= h_max < 1/2")
        xs, h = [0.0], finest
        while h < h_max and xs[-1] + h < 1.0:
            xs.append(xs[-1] + h)
            h /= ratio
        rest = 1.0 - xs[-1]
        k = max(1, math.ceil(rest / h_max))
        xs.extend(xs[-1] + rest * np.arange(1, k + 1) / k)
        xs[-1] = 1.0
        return cls(np.array(xs), "geometric", ratio, finest, h_max)

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_interior(self) -> int:
        return len(self.nodes) - 2

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    def to_dict(self) -> dict:
        if self.grading == "uniform":
            return {"grading": "uniform", "n_nodes": len(self.nodes)}
        if self.grading == "geometric":
            return {"grading": "geometric", "ratio": self.ratio, "finest": self.finest, "h_max": self.h_max}
        return {"grading": "custom", "nodes": self.nodes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        g = d.get("grading", "uniform")
        if g == "uniform":
            return cls.uniform(int(d["n_nodes"]))
        if g == "geometric":
            return cls.geometric(float(d["ratio"]), float(d["finest"]), float(d["h_max"]))
        return cls(np.array(d["nodes"], dtype=float), "custom")

    def __eq__(self, other) -> bool:
        return isinstance(other, Mesh) and self.grading == other.grading and np.array_equal(self.nodes, other.nodes)

    __hash__ = None


def laplacian_bands(mesh: Mesh) -> tuple:
    """Sub-, main and super-diagonal of the centred 3-point Laplacian on interior nodes."""
    h = mesh.h
    hl, hr = h[:-1], h[1:]
    w = 2.0 / (hl + hr)
    return w / hl, -w * (1 / hl + 1 / hr), w / hr


def laplacian_matrix(mesh: Mesh) -> np.ndarray:
    lo, d, up = laplacian_bands(mesh)
    return np.diag(d) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)


def stability_bound(mesh: Mesh, theta: float) -> float:
    """Largest ``dt`` keeping the explicit part of the heat step nonnegative."""
    if theta >= 1:
        return math.inf
    h = mesh.h
    return 1.0 / ((1 - theta) * float(np.max(2.0 / (h[:-1] * h[1:]))))


def heat_step_matrices(mesh: Mesh, dt: float, theta: float) -> tuple:
    """Dense ``(I - theta dt A, I + (1-theta) dt A)``; intended for checks, not stepping."""
    A = laplacian_matrix(mesh)
    eye = np.eye(A.shape[0])
    return eye - theta * dt * A, eye + (1 - theta) * dt * A


def is_m_matrix(B: np.ndarray, tol: float = 0.0) -> bool:
    """Z-matrix with positive diagonal and weak row diagonal dominance."""
    off = B - np.diag(np.diag(B))
    if np.any(off > tol) or np.any(np.diag(B) <= 0):
        return False
    return bool(np.all(np.diag(B) + off.sum(axis=1) >= -tol))


class HeatStepper:
    """Theta-method step for ``u_t = u_xx`` with zero boundary values."""

    def __init__(self, mesh: Mesh, dt: float, theta: float):
        self.mesh, self.dt, self.theta = mesh, dt, theta
        lo, d, up = laplacian_bands(mesh)
        self._bands = (lo, d, up)
        n = len(d)
        ab = np.zeros((3, n))
        ab[0, 1:] = -theta * dt * up[:-1]
        ab[1] = 1 - theta * dt * d
        ab[2, :-1] = -theta * dt * lo[1:]
        self._ab = ab

    def apply_laplacian(self, u: np.ndarray) -> np.ndarray:
        lo, d, up = self._bands
        out = d * u
        out[1:] += lo[1:] * u[:-1]
        out[:-1] += up[:-1] * u[1:]
        return out

    def __call__(self, u: np.ndarray) -> np.ndarray:
        rhs = u + (1 - self.theta) * self.dt * self.apply_laplacian(u) if self.theta < 1 else u
        return solve_banded((1, 1), self._ab, rhs, check_finite=False)


def heat_step(u: np.ndarray, mesh: Mesh, dt: float, theta: float = 1.0) -> np.ndarray:
    return HeatStepper(mesh, dt, theta)(np.asarray(u, dtype=float))


# -- data --------------------------------------------------------------------


def truncate(psi: BlockFunction, M) -> BlockFunction:
    """``min(psi, M)`` as a finite block function.

    For the tower data every block with ``phi_n >= M`` is clipped, and those
    blocks beyond the materialised ones fill ``[0, phi_N^-4)``, so the
    result is exact: blocks up to the first index whose value reaches ``M``
    are kept individually and the rest collapse into one block at ``M``.
    """
    if isinstance(M, float) and not math.isfinite(M):
        raise ConfigError("truncation level must be finite")
    M = Fraction(M)
    if M <= 0:
        raise ConfigError("truncation level must be positive")
    if not psi.is_tower:
        blocks = tuple(Block(b.lo, b.hi, min(b.value, M)) for b in psi.blocks)
        return BlockFunction(blocks, psi.length, psi.generator)
    n_top = psi.n_max
    while PhiSequence(n_top).exact < M:
        n_top += 1
    blocks = [Block(Fraction(1, p**8), Fraction(1, p**4), min(Fraction(p), M))
              for p in (PhiSequence(n).exact for n in range(n_top + 1))]
    edge = Fraction(1, PhiSequence(n_top + 1).exact ** 4)
    blocks.append(Block(Fraction(0), edge, M))
    return BlockFunction(tuple(blocks), psi.length, {"name": "example_d_truncated", "n_max": n_top, "M": str(M)})


def project(psi: Union[BlockFunction, Callable, np.ndarray], mesh: Mesh) -> np.ndarray:
    """Interior nodal values: dual-cell averages of block data, samples of callables."""
    if isinstance(psi, np.ndarray):
        if psi.shape != (mesh.n_interior,):
            raise ConfigError("initial array must hold one value per interior node")
        return psi.astype(float).copy()
    if callable(psi) and not isinstance(psi, BlockFunction):
        return np.asarray(psi(mesh.interior), dtype=float).copy()
    if psi.is_tower:
        raise ConfigError("unbounded tower data: truncate before solving")
    if psi.length != 1:
        raise ConfigError("the solver domain is (0, 1)")
    x = mesh.nodes
    mid = np.concatenate(([0.0], 0.5 * (x[:-1] + x[1:]), [1.0]))
    a, b = mid[1:-2], mid[2:-1]  # dual cells of interior nodes
    mass = np.zeros(mesh.n_interior)
    for blk in psi.blocks:
        lo, hi, v = float(blk.lo), float(blk.hi), float(blk.value)
        if v == 0 or hi <= lo:
            continue
        mass += v * np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)
    return mass / (b - a)


def exact_block_norms(psi: BlockFunction, qs: Sequence[float]) -> dict:
    out = {}
    for q in qs:
        if float(q).is_integer():
            s = sum((b.value ** int(q) * b.measure for b in psi.blocks), Fraction(0))
            out[f"L{_qname(q)}"] = float(s) ** (1.0 / q)
        else:
            out[f"L{_qname(q)}"] = math.fsum(float(b.value) ** q * float(b.measure) for b in psi.blocks) ** (1.0 / q)
    out["sup"] = float(max((b.value for b in psi.blocks), default=0))
    return out


def _qname(q: float) -> str:
    return str(int(q)) if float(q).is_integer() else repr(float(q))


def mesh_norms(u: np.ndarray, mesh: Mesh, qs: Sequence[float]) -> dict:
    """Trapezoid L^q norms of the interior values padded with zero boundaries."""
    full = np.concatenate(([0.0], np.abs(u), [0.0]))
    h = mesh.h
    out = {}
    for q in qs:
        g = full**q
        out[f"L{_qname(q)}"] = float(np.sum(0.5 * h * (g[:-1] + g[1:]))) ** (1.0 / q)
    out["sup"] = float(full.max())
    return out


def l2_product(u: np.ndarray, v: np.ndarray, mesh: Mesh) -> float:
    full = np.concatenate(([0.0], u * v, [0.0]))
    return float(np.sum(0.5 * mesh.h * (full[:-1] + full[1:])))


# -- configuration and runs --------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    theta: float = 0.5
    truncation: Optional[float] = None
    horizon: float = 0.1
    norms: tuple = (2,)
    save_every: int = 10
    overflow: float = OVERFLOW_GUARD
    max_halvings: int = 6
    guard_rtol: float = 1e-9

    def __post_init__(self) -> None:
        object.__setattr__(self, "norms", tuple(self.norms))
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 0.5 <= self.theta <= 1:
            raise ConfigError("theta must lie in [1/2, 1]")
        if self.truncation is not None and not (0 < self.truncation < math.inf):
            raise ConfigError("truncation must be positive and finite")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be nonnegative")
        if any(q < 1 for q in self.norms):
            raise ConfigError("norm exponents must be >= 1")
        if self.save_every < 1:
            raise ConfigError("save_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norms"] = list(self.norms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_json(self, mesh: Optional[Mesh] = None) -> str:
        doc = {"solver": self.to_dict()}
        if mesh is not None:
            doc["mesh"] = mesh.to_dict()
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> tuple:
        doc = json.loads(text)
        mesh = Mesh.from_dict(doc["mesh"]) if "mesh" in doc else None
        return cls.from_dict(doc["solver"]), mesh


@dataclass
class RDState:
    time: float
    values: np.ndarray

    def full(self) -> np.ndarray:
        """Nodal values including the two zero boundary entries."""
        return np.concatenate(([0.0], self.values, [0.0]))


@dataclass
class RDRun:
    mesh: Mesh
    cfg: SolverConfig
    times: np.ndarray
    norms: dict
    states: list
    blown_up: bool = False
    blowup_time: Optional[float] = None
    blowup_reason: str = ""
    halvings: int = 0
    initial_exact_norms: Optional[dict] = None

    @property
    def columns(self) -> list:
        return ["t"] + [f"L{_qname(q)}" for q in self.cfg.norms] + ["sup"]

    @property
    def final(self) -> RDState:
        return self.states[-1]

    def state_at(self, t: float) -> Optional[RDState]:
        for s in self.states:
            if math.isclose(s.time, t, rel_tol=1e-12, abs_tol=1e-15):
                return s
        return None

    def rows(self) -> list:
        return [[self.times[i]] + [self.norms[c][i] for c in self.columns[1:]] for i in range(len(self.times))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows():
                w.writerow([format(float(v), ".17g") for v in r])

    def summary(self) -> dict:
        return {
            "blown_up": self.blown_up,
            "blowup_time": self.blowup_time,
            "blowup_reason": self.blowup_reason,
            "halvings": self.halvings,
            "final_time": float(self.times[-1]),
            "final": {c: float(self.norms[c][-1]) for c in self.columns[1:]},
            "initial_mesh_norms": {c: float(self.norms[c][0]) for c in self.columns[1:]},
            "initial_exact_norms": self.initial_exact_norms,
            "config": self.cfg.to_dict(),
            "mesh": self.mesh.to_dict(),
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["trace"] = {"t": self.times.tolist(), **{c: np.asarray(self.norms[c]).tolist() for c in self.columns[1:]}}
        d["states"] = [{"t": s.time, "values": s.full().tolist()} for s in self.states]
        return d


def solve(
    f: PiecewiseSource,
    psi0: Union[BlockFunction, Callable, np.ndarray],
    cfg: SolverConfig,
    mesh: Mesh,
) -> RDRun:
    """Advance to ``cfg.horizon``; blow-up ends the run early with a report."""
    exact = None
    if isinstance(psi0, BlockFunction):
        if cfg.truncation is not None:
            psi0 = truncate(psi0, cfg.truncation)
        exact = exact_block_norms(psi0, cfg.norms)
    u = project(psi0, mesh)
    if not np.all(np.isfinite(u)):
        raise ConfigError("initial data must be finite")

    dt0 = cfg.dt
    heat = {}

    def stepper(dt):
        if dt not in heat:
            heat[dt] = HeatStepper(mesh, dt, cfg.theta)
        return heat[dt]

    cols = [f"L{_qname(q)}" for q in cfg.norms] + ["sup"]
    times = [0.0]
    trace = {c: [v] for c, v in mesh_norms(u, mesh, cfg.norms).items()}
    states = [RDState(0.0, u.copy())]
    t, k, halvings = 0.0, 0, 0
    blown, bt, reason = False, None, ""
    T = cfg.horizon

    def one_step(u, dt):
        v = flow_array(f, u, dt / 2)
        if not np.all(np.isfinite(v)):
            return v
        v = stepper(dt)(v)
        return flow_array(f, v, dt / 2)

    while t < T * (1 - 1e-14) and not blown:
        dt = min(dt0, T - t)
        try:
            sup_bound = float(flow_array(f, np.array([u.max(initial=0.0)]), dt)[0])
            new = one_step(u, dt)
            level = 0
            while new.max(initial=0.0) > sup_bound + cfg.guard_rtol * max(1.0, abs(sup_bound)):
                level += 1
                if level > cfg.max_halvings:
                    raise InstabilityError(
                        f"step growth exceeds the kinetic bound at t={t:.6g}; reduce dt below {dt / 2**level:.3g}"
                    )
                sub = dt / 2**level
                new = u
                for _ in range(2**level):
                    new = one_step(new, sub)
            halvings += level
        except CoverageError as exc:
            blown, bt, reason = True, t, f"state left the representable range ({exc})"
            break
        if not np.all(np.isfinite(new)) or new.max(initial=0.0) > cfg.overflow:
            blown, bt, reason = True, t + dt, f"overflow guard {cfg.overflow:g} exceeded"
            break
        u, t, k = new, t + dt, k + 1
        if abs(T - t) < 1e-12 * max(1.0, T):
            t = T
        times.append(t)
        for c, v in mesh_norms(u, mesh, cfg.norms).items():
            trace[c].append(v)
        if k % cfg.save_every == 0 or t == T:
            states.append(RDState(t, u.copy()))
    if not blown and states[-1].time != t:
        states.append(RDState(t, u.copy()))
    if blown:
        log.info("blow-up report at t=%g: %s", bt, reason)
    return RDRun(
        mesh, cfg, np.array(times), {c: np.array(trace[c]) for c in cols}, states,
        blown, bt, reason, halvings, exact,
    )


# -- checks ------------------------------------------------------------------


@dataclass(frozen=True)
class SupersolutionReport:
    max_violation: float
    max_relative_violation: float
    worst_time: Optional[float]
    checked: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def supersolution_check(run: RDRun, f: PiecewiseSource, tol: float = 1e-6) -> SupersolutionReport:
    """Compare ``sup u(t)`` with the spatially constant kinetic flow from ``sup u(0)``."""
    if run.blown_up:
        raise ValueError("run ended with a blow-up report")
    s0 = float(run.norms["sup"][0])
    ts = run.times
    bounds = np.array([flow_array(f, np.array([s0]), float(t))[0] for t in ts])
    viol = np.maximum(run.norms["sup"] - bounds, 0.0)
    i = int(np.argmax(viol))
    rel = viol / np.maximum(1.0, np.abs(bounds))
    return SupersolutionReport(float(viol[i]), float(rel.max()), float(ts[i]) if viol[i] > 0 else None, len(ts), tol)


@dataclass
class LadderReport:
    levels: list
    runs: list
    blowup_flags: list
    monotone: bool
    max_order_violation: float
    sup_l2: list
    increments: list
    stable_increments: list
    increments_decreasing: bool

    @property
    def ok(self) -> bool:
        return not any(self.blowup_flags) and self.monotone and self.increments_decreasing

    def to_dict(self) -> dict:
        return {
            "levels": [float(m) for m in self.levels],
            "blowup_flags": self.blowup_flags,
            "monotone": self.monotone,
            "max_order_violation": self.max_order_violation,
            "sup_l2": self.sup_l2,
            "increments": self.increments,
            "stable_increments": self.stable_increments,
            "increments_decreasing": self.increments_decreasing,
            "ok": self.ok,
            "runs": [r.summary() for r in self.runs],
        }


def _ladder_job(args):
    f, psi, cfg, mesh = args
    return solve(f, psi, cfg, mesh)


def truncation_ladder(
    f: PiecewiseSource,
    psi: BlockFunction,
    levels: Sequence,
    cfg: SolverConfig,
    mesh: Mesh,
    jobs: int = 1,
    order_tol: float = 1e-9,
) -> LadderReport:
    """One run per truncation level, then the comparison and convergence evidence.

    ``increments`` are differences of the per-level ``sup_t ||u||_2``.
    Those differences can sit at rounding level, so ``stable_increments``
    also reports ``max_t (||u_hi|| - ||u_lo||)`` computed from
    ``int (u_hi - u_lo)(u_hi + u_lo)``; the decreasing test uses the latter.
    """
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must increase")
    tasks = [(f, psi, replace(cfg, truncation=float(M)), mesh) for M in levels]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_ladder_job, tasks))
    else:
        runs = [_ladder_job(t) for t in tasks]
    flags = [r.blown_up for r in runs]
    worst = 0.0
    stable = []
    for lo_run, hi_run in zip(runs, runs[1:]):
        best = -math.inf
        for s in lo_run.states:
            o = hi_run.state_at(s.time)
            if o is None:
                continue
            worst = max(worst, float(np.max(s.values - o.values, initial=0.0)))
            num = l2_product(o.values - s.values, o.values + s.values, mesh)
            den = math.sqrt(l2_product(o.values, o.values, mesh)) + math.sqrt(l2_product(s.values, s.values, mesh))
            if s.time > 0 and den > 0:
                best = max(best, num / den)
        stable.append(best)
    sup_l2 = [float(np.max(r.norms["L2"][1:])) if len(r.times) > 1 else float(r.norms["L2"][0]) for r in runs]
    inc = [b - a for a, b in zip(sup_l2, sup_l2[1:])]
    decreasing = all(b < a for a, b in zip(stable, stable[1:]))
    return LadderReport(levels, runs, flags, worst <= order_tol, worst, sup_l2, inc, stable, decreasing)


# -- spectral oracle ---------------------------------------------------------


def _block_sine_coeffs(psi: BlockFunction, k: np.ndarray) -> np.ndarray:
    """``2 int psi sin(k pi x)`` using ``cos a - cos b = 2 sin((a+b)/2) sin((b-a)/2)``."""
    c = np.zeros(len(k))
    kp = k * np.pi
    for b in psi.blocks:
        lo, hi, v = float(b.lo), float(b.hi), float(b.value)
        if v == 0:
            continue
        c += 2 * v * 2 * np.sin(kp * (lo + hi) / 2) * np.sin(kp * (hi - lo) / 2) / kp
    return c


def heat_spectral_solution(psi: BlockFunction, t: float, n_modes: int = 4000):
    """Exact heat flow of block data as a sine series: ``(coeffs, l2_norm)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    k = np.arange(1, n_modes + 1, dtype=float)
    c = _block_sine_coeffs(psi, k) * np.exp(-(k**2) * np.pi**2 * t)
    return c, math.sqrt(math.fsum(c**2 / 2))


def heat_spectral_increment(psi_lo: BlockFunction, psi_hi: BlockFunction, t: float, n_modes: int = 4000) -> float:
    """``||S(t) psi_hi||_2 - ||S(t) psi_lo||_2`` from the difference data, free of cancellation."""
    k = np.arange(1, n_modes + 1, dtype=float)
    decay = np.exp(-(k**2) * np.pi**2 * t)
    a = _block_sine_coeffs(psi_lo, k) * decay
    b = _block_sine_coeffs(psi_hi, k) * decay
    diff = _difference_coeffs(psi_lo, psi_hi, k) * decay
    num = math.fsum(diff * (a + b) / 2)
    return num / (math.sqrt(math.fsum(a**2 / 2)) + math.sqrt(math.fsum(b**2 / 2)))


def _difference_coeffs(psi_lo: BlockFunction, psi_hi: BlockFunction, k: np.ndarray) -> np.ndarray:
    # blockwise difference on the common refinement of the two partitions
    cuts = sorted({b.lo for b in psi_lo.blocks} | {b.hi for b in psi_lo.blocks}
                  | {b.lo for b in psi_hi.blocks} | {b.hi for b in psi_hi.blocks})

    def value(psi, x):
        for b in psi.blocks:
            if b.lo <= x < b.hi:
                return b.value
        return Fraction(0)

    diff_blocks = []
    for lo, hi in zip(cuts, cuts[1:]):
        d = value(psi_hi, lo) - value(psi_lo, lo)
        if d != 0:
            diff_blocks.append(Block(lo, hi, abs(d)) if d > 0 else None)
            if d < 0:
                raise ValueError("data are not ordered")
    return _block_sine_coeffs(BlockFunction(tuple(diff_blocks), psi_hi.length), k)
