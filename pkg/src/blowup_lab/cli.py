"""``blowup-lab``: scenario reproduction and exploration tools.

Every command writes its report under ``--out-dir`` together with a
``manifest.json`` (artifact hashes plus a hash of the resolved
parameters).  The exit status is 0 exactly when every assertion of the
command passed; otherwise the JSON report carries a ``failures`` list.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from . import export
from .conditions import (
    growth_condition_check,
    linear_growth_constant,
    minimal_growth_exponent,
    no_blowup_classify,
    uniform_lipschitz_bound,
    wellposedness_window,
)
from .errors import BlowupLabError, ConfigError, NoBlowupError
from .kinetics import blowup_time, flow, invert_blowup_time
from .piecewise_source import PiecewiseSource, build_example_d, load_source
from .rd_solver import Mesh, SolverConfig, solve, supersolution_check, truncation_ladder
from .toy_pde import (
    BlockFunction,
    blowup_onset_measure,
    constant_block,
    example_d_psi,
    instantaneous_blowup_certificate,
    lipschitz_bound_check,
    lp_norm_block,
    powerlaw_norm_example_c,
    random_block_function,
    verify_divergence,
)

log = logging.getLogger("blowup_lab")

SCENARIOS = ("example-a", "example-b", "example-c", "example-d", "example-e")
TOOLS = ("blowup-time", "classify", "growth-check", "rd-run")


def load_defaults() -> dict:
    return json.loads(resources.files("blowup_lab").joinpath("defaults.json").read_text())


@dataclass
class Report:
    """Results plus named assertions; tables become CSV files."""

    command: str
    params: dict
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    checks: list = field(default_factory=list)

    def check(self, name: str, ok: bool, detail="") -> bool:
        self.checks.append({"name": name, "ok": bool(ok), "detail": detail})
        return ok

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks)

    def to_dict(self) -> dict:
        d = {"command": self.command, "params": self.params, "results": self.results,
             "checks": self.checks, "ok": self.ok}
        if not self.ok:
            d["failures"] = [c for c in self.checks if not c["ok"]]
        return d


def _source(name: str, n_max: int) -> PiecewiseSource:
    return build_example_d(n_max) if name == "example-d" else load_source(name)


def _pmap(fn: Callable, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _mesh(P: dict) -> Mesh:
    if P.get("nodes"):
        return Mesh.uniform(int(P["nodes"]))
    return Mesh.geometric(P["mesh_ratio"], P["finest_cell"], P["h_max"])


# -- scenarios ---------------------------------------------------------------


def run_example_a(P: dict) -> Report:
    R = Report("example-a", P)
    f = _source(P["source"], P["n_max"])
    C = linear_growth_constant(f)
    if C is None:
        raise ConfigError(f"source {P['source']!r} has no uniform linear growth bound")
    rng = np.random.default_rng(P["seed"])
    rows, worst = [], -math.inf
    for i in range(int(P["samples"])):
        psi = random_block_function(rng)
        for t in P["t"]:
            for p in P["p"]:
                c = lipschitz_bound_check(f, psi, t, p)
                rows.append([i, float(t), float(p), c.norm, c.bound])
                worst = max(worst, c.norm - c.bound)
    R.results = {"C": C, "lipschitz": uniform_lipschitz_bound(f), "max_excess": worst, "cases": len(rows)}
    R.tables["bound"] = (["sample", "t", "p", "norm", "bound"], rows)
    R.check("gronwall_bound", all(r[3] <= r[4] * (1 + 1e-12) for r in rows), f"max norm - bound = {worst:.3g}")
    return R


def _onset_job(args):
    f, psi, t = args
    return blowup_onset_measure(f, psi, t)


def run_example_b(P: dict) -> Report:
    R = Report("example-b", P)
    f = _source(P["source"], P["n_max"])
    psi = example_d_psi(P["n_max"])
    ts = sorted(float(t) for t in P["t"])
    res = _pmap(_onset_job, [(f, psi, t) for t in ts], P["jobs"])
    rows = [[t, r.measure, r.level if r.level is not None else math.inf] for t, r in zip(ts, res)]
    R.results = {"onset": [dict(t=t, **r.to_dict()) for t, r in zip(ts, res)]}
    R.tables["onset"] = (["t", "measure", "level"], rows)
    R.check("pointwise_blowup", all(r.pointwise_blowup for r in res))
    R.check("positive_measure", all(r.measure > 0 for r in res), "unbounded data reach every level")
    R.check("monotone_in_t", all(b.measure >= a.measure for a, b in zip(res, res[1:])))
    return R


def run_example_c(P: dict) -> Report:
    R = Report("example-c", P)
    r = float(P["r"])
    f = _source("example-c", P["n_max"])
    out, rows = {}, []
    for p in P["p"]:
        p = float(p)
        T = math.log(1 / (r * p))
        grid = np.linspace(0.0, T, int(P["points"]), endpoint=False)
        vals = []
        for t in grid:
            pn = powerlaw_norm_example_c(r, p, float(t))
            e = r * p * math.exp(t)
            q, _ = quad(lambda x, e=e: x ** (-e), 0, 1, limit=200)
            vals.append((pn.value, q))
            rows.append([p, float(t), pn.value, q])
        at_T = powerlaw_norm_example_c(r, p, T)
        rows.append([p, T, math.inf, math.inf])
        out[str(p)] = {"blowup_time": T, "signals_at_T": at_T.blown_up}
        R.check(f"blowup_signal_p{p:g}", at_T.blown_up and abs(at_T.blowup_time - T) <= 1e-12)
        rel = max(abs(a / b - 1) for a, b in vals)
        R.check(f"quadrature_match_p{p:g}", rel <= 1e-6, f"max relative gap {rel:.2e}")
    # kinetic flow of U ln U against z0**(e**t); sampled points depend on the seed
    rng = np.random.default_rng(P["seed"])
    z0s = list(P["z0"]) + list(1 + 20 * rng.random(3))
    errs = []
    for z0 in z0s:
        for t in P["t"]:
            v = flow(f, float(z0), float(t)).value
            errs.append(abs(v / float(z0) ** math.exp(t) - 1))
    out["flow_max_rel_err"] = max(errs)
    R.check("flow_closed_form", max(errs) <= 1e-8, f"max relative error {max(errs):.2e}")
    R.results = out
    R.tables["norm_trace"] = (["p", "t", "norm_pp", "quadrature"], rows)
    return R


def _cert_job(args):
    f, psi, t, n_probe = args
    return instantaneous_blowup_certificate(f, psi, t, n_probe)


def run_example_d(P: dict) -> Report:
    R = Report("example-d", P)
    f = _source("example-d", P["n_max"])
    psi = example_d_psi(P["n_max"])
    ts = [float(t) for t in P["t"]]
    certs = _pmap(_cert_job, [(f, psi, t, P["n_probe"]) for t in ts], P["jobs"])
    rows, res = [], []
    for t, c in zip(ts, certs):
        rows.append([t, c.verdict, c.n0 if c.n0 is not None else "", c.c if c.c is not None else "",
                     c.partial_sums[-1] if c.partial_sums else ""])
        res.append({"t": t, **c.to_dict()})
        if t == 0:
            R.check("t0_convergent", c.verdict == "convergent")
        else:
            s = min(t, 0.5)
            R.check(f"divergent_t{t:g}", c.verdict == "divergent" and c.c >= s * s / 8 * (1 - 1e-12)
                    and verify_divergence(c, 20), c.certificate)
    cls = no_blowup_classify(f)
    l2, l4 = lp_norm_block(psi, 2), lp_norm_block(psi, 4)
    R.check("no_blowup_condition", cls.infinite, cls.certificate)
    R.check("psi_in_L2", l2.verdict == "convergent")
    R.check("psi_not_in_L4", l4.verdict == "divergent")
    R.results = {"certificates": res, "classify": cls.to_dict(), "psi_L2": l2.to_dict(), "psi_L4": l4.to_dict()}
    R.tables["certificates"] = (["t", "verdict", "n0", "c", "partial_sum"], rows)
    return R


def run_example_e(P: dict) -> Report:
    R = Report("example-e", P)
    f = _source("example-d", P["n_max"])
    grid = sorted(float(p) for p in P["p"])
    C = float(P["C"])
    growth = {str(p): growth_condition_check(f, p, C).to_dict() for p in grid}
    p_min = minimal_growth_exponent(f, C, grid)
    q = float(P["q"])
    dims = [int(N) for N in P["dims"] if p_min is not None and wellposedness_window(p_min, int(N)).contains(q)]
    R.check("growth_exponent_found", p_min is not None, f"minimal p on grid: {p_min}")
    cfg = SolverConfig(dt=P["dt"], theta=P["theta"], horizon=P["horizon"])
    lad = truncation_ladder(f, example_d_psi(P["n_max"]), [float(m) for m in P["levels"]], cfg, _mesh(P), jobs=P["jobs"])
    sups = [supersolution_check(r, f).to_dict() if not r.blown_up else None for r in lad.runs]
    R.check("ladder_no_blowup", not any(lad.blowup_flags))
    R.check("ladder_monotone", lad.monotone, f"max order violation {lad.max_order_violation:.3g}")
    R.check("ladder_increments_decreasing", lad.increments_decreasing, str(lad.stable_increments))
    R.check("supersolution", all(s is not None and s["ok"] for s in sups))
    R.results = {"growth": growth, "minimal_p": p_min, "q": q, "dims": dims,
                 "windows": [wellposedness_window(p_min, int(N)).to_dict() for N in P["dims"]] if p_min else [],
                 "ladder": lad.to_dict(), "supersolution": sups}
    for M, run in zip(lad.levels, lad.runs):
        R.tables[f"level_{M:g}"] = (run.columns, run.rows())
    return R


# -- tools -------------------------------------------------------------------


def run_blowup_time(P: dict) -> Report:
    R = Report("blowup-time", P)
    f = _source(P["source"], P["n_max"])
    res = blowup_time(f, P["z0"], tol=P["tol"])
    R.results = {"blowup_time": res.to_dict()}
    if P.get("eps") is not None:
        try:
            R.results["invert"] = {"eps": P["eps"], "z": invert_blowup_time(f, P["eps"])}
        except NoBlowupError as exc:
            R.results["invert"] = {"eps": P["eps"], "z": None, "reason": str(exc)}
    R.check("verdict_decided", res.verdict != "inconclusive", res.certificate)
    return R


def run_classify(P: dict) -> Report:
    R = Report("classify", P)
    f = _source(P["source"], P["n_max"])
    cls = no_blowup_classify(f)
    R.results = {"no_blowup": cls.infinite, "verdict": cls.to_dict(),
                 "uniform_lipschitz": uniform_lipschitz_bound(f), "linear_growth": linear_growth_constant(f)}
    R.check("verdict_decided", cls.verdict != "inconclusive", cls.certificate)
    return R


def run_growth_check(P: dict) -> Report:
    R = Report("growth-check", P)
    f = _source(P["source"], P["n_max"])
    reps = {str(float(p)): growth_condition_check(f, float(p), float(P["C"])).to_dict() for p in P["p"]}
    R.results = {"growth": reps}
    R.tables["growth"] = (["p", "holds", "worst_ratio"], [[float(k), v["holds"], v["worst_ratio"]] for k, v in reps.items()])
    return R


def _initial_data(name: str, n_max: int):
    if name == "example-d":
        return example_d_psi(n_max)
    if name == "sine":
        return lambda x: np.sin(np.pi * x)
    if name == "zero":
        return BlockFunction(())
    if name.startswith("constant:"):
        return constant_block(name.split(":", 1)[1])
    raise ConfigError(f"unknown initial data {name!r}")


def run_rd(P: dict) -> Report:
    R = Report("rd-run", P)
    f = _source(P["source"], P["n_max"])
    psi = _initial_data(P["data"], P["n_max"])
    trunc = P.get("truncation")
    cfg = SolverConfig(dt=P["dt"], theta=P["theta"], horizon=P["horizon"],
                       truncation=float(trunc) if trunc and isinstance(psi, BlockFunction) else None)
    run = solve(f, psi, cfg, _mesh(P))
    R.results = {"run": run.summary()}
    R.tables["trace"] = (run.columns, run.rows())
    if not run.blown_up:
        sup = supersolution_check(run, f)
        R.results["supersolution"] = sup.to_dict()
        R.check("supersolution", sup.ok, f"max violation {sup.max_violation:.3g}")
    return R


RUNNERS = {
    "example-a": run_example_a, "example-b": run_example_b, "example-c": run_example_c,
    "example-d": run_example_d, "example-e": run_example_e, "blowup-time": run_blowup_time,
    "classify": run_classify, "growth-check": run_growth_check, "rd-run": run_rd,
}

# flag -> parameter key
FLAGS = {
    "n_max": "n_max", "t": "t", "p": "p", "r": "r", "levels": "levels", "dt": "dt", "theta": "theta",
    "mesh_ratio": "mesh_ratio", "finest_cell": "finest_cell", "tol": "tol", "jobs": "jobs",
    "format": "format", "seed": "seed", "horizon": "horizon", "truncation": "truncation",
    "source": "source", "z0": "z0", "eps": "eps", "C": "C", "data": "data", "samples": "samples",
    "nodes": "nodes",
}
LIST_PARAMS = {"t", "p", "levels", "z0"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("parameters (override defaults and --config)")
    g.add_argument("--n-max", type=int)
    g.add_argument("--t", type=float, nargs="+")
    g.add_argument("--p", type=float, nargs="+")
    g.add_argument("--r", type=float)
    g.add_argument("--levels", type=float, nargs="+")
    g.add_argument("--dt", type=float)
    g.add_argument("--theta", type=float)
    g.add_argument("--mesh-ratio", type=float)
    g.add_argument("--finest-cell", type=float)
    g.add_argument("--nodes", type=int, help="use a uniform mesh with this many nodes")
    g.add_argument("--tol", type=float)
    g.add_argument("--jobs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--horizon", type=float)
    g.add_argument("--truncation", type=float)
    g.add_argument("--source", help="registered source name or JSON file")
    g.add_argument("--data", help="initial data for rd-run: example-d, sine, zero, constant:V")
    g.add_argument("--z0", type=float, nargs="+")
    g.add_argument("--eps", type=float, help="blow-up time to invert")
    g.add_argument("--C", type=float)
    g.add_argument("--samples", type=int)
    g.add_argument("--format", choices=("json", "csv", "both"))
    g.add_argument("--out-dir", default="blowup-lab-out")
    g.add_argument("--config", help="JSON file of parameter overrides")
    parser = argparse.ArgumentParser(prog="blowup-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCENARIOS + TOOLS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_params(args: argparse.Namespace, defaults: Optional[dict] = None) -> dict:
    """defaults.json, then --config, then explicit flags."""
    defaults = defaults or load_defaults()
    P = dict(defaults["common"])
    section = "scenarios" if args.command in SCENARIOS else "tools"
    P.update(defaults[section].get(args.command, {}))
    if args.config:
        P.update(json.loads(Path(args.config).read_text()))
    for flag, key in FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        P[key] = v
    for key in LIST_PARAMS:
        if key in P and not isinstance(P[key], list):
            P[key] = [P[key]]
    if args.command == "blowup-time" and isinstance(P.get("z0"), list):
        P["z0"] = P["z0"][0]
    P["defaults_version"] = defaults.get("version")
    return P


def write_outputs(report: Report, out_dir: Path, fmt: str) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both") or not report.ok:
        written.append(export.write_json(report.to_dict(), out_dir / f"{report.command}.json"))
    if fmt in ("csv", "both"):
        for name, (cols, rows) in sorted(report.tables.items()):
            written.append(export.write_csv(cols, rows, out_dir / f"{report.command}_{name}.csv"))
    manifest = {
        "command": report.command,
        "params": report.params,
        "params_sha256": export.params_hash(report.params),
        "ok": report.ok,
        "artifacts": [{"path": p.name, "sha256": export.sha256_file(p)} for p in written],
    }
    export.write_json(manifest, out_dir / "manifest.json")
    return written


def main(argv=None) -> int:
    level = os.environ.get("BLOWUP_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        P = resolve_params(args)
        log.info("running %s with %s", args.command, P)
        report = RUNNERS[args.command](P)
    except (BlowupLabError, ValueError) as exc:
        print(f"blowup-lab: error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    written = write_outputs(report, out, P["format"])
    for c in report.checks:
        print(f"[{'PASS' if c['ok'] else 'FAIL'}] {report.command}: {c['name']}")
    for p in written:
        log.info("wrote %s", p)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
