"""Experiment runner: chaser runs, invariant check suites and growth grids.

Everything here returns plain report objects; ``cli`` only parses flags and
formats output.
"""
from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .chasers import FunctionalSteiner, Greedy, LevelSetSteiner, NestedSteiner, Trace, run
from .errors import ValidationError
from .geometry import HPolytope, NormTag, norm, sample_dual_ball, stream
from .instances import (HypercubeFaces, RandomBodies, RandomMaxAffine, dumps, gen, loads,
                        parse_spec)
from .steiner import (SteinerConfig, functional_steiner_dual, functional_steiner_primal,
                      level_set_steiner, steiner_body)
from .workfn import (Instance, SolverConfig, WorkFunctionHandle, brute_force_work,
                     finite_diff_conjugate_rate)

EPS_DIV = 1e-12
ALGORITHMS = ("steiner", "levelset", "greedy", "nested")


def ratio(alg: float, opt: float) -> float:
    """``alg / max(opt, EPS_DIV)`` with ``0/0 -> 0``."""
    if alg <= EPS_DIV and opt <= EPS_DIV:
        return 0.0
    return alg / max(opt, EPS_DIV)


def worker_count(jobs: int) -> int:
    env = os.environ.get("CHASE_THREADS", "").strip()
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValidationError(f"CHASE_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, jobs))


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunConfig:
    algo: str = "steiner"
    norm: str = "l2"
    samples: int = 4096
    tol: float = 1e-6
    seed: int = 0
    substeps: int = 1
    r_policy: str = "large"

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        NormTag.parse(self.norm)
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if int(self.substeps) < 1:
            raise ValidationError("substeps must be >= 1")

    @property
    def steiner(self) -> SteinerConfig:
        return SteinerConfig(samples=self.samples, seed=self.seed)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol)


def make_chaser(cfg: RunConfig):
    if cfg.algo == "steiner":
        return FunctionalSteiner(cfg.steiner, substeps=cfg.substeps, solver=cfg.solver)
    if cfg.algo == "levelset":
        return LevelSetSteiner(cfg.steiner, r_policy=cfg.r_policy, solver=cfg.solver)
    if cfg.algo == "greedy":
        return Greedy()
    return NestedSteiner(cfg.steiner)


@dataclass
class RunReport:
    config: RunConfig
    trace: Trace
    alg_total: float
    opt_total: float
    ratio: float
    estimator_error_budget: float
    flagged: bool
    opt_endpoint: np.ndarray

    @property
    def instance(self) -> Instance:
        return self.trace.instance

    @property
    def steps(self):
        return self.trace.steps

    @property
    def total_movement(self) -> float:
        return self.trace.total_movement

    @property
    def total_service(self) -> float:
        return self.trace.total_service

    def rows(self):
        cum = 0.0
        for n, s in enumerate(self.trace.steps):
            cum += s.movement + s.service
            opt = self.trace.opt[n] if self.trace.opt else float("nan")
            yield n, s, cum, opt

    def to_dict(self) -> dict:
        steps = [{
            "step": n,
            "position": [float(x) for x in s.position],
            "movement": s.movement,
            "service": s.service,
            "fixup_distance": s.fixup_distance,
            "stderr": s.stderr,
            "gap": s.gap,
            "substep_path_length": s.substep_path_length,
            "substep_index": s.substep_index,
            "cum_alg": cum,
            "cum_opt": opt,
        } for n, s, cum, opt in self.rows()]
        return {
            "config": asdict(self.config),
            "alg_total": self.alg_total,
            "opt_total": self.opt_total,
            "ratio": self.ratio,
            "estimator_error_budget": self.estimator_error_budget,
            "flagged": self.flagged,
            "opt_endpoint": [float(x) for x in self.opt_endpoint],
            "trace": steps,
            "instance": json.loads(dumps(self.instance)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        d = self.instance.dim
        buf = io.StringIO()
        cols = ["step"] + [f"x_{i}" for i in range(d)] + [
            "movement", "service", "cum_alg", "cum_opt", "fixup_distance"]
        buf.write(",".join(cols) + "\n")
        for n, s, cum, opt in self.rows():
            vals = [str(n)] + [repr(float(x)) for x in s.position] + [
                repr(s.movement), repr(s.service), repr(cum), repr(float(opt)),
                repr(s.fixup_distance)]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()

    def to_svg(self, size: int = 480) -> str:
        return render_svg(self, size)


def flag_step(step, tol: float) -> bool:
    """A fix-up beyond Monte-Carlo noise signals an estimator or solver bug."""
    return step.fixup_distance > 5.0 * step.stderr + tol


def execute(source, cfg: RunConfig) -> RunReport:
    """Run the configured chaser on an Instance or adaptive adversary."""
    chaser = make_chaser(cfg)
    trace = run(chaser, source, solver=cfg.solver)
    alg = trace.alg_total
    opt = trace.opt_total
    budget = float(sum(5.0 * s.stderr + s.gap for s in trace.steps))
    flagged = any(flag_step(s, cfg.tol) for s in trace.steps)
    h = WorkFunctionHandle(trace.instance, solver=cfg.solver)
    endpoint = h.argmin() if len(trace.instance) else np.zeros(trace.instance.dim)
    return RunReport(cfg, trace, alg, opt, ratio(alg, opt), budget, flagged, endpoint)


def resolve_source(*, instance_path=None, gen_spec=None, norm_tag=None, seed=0):
    """Load an instance file or build a generator; returns (source, norm)."""
    if (instance_path is None) == (gen_spec is None):
        raise ValidationError("give exactly one of an instance file or a generator spec")
    if instance_path is not None:
        from .instances import load
        inst = load(instance_path)
        if norm_tag is not None and NormTag.parse(norm_tag) is not inst.norm:
            inst = Instance(inst.dim, NormTag.parse(norm_tag), inst.requests)
        return inst, inst.norm
    spec = parse_spec(gen_spec)
    if "seed=" not in gen_spec:
        spec = type(spec)(**{**asdict(spec), "seed": int(seed)})
    tag = NormTag.parse(norm_tag or "l2")
    return gen(spec, tag), tag


# ---------------------------------------------------------------------------
# SVG


def _polygon_2d(P: HPolytope) -> np.ndarray:
    V = P.vertices
    if len(V) <= 2:
        return V
    c = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0])
    return V[np.argsort(ang)]


def render_svg(report: RunReport, size: int = 480) -> str:
    """Static SVG 1.1: body outlines, chaser path, OPT endpoint."""
    inst = report.instance
    if inst.dim != 2:
        raise ValidationError("SVG output needs d = 2")
    pts = [np.zeros(2), report.opt_endpoint] + [s.position for s in report.steps]
    polys = [_polygon_2d(r) for r in inst.requests if isinstance(r, HPolytope)]
    allp = np.vstack(pts + [p for p in polys if len(p)])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 0.08 * span
    lo, span = lo - pad, span + 2 * pad
    scale = size / span

    def xy(p):
        return f"{(p[0] - lo[0]) * scale:.3f},{(size - (p[1] - lo[1]) * scale):.3f}"

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" '
           f'height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>']
    for k, poly in enumerate(polys):
        if len(poly) == 1:
            q = xy(poly[0]).split(",")
            out.append(f'<circle cx="{q[0]}" cy="{q[1]}" r="2" fill="none" stroke="#888"/>')
        elif len(poly) == 2:
            out.append(f'<polyline points="{xy(poly[0])} {xy(poly[1])}" fill="none" '
                       f'stroke="#888" stroke-width="1.5"/>')
        else:
            out.append(f'<polygon points="{" ".join(xy(p) for p in poly)}" fill="none" '
                       f'stroke="#888" stroke-width="1"/>')
    path = [np.zeros(2)] + [s.position for s in report.steps]
    out.append(f'<polyline points="{" ".join(xy(p) for p in path)}" fill="none" '
               f'stroke="#1f5fbf" stroke-width="2"/>')
    for p in path:
        q = xy(p).split(",")
        out.append(f'<circle cx="{q[0]}" cy="{q[1]}" r="3" fill="#1f5fbf"/>')
    q = xy(report.opt_endpoint).split(",")
    out.append(f'<rect x="{float(q[0]) - 5:.3f}" y="{float(q[1]) - 5:.3f}" width="10" '
               f'height="10" fill="none" stroke="#c0392b" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# check suites


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.detail}"


class PerturbedHandle(WorkFunctionHandle):
    """Fault injection: every conjugate value is shifted by ``delta``."""

    def __init__(self, instance, n=None, solver=None, delta=0.0):
        super().__init__(instance, n, solver)
        self.delta = float(delta)

    def eval_conjugate_many(self, V, check=True):
        r = super().eval_conjugate_many(V, check)
        return type(r)(r.values + self.delta, r.endpoints, r.gaps, r.paths, r.spend, r.iterations)


@dataclass
class CheckContext:
    seed: int = 1
    tol: float = 1e-6
    samples: int = 2048
    perturb_conjugate: float = 0.0

    @property
    def solver(self):
        return SolverConfig(tol=self.tol)

    def handle(self, inst, n=None):
        if self.perturb_conjugate:
            return PerturbedHandle(inst, n, self.solver, self.perturb_conjugate)
        return WorkFunctionHandle(inst, n, self.solver)

    def instances(self, count=4, d=2, N=3, tags=("l2", "linf")):
        out = []
        for i in range(count):
            tag = tags[i % len(tags)]
            spec = (RandomBodies(d, N, seed=self.seed * 100 + i) if i % 2 == 0
                    else RandomMaxAffine(d, N, seed=self.seed * 100 + i))
            out.append(gen(spec, tag))
        return out


def _fenchel(ctx: CheckContext):
    rng = stream(ctx.seed, 101)
    worst_tight, worst_ineq = 0.0, 0.0
    for inst in ctx.instances():
        h = ctx.handle(inst)
        V = sample_dual_ball(inst.norm, inst.dim, rng, 16)
        r = h.eval_conjugate_many(V)
        W_end = h.eval_work_many(r.endpoints).values
        tight = np.abs(W_end - np.sum(V * r.endpoints, axis=1) - r.values)
        scale = 1.0 + np.abs(r.values)
        worst_tight = max(worst_tight, float(np.max(tight / scale)))
        X = rng.uniform(-3, 3, (16, inst.dim))
        W_x = h.eval_work_many(X).values
        viol = r.values - (W_x - np.sum(V * X, axis=1))
        worst_ineq = max(worst_ineq, float(np.max(viol / scale)))
    lim = 10 * ctx.tol
    yield "tight-pairs", worst_tight <= lim, f"max |W(v*) - v.v* - W*(v)| = {worst_tight:.3g}"
    yield "young-inequality", worst_ineq <= lim, f"max violation {worst_ineq:.3g}"


def _workfn(ctx: CheckContext):
    rng = stream(ctx.seed, 102)
    t = ctx.tol
    mono = conv = lip = 0.0
    for inst in ctx.instances():
        X = rng.uniform(-3, 3, (24, inst.dim))
        Y = rng.uniform(-3, 3, (24, inst.dim))
        vals = [ctx.handle(inst, n).eval_work_many(X).values for n in range(len(inst) + 1)]
        for a, b in zip(vals, vals[1:]):
            mono = max(mono, float(np.max(a - b)))
        h = ctx.handle(inst)
        wx, wy = vals[-1], h.eval_work_many(Y).values
        wm = h.eval_work_many(0.5 * (X + Y)).values
        conv = max(conv, float(np.max(wm - 0.5 * (wx + wy))))
        lip = max(lip, float(np.max(np.abs(wx - wy) - norm(X - Y, inst.norm))))
    yield "monotone-in-n", mono <= 3 * t, f"max W_n - W_n+1 = {mono:.3g}"
    yield "midpoint-convex", conv <= 3 * t, f"max excess {conv:.3g}"
    yield "1-lipschitz", lip <= 3 * t, f"max excess {lip:.3g}"
    inst = ctx.instances(1)[0]
    h0 = ctx.handle(inst, 0)
    X = rng.uniform(-3, 3, (32, inst.dim))
    err0 = float(np.max(np.abs(h0.eval_work_many(X).values - norm(X, inst.norm))))
    yield "W0-is-norm", err0 <= t, f"max error {err0:.3g}"
    V = sample_dual_ball(inst.norm, inst.dim, rng, 32)
    c0 = float(np.max(np.abs(h0.eval_conjugate_many(V).values)))
    yield "conjugate-W0-zero", c0 <= t, f"max |W*_0| = {c0:.3g}"


def _dual_bound(ctx: CheckContext):
    rng = stream(ctx.seed, 103)
    worst_max = worst_avg = -math.inf
    for inst in ctx.instances():
        h = ctx.handle(inst)
        opt = h.opt_value()
        V = sample_dual_ball(inst.norm, inst.dim, rng, 50)
        V = np.vstack([V, -V])
        w = h.eval_conjugate_many(V).values
        worst_max = max(worst_max, float(np.max(w) - 2 * opt))
        worst_avg = max(worst_avg, float(np.mean(w) - opt))
    t3 = 3 * ctx.tol
    yield "conjugate-le-2opt", worst_max <= t3, f"max W* - 2 OPT = {worst_max:.3g}"
    yield "average-le-opt", worst_avg <= t3, f"max avg W* - OPT = {worst_avg:.3g}"


def _steiner(ctx: CheckContext):
    cfg = SteinerConfig(samples=ctx.samples, seed=ctx.seed)
    worst = 0.0
    for inst in ctx.instances():
        h = ctx.handle(inst)
        a = functional_steiner_primal(h, cfg)
        b = functional_steiner_dual(h, cfg)
        se = np.hypot(a.stderr_coords, b.stderr_coords) + ctx.tol
        worst = max(worst, float(np.max(np.abs(a.point - b.point) / se)))
    yield "primal-vs-dual", worst <= 4.0, f"max deviation {worst:.2f} combined SE"
    rng = stream(ctx.seed, 104)
    cube = HPolytope.box(-np.ones(2), np.ones(2))
    s = steiner_body(cube, "l2", cfg)
    z = float(np.max(np.abs(s.point) / (s.stderr_coords + 1e-15)))
    yield "cube-symmetry", z <= 4.0, f"|s| = {z:.2f} SE"
    P = gen(RandomBodies(2, 1, seed=ctx.seed), "l2").requests[0]
    c = rng.uniform(-2, 2, 2)
    s1 = steiner_body(P, "l2", cfg)
    s2 = steiner_body(P.translate(c), "l2", cfg)
    se = np.hypot(s1.stderr_coords, s2.stderr_coords) + 1e-12
    z = float(np.max(np.abs(s2.point - s1.point - c) / se))
    yield "translation-equivariance", z <= 4.0, f"deviation {z:.2f} combined SE"


def _unification(ctx: CheckContext):
    cfg = SteinerConfig(samples=ctx.samples // 2, seed=ctx.seed)
    worst = 0.0
    for i in range(2):
        inst = gen(RandomBodies(2, 3, seed=ctx.seed * 100 + 50 + i), "l2")
        h = ctx.handle(inst)
        radius = max(float(np.max(norm(r.vertices, inst.norm))) for r in inst.requests)
        R = h.opt_value() + 2 * radius + 1
        a = level_set_steiner(h, R, cfg)
        b = functional_steiner_dual(h, cfg)
        dist = float(np.linalg.norm(a.point - b.point))
        worst = max(worst, dist / (4 * (a.stderr + b.stderr) + ctx.tol))
    yield "levelset-vs-functional", worst <= 1.0, f"distance / (4 SE + tol) = {worst:.3g}"


def _derivative(ctx: CheckContext):
    rng = stream(ctx.seed, 105)
    worst = 0.0
    for i in range(3):
        tag = ("l2", "linf", "l1")[i]
        inst = gen(RandomMaxAffine(2, 3, seed=ctx.seed * 100 + 70 + i), tag)
        h = ctx.handle(inst, 2)
        v = 0.8 * sample_dual_ball(inst.norm, 2, rng, 1)[0]
        rate = finite_diff_conjugate_rate(h, v, 1 / 64)
        f = inst.requests[2]
        exact = float(f(h.eval_conjugate(v).endpoint))
        worst = max(worst, abs(rate - exact))
    yield "finite-difference-rate", worst <= 0.05, f"max |rate - f(v*)| = {worst:.3g}"


def _oracle(ctx: CheckContext):
    rng = stream(ctx.seed, 106)
    worst = 0.0
    for i, tag in enumerate(("l2", "linf")):
        inst = gen(RandomBodies(2, 2, seed=ctx.seed * 100 + 90 + i, scale=1.0), tag)
        X = rng.uniform(-1, 1, (4, 2))
        ipm = ctx.handle(inst).eval_work_many(X).values
        bf = brute_force_work(inst, len(inst), X, grid_step=0.02)
        worst = max(worst, float(np.max(np.abs(ipm - bf))))
    yield "grid-oracle", worst <= 0.05, f"max |W - W_grid| = {worst:.3g}"


SUITES: dict[str, Callable] = {
    "fenchel": _fenchel,
    "workfn": _workfn,
    "dual-bound": _dual_bound,
    "steiner": _steiner,
    "unification": _unification,
    "derivative": _derivative,
    "oracle": _oracle,
}


def run_checks(ctx: CheckContext, suites: Sequence[str] | None = None,
               on_result: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    names = list(SUITES) if not suites else list(suites)
    for s in names:
        if s not in SUITES:
            raise ValidationError(f"unknown suite {s!r}; expected one of {list(SUITES)}")
    results = []
    for s in names:
        for name, ok, detail in SUITES[s](ctx):
            res = CheckResult(s, name, bool(ok), detail)
            results.append(res)
            if on_result:
                on_result(res)
    return results


# ---------------------------------------------------------------------------
# growth


@dataclass(frozen=True)
class GrowthCell:
    N: int
    ratio: float
    alg_total: float
    opt_total: float
    estimator_error_budget: float


@dataclass
class GrowthReport:
    d: int
    norm: str
    seed: int
    samples: int
    cells: list = field(default_factory=list)
    slope: float = float("nan")

    def to_dict(self) -> dict:
        return {"d": self.d, "norm": self.norm, "seed": self.seed, "samples": self.samples,
                "cells": [asdict(c) for c in self.cells], "slope": self.slope}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _growth_cell(args) -> GrowthCell:
    d, N, tag, seed, samples, tol = args
    cfg = RunConfig(algo="steiner", norm=tag, samples=samples, tol=tol, seed=seed)
    rep = execute(gen(HypercubeFaces(d, N, adaptive=True, seed=seed), tag), cfg)
    return GrowthCell(N, rep.ratio, rep.alg_total, rep.opt_total, rep.estimator_error_budget)


def fit_slope(Ns: Sequence[int], ratios: Sequence[float]) -> float:
    """Least-squares slope of ``ratio^2`` against ``log N``."""
    if len(Ns) < 2:
        return float("nan")
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.asarray(ratios, dtype=float) ** 2
    return float(np.polyfit(x, y, 1)[0])


def growth(d: int = 3, Ns: Iterable[int] = (4, 8, 16, 32), norm_tag="l2", seed: int = 1,
           samples: int = 4096, tol: float = 1e-6) -> GrowthReport:
    Ns = sorted(int(n) for n in Ns)
    if not Ns:
        raise ValidationError("growth needs a nonempty N grid")
    if Ns[0] < 1 or d < 1:
        raise ValidationError("need d >= 1 and every N >= 1")
    tag = NormTag.parse(norm_tag).value
    jobs = [(d, N, tag, seed, samples, tol) for N in Ns]
    workers = worker_count(len(jobs))
    if workers == 1:
        cells = [_growth_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            cells = list(ex.map(_growth_cell, jobs))
    rep = GrowthReport(d, tag, seed, samples, cells)
    rep.slope = fit_slope([c.N for c in cells], [c.ratio for c in cells])
    return rep


def load_report_instance(report_json: str) -> Instance:
    """Replay helper: the realised instance embedded in a JSON report."""
    obj = json.loads(report_json)
    return loads(json.dumps(obj["instance"]))
