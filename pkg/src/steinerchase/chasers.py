"""Online chasers: functional Steiner, level-set Steiner and two baselines.

A chaser sees requests one at a time and commits to a position after each.
``run`` drives a chaser over a fixed instance or an adaptive adversary and
records positions, costs and the offline optimum of every prefix.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Protocol, Union

import numpy as np

from .errors import NotNested, ValidationError
from .geometry import HPolytope, MaxAffine, NormTag, euclid_project, norm
from .steiner import (SteinerConfig, SteinerEstimate, functional_steiner_dual,
                      level_set_steiner, steiner_body)
from .workfn import Instance, Request, SolverConfig, WorkFunctionHandle


@dataclass(frozen=True)
class StepResult:
    """One step of a run.

    ``movement`` is the ambient-norm jump from the previous position.  For
    the substep function rule, ``substep_path_length`` is the length of the
    polyline through the substep points up to the chosen one (an upper bound
    on ``movement``); it equals ``movement`` otherwise.
    """

    position: np.ndarray
    movement: float
    service: float
    fixup_distance: float = 0.0
    stderr: float = 0.0
    gap: float = 0.0
    substep_path_length: float = 0.0
    substep_index: int = 0


class Chaser(ABC):
    name = "chaser"

    def __init__(self):
        self.instance: Instance | None = None
        self.position: np.ndarray | None = None

    def reset(self, dim: int, tag) -> None:
        self.instance = Instance(dim, NormTag.parse(tag), ())
        self.position = np.zeros(dim)

    @property
    def norm(self) -> NormTag:
        return self.instance.norm

    @property
    def steps_taken(self) -> int:
        return len(self.instance)

    def step(self, request: Request) -> StepResult:
        if self.instance is None:
            raise ValidationError("chaser used before reset()")
        if request.dim != self.instance.dim:
            raise ValidationError(f"request dimension {request.dim} != {self.instance.dim}")
        prev = self.position
        self.instance = self.instance.append(request)
        res = self._advance(request, prev)
        self.position = res.position
        return res

    @abstractmethod
    def _advance(self, request: Request, prev: np.ndarray) -> StepResult:
        ...

    def _finish(self, request, prev, x, *, fixup=0.0, stderr=0.0, gap=0.0,
                path_len=None, index=0) -> StepResult:
        x = np.asarray(x, dtype=float)
        move = float(norm(x - prev, self.norm))
        service = float(request(x)) if isinstance(request, MaxAffine) else 0.0
        return StepResult(x, move, max(service, 0.0), float(fixup), float(stderr), float(gap),
                          move if path_len is None else float(path_len), int(index))


def _fix_up(x: np.ndarray, body: HPolytope) -> tuple[np.ndarray, float]:
    """Project a Monte-Carlo estimate onto the request body."""
    if body.contains(x, tol=0.0):
        return x, 0.0
    y = euclid_project(x, body)
    return y, float(np.linalg.norm(y - x))


class FunctionalSteiner(Chaser):
    """``x_n = s(W_n)``; function requests may be split into ``m`` substeps.

    With ``m > 1`` the work function is tracked at times ``n - 1 + k/m``
    (request ``f_n`` served with weight ``k/m``) and the substep point with
    the lowest ``f_n`` becomes ``x_n``.
    """

    name = "steiner"

    def __init__(self, cfg: SteinerConfig | None = None, substeps: int = 1,
                 solver: SolverConfig | None = None):
        super().__init__()
        if int(substeps) < 1:
            raise ValidationError("substeps must be >= 1")
        self.cfg = cfg or SteinerConfig()
        self.substeps = int(substeps)
        self.solver = solver or SolverConfig()

    def _estimate(self, inst: Instance) -> SteinerEstimate:
        h = WorkFunctionHandle(inst, solver=self.solver)
        return functional_steiner_dual(h, self.cfg, step=len(inst))

    def _advance(self, request, prev):
        if isinstance(request, HPolytope):
            est = self._estimate(self.instance)
            x, fix = _fix_up(est.point, request)
            return self._finish(request, prev, x, fixup=fix, stderr=est.stderr, gap=est.gap)
        if self.substeps == 1:
            est = self._estimate(self.instance)
            return self._finish(request, prev, est.point, stderr=est.stderr, gap=est.gap)
        m = self.substeps
        base = self.instance.prefix(len(self.instance) - 1)
        points, errs, gaps = [], [], []
        for kk in range(1, m + 1):
            sub = base.append(request if kk == m else request.scaled(kk / m))
            est = self._estimate(sub)
            points.append(est.point)
            errs.append(est.stderr)
            gaps.append(est.gap)
        points = np.array(points)
        best = int(np.argmin(request(points)))
        poly = np.vstack([prev[None, :], points[: best + 1]])
        path_len = float(np.sum(norm(np.diff(poly, axis=0), self.norm)))
        return self._finish(request, prev, points[best], stderr=errs[best], gap=max(gaps),
                            path_len=path_len, index=best + 1)


def circumradius(request: Request, tag) -> float:
    """Largest ambient norm of a point of a body (0 for functions)."""
    if isinstance(request, HPolytope):
        return float(np.max(norm(request.vertices, NormTag.parse(tag))))
    return 0.0


RPolicy = Union[str, float, Callable[[WorkFunctionHandle], float]]


class LevelSetSteiner(Chaser):
    """``x_n`` is the Steiner point of the level set ``{W_n <= R_n}``.

    ``r_policy``: ``"large"`` (opt + 2 * max circumradius + 1), ``"small"``
    (opt + 0.01), a number added to opt, or a callable of the handle.
    """

    name = "levelset"

    def __init__(self, cfg: SteinerConfig | None = None, r_policy: RPolicy = "large",
                 solver: SolverConfig | None = None):
        super().__init__()
        self.cfg = cfg or SteinerConfig()
        self.r_policy = r_policy
        self.solver = solver or SolverConfig()
        self._radius = 0.0
        self.last_R = None

    def reset(self, dim, tag):
        super().reset(dim, tag)
        self._radius = 0.0

    def level(self, h: WorkFunctionHandle) -> float:
        pol = self.r_policy
        if callable(pol):
            return float(pol(h))
        opt = h.opt_value()
        if pol == "large":
            return opt + 2.0 * self._radius + 1.0
        if pol == "small":
            return opt + 0.01
        if isinstance(pol, (int, float)):
            return opt + float(pol)
        raise ValidationError(f"unknown level policy {pol!r}")

    def _advance(self, request, prev):
        self._radius = max(self._radius, circumradius(request, self.norm))
        h = WorkFunctionHandle(self.instance, solver=self.solver)
        R = self.level(h)
        self.last_R = R
        est = level_set_steiner(h, R, self.cfg, step=len(self.instance))
        x, fix = est.point, 0.0
        if isinstance(request, HPolytope):
            x, fix = _fix_up(x, request)
        return self._finish(request, prev, x, fixup=fix, stderr=est.stderr, gap=est.gap)


class Greedy(Chaser):
    """Project onto each body; for functions run subgradient descent on
    ``f(x) + ||x - x_prev||`` from ``x_prev`` and keep the best iterate."""

    name = "greedy"

    def __init__(self, iterations: int = 200):
        super().__init__()
        self.iterations = int(iterations)

    def _advance(self, request, prev):
        if isinstance(request, HPolytope):
            x = prev if request.contains(prev, tol=0.0) else euclid_project(prev, request)
            return self._finish(request, prev, x)
        tag = self.norm

        def obj(z):
            return float(request(z)) + float(norm(z - prev, tag))

        x = prev.copy()
        best, best_val = x.copy(), obj(x)
        scale = 1.0 + float(np.max(np.linalg.norm(request.gradients, axis=1)))
        for it in range(1, self.iterations + 1):
            vals = request.gradients @ x + request.intercepts
            g = request.gradients[int(np.argmax(vals))].copy()
            u = x - prev
            if np.any(u != 0):
                if tag is NormTag.L2:
                    g += u / np.linalg.norm(u)
                elif tag is NormTag.L1:
                    g += np.sign(u)
                else:
                    j = int(np.argmax(np.abs(u)))
                    g[j] += np.sign(u[j])
            gn = np.linalg.norm(g)
            if gn == 0.0:
                break
            x = x - (best_val / scale) / np.sqrt(it) * g / gn
            v = obj(x)
            if v < best_val:
                best, best_val = x.copy(), v
        return self._finish(request, prev, best)


class NestedSteiner(Chaser):
    """Move to the Steiner point of each body; bodies must be nested."""

    name = "nested"

    def __init__(self, cfg: SteinerConfig | None = None, tol: float = 1e-9):
        super().__init__()
        self.cfg = cfg or SteinerConfig()
        self.tol = tol

    def _advance(self, request, prev):
        if not isinstance(request, HPolytope):
            raise ValidationError("nested chasing takes bodies only")
        n = len(self.instance)
        if n > 1:
            outer = self.instance.requests[n - 2]
            if not request.contained_in(outer, tol=self.tol):
                raise NotNested(f"request {n - 1} is not contained in request {n - 2}")
        est = steiner_body(request, self.norm, self.cfg, step=n)
        x, fix = _fix_up(est.point, request)
        return self._finish(request, prev, x, fixup=fix, stderr=est.stderr)


# ---------------------------------------------------------------------------
# runs


class Adversary(Protocol):
    dim: int
    norm: NormTag
    length: int

    def next_request(self, position: np.ndarray, step: int) -> Request:
        ...


@dataclass
class Trace:
    """Realised requests, chaser steps and offline optimum of each prefix."""

    instance: Instance
    steps: list = field(default_factory=list)
    opt: list = field(default_factory=list)
    opt_gap: list = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.steps])

    @property
    def total_movement(self) -> float:
        return float(sum(s.movement for s in self.steps))

    @property
    def total_service(self) -> float:
        return float(sum(s.service for s in self.steps))

    @property
    def alg_total(self) -> float:
        return self.total_movement + self.total_service

    @property
    def opt_total(self) -> float:
        return self.opt[-1] if self.opt else 0.0


def run(chaser: Chaser, source: Union[Instance, Adversary],
        solver: SolverConfig | None = None, track_opt: bool = True,
        on_step: Callable | None = None) -> Trace:
    """Drive ``chaser`` over an instance or adaptive adversary."""
    solver = solver or SolverConfig()
    adaptive = not isinstance(source, Instance)
    dim, tag = source.dim, NormTag.parse(source.norm)
    length = source.length if adaptive else len(source)
    chaser.reset(dim, tag)
    trace = Trace(Instance(dim, tag, ()))
    for n in range(length):
        req = source.next_request(chaser.position.copy(), n) if adaptive else source.requests[n]
        res = chaser.step(req)
        trace.instance = trace.instance.append(req)
        trace.steps.append(res)
        if track_opt:
            h = WorkFunctionHandle(trace.instance, solver=solver)
            r = h.eval_conjugate(np.zeros(dim))
            # barrier values are upper bounds; snap to 0 when the certified interval contains it
            trace.opt.append(0.0 if r.value <= r.gap else r.value)
            trace.opt_gap.append(r.gap)
        if on_step is not None:
            on_step(n, req, res)
    return trace
