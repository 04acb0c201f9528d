"""Work functions, their concave conjugates and level sets.

``W_n(x)`` is the cheapest cost of a path that starts at the origin, serves the
first ``n`` requests in order and then moves to ``x``.  Every quantity here is a
convex program over the path ``y_1..y_n``; the default backend is the chain
barrier solver in :mod:`._chain`, evaluated in batches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import linprog

from . import _chain
from .errors import (DimensionTooLarge, DualNormViolation, EmptyLevelSet,
                     SolverFailure, ValidationError)
from .geometry import HPolytope, MaxAffine, NormTag, euclid_project, norm

Request = Union[HPolytope, MaxAffine]

MODES = ("ipm", "lp", "subgradient")


@dataclass(frozen=True)
class SolverConfig:
    """Backend selection and accuracy target.

    ``tol`` is the absolute accuracy target: the barrier gap target is
    ``tol / 2`` and a query that stalls may settle for its last centred
    point at gap ``<= tol``.  Queries the barrier cannot centre that far
    keep a certified gap of at most ``100 * tol``, reported per query in
    ``BatchResult.gaps``.  The LP backend is exact to HiGHS precision.
    ``box_radius`` bounds free path points of function stages (it only matters
    for dual directions on the unit sphere, where minimisers may run off).
    """

    tol: float = 1e-6
    max_iter: int = 600
    mode: str = "ipm"
    box_radius: float = 1e4
    mu: float = 20.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"solver mode must be one of {MODES}, got {self.mode!r}")
        if not self.tol > 0:
            raise ValidationError("solver tolerance must be positive")

    @classmethod
    def for_mode(cls, mode: str, **kw):
        if mode == "subgradient":
            kw.setdefault("tol", 1e-4)
            kw.setdefault("max_iter", 20000)
        return cls(mode=mode, **kw)


@dataclass(frozen=True)
class Instance:
    dim: int
    norm: NormTag
    requests: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "norm", NormTag.parse(self.norm))
        object.__setattr__(self, "requests", tuple(self.requests))
        if int(self.dim) < 1:
            raise ValidationError("instance dimension must be >= 1")
        for i, r in enumerate(self.requests):
            if not isinstance(r, (HPolytope, MaxAffine)):
                raise ValidationError(f"request {i} is neither a body nor a function")
            if r.dim != self.dim:
                raise ValidationError(f"request {i} has dimension {r.dim}, expected {self.dim}")

    def __len__(self):
        return len(self.requests)

    def prefix(self, n: int) -> "Instance":
        return Instance(self.dim, self.norm, self.requests[:n])

    def append(self, request: Request) -> "Instance":
        return Instance(self.dim, self.norm, self.requests + (request,))

    @property
    def is_body_instance(self) -> bool:
        return all(isinstance(r, HPolytope) for r in self.requests)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.dim == other.dim and self.norm == other.norm
                and len(self.requests) == len(other.requests)
                and all(type(a) is type(b) and a == b for a, b in zip(self.requests, other.requests)))

    __hash__ = None


@dataclass(frozen=True)
class ConjugateResult:
    value: float
    endpoint: np.ndarray
    gap: float


@dataclass
class BatchResult:
    """Values, path endpoints and gap estimates for a batch of queries."""

    values: np.ndarray
    endpoints: np.ndarray
    gaps: np.ndarray
    paths: np.ndarray = field(repr=False, default=None)
    spend: np.ndarray = field(repr=False, default=None)
    iterations: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# chain program assembly


@dataclass
class _Chain:
    k: np.ndarray
    Z: np.ndarray
    ident: np.ndarray
    p: np.ndarray
    has_r: np.ndarray
    row_ptr: np.ndarray
    Gy: np.ndarray
    Gr: np.ndarray
    Gh: np.ndarray
    zc: np.ndarray


def _build_chain(instance: Instance, n: int, tail: str, box_radius: float) -> _Chain:
    """Stages for the first ``n`` requests plus an optional tail stage.

    tail: ``"conj"`` (none), ``"work"`` (fixed endpoint, set per query) or
    ``"level"`` (a free trailing point).
    """
    d = instance.dim
    ks, Zs, ps, hr, rows_y, rows_r, rows_h, zcs, ptr = [], [], [], [], [], [], [], [], [0]
    eye = np.eye(d)
    for req in instance.requests[:n]:
        Zp = np.zeros((d, d))
        zc = np.zeros(d)
        if isinstance(req, HPolytope):
            k = req.affine_dim
            Zp[:, :k] = req.affine_basis
            zc[:k] = req.center_z
            ps.append(req.affine_point)
            A = req.A[req.ineq_rows]
            rows_y.append(A)
            rows_r.append(np.zeros(len(A)))
            rows_h.append(req.b[req.ineq_rows])
            hr.append(0)
        else:
            k = d
            Zp[:] = eye
            ps.append(np.zeros(d))
            rows_y.append(np.vstack([req.gradients, eye, -eye]))
            rows_r.append(np.concatenate([-np.ones(len(req.intercepts)), np.zeros(2 * d)]))
            rows_h.append(np.concatenate([-req.intercepts, np.full(2 * d, box_radius)]))
            hr.append(1)
        ks.append(k)
        Zs.append(Zp)
        zcs.append(zc)
        ptr.append(ptr[-1] + len(rows_h[-1]))
    if tail in ("work", "level"):
        Zp = np.zeros((d, d))
        k = 0
        if tail == "level":
            Zp[:] = eye
            k = d
        ks.append(k)
        Zs.append(Zp)
        ps.append(np.zeros(d))
        zcs.append(np.zeros(d))
        hr.append(0)
        ptr.append(ptr[-1])
    elif tail != "conj":
        raise ValueError(tail)
    cat = (lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape))
    Zarr = np.array(Zs, dtype=float).reshape(len(ks), d, d)
    return _Chain(
        k=np.array(ks, dtype=np.int64),
        Z=Zarr,
        ident=np.array([kk == d and np.array_equal(Zi, eye) for kk, Zi in zip(ks, Zarr)],
                       dtype=np.bool_),
        p=np.array(ps, dtype=float).reshape(len(ks), d),
        has_r=np.array(hr, dtype=np.int64),
        row_ptr=np.array(ptr, dtype=np.int64),
        Gy=np.ascontiguousarray(cat(rows_y, (0, d)).reshape(-1, d)),
        Gr=cat(rows_r, (0,)).astype(float),
        Gh=cat(rows_h, (0,)).astype(float),
        zc=np.array(zcs, dtype=float).reshape(len(ks), d),
    )


def _run_chain_once(chain: _Chain, norm_tag: NormTag, thetas, plast, cost_flag, budget,
                    z0, cfg: SolverConfig, mu: float):
    M, d = thetas.shape
    S = len(chain.k)
    plast = np.ascontiguousarray(np.broadcast_to(plast, (M, d)), dtype=float)
    use_z0 = z0 is not None
    z0 = (np.ascontiguousarray(np.broadcast_to(z0, (M, S, d)), dtype=float)
          if use_z0 else np.zeros((1, 1, 1)))
    out_obj = np.empty(M)
    out_gap = np.empty(M)
    out_path = np.empty((M, S, d))
    out_spend = np.empty(M)
    out_status = np.empty(M, dtype=np.int64)
    out_iters = np.empty(M, dtype=np.int64)
    _chain.solve_chain(
        d, norm_tag.code, chain.k, chain.Z, chain.ident, chain.p, chain.has_r, chain.row_ptr,
        chain.Gy, chain.Gr, chain.Gh, chain.zc, bool(cost_flag),
        budget is not None, float(budget) if budget is not None else 0.0,
        thetas, plast, z0, use_z0, 0.5 * cfg.tol, 0.0, int(cfg.max_iter),
        float(mu), out_obj, out_gap, out_path, out_spend, out_status, out_iters)
    return out_obj, out_gap, out_path, out_spend, out_status, out_iters


# smaller barrier steps for queries that stall near a degenerate optimum
_RETRY_MU = (4.0, 2.0, 1.25)
# after all retries a stalled query keeps its last centred point (and reports
# its gap) if that gap is within this multiple of tol
LOOSE_FACTOR = 100.0


def _run_chain(chain: _Chain, norm_tag: NormTag, thetas, plast, *, cost_flag=True,
               budget=None, z0=None, cfg: SolverConfig):
    OK, LOOSE, MAXITER = _chain.STATUS_OK, _chain.STATUS_LOOSE, _chain.STATUS_MAXITER
    thetas = np.ascontiguousarray(np.atleast_2d(thetas), dtype=float)
    M, d = thetas.shape
    plast = np.broadcast_to(plast, (M, d))
    if z0 is not None:
        z0 = np.broadcast_to(z0, (M, len(chain.k), d))

    def solve(rows, mu):
        res = _run_chain_once(chain, norm_tag, thetas[rows], plast[rows], cost_flag, budget,
                              None if z0 is None else z0[rows], cfg, mu)
        st = res[4]
        st[(st == LOOSE) & (res[1] <= cfg.tol)] = OK
        return res

    out = solve(np.arange(M), cfg.mu)
    for mu in _RETRY_MU:
        bad = np.flatnonzero((out[4] == MAXITER) | (out[4] == LOOSE))
        if bad.size == 0 or mu >= cfg.mu:
            continue
        redo = solve(bad, mu)
        st_old, st_new = out[4][bad], redo[4]
        better = (st_new == OK) | ((st_new == LOOSE) & ((st_old == MAXITER) | (redo[1] < out[1][bad])))
        for arr, new in zip(out, redo):
            arr[bad[better]] = new[better]
    st = out[4]
    loose = st == LOOSE
    st[loose & (out[1] <= LOOSE_FACTOR * cfg.tol)] = OK
    st[st == LOOSE] = MAXITER
    return out


def _norming(units, tag: NormTag) -> np.ndarray:
    """Primal unit vectors ``u`` with ``theta . u = 1`` for unit dual-norm ``theta``."""
    if tag is NormTag.L2:
        return units / np.linalg.norm(units, axis=1, keepdims=True)
    if tag is NormTag.LINF:
        return np.sign(units)
    u = np.zeros_like(units)
    j = np.argmax(np.abs(units), axis=1)
    rows = np.arange(len(units))
    u[rows, j] = np.sign(units[rows, j])
    return u


def _check_status(status, iters, obj, what):
    bad = np.flatnonzero(status != _chain.STATUS_OK)
    if bad.size:
        j = int(bad[0])
        if status[j] == _chain.STATUS_INFEASIBLE_START:
            raise SolverFailure(f"{what}: no strictly feasible starting path", int(iters[j]), float(obj[j]))
        raise SolverFailure(f"{what}: gap target not met for {bad.size} queries",
                            int(iters[j]), float(obj[j]))


# ---------------------------------------------------------------------------
# polyhedral LP backend (exact; used for l1/linf and for cross-checks)


def _lp_path(instance: Instance, n: int, *, theta, endpoint=None, level_budget=None):
    """Solve one path LP.  Returns (objective, final point, path)."""
    tag = instance.norm
    if tag is NormTag.L2:
        raise ValidationError("lp mode needs a polyhedral norm (l1 or linf)")
    d = instance.dim
    reqs = instance.requests[:n]
    free_tail = level_budget is not None
    S = n + (1 if (endpoint is not None or free_tail) else 0)
    q = 1 if tag is NormTag.LINF else d
    # variable layout: y (S*d) | m (S*q) | r (one per function stage)
    nf = sum(isinstance(r, MaxAffine) for r in reqs)
    ny, nm = S * d, S * q
    nv = ny + nm + nf
    c = np.zeros(nv)
    spend = np.zeros(nv)
    spend[ny:] = 1.0
    if level_budget is None:
        c += spend
    rows, rhs = [], []
    bounds = [(None, None)] * ny + [(0, None)] * (nm + nf)

    def ycol(i):
        return slice(i * d, (i + 1) * d)

    ridx = ny + nm
    for i in range(S):
        # movement from y_{i-1}
        for a in range(d):
            for sgn in (1.0, -1.0):
                row = np.zeros(nv)
                row[i * d + a] = sgn
                if i > 0:
                    row[(i - 1) * d + a] = -sgn
                row[ny + i * q + (0 if q == 1 else a)] = -1.0
                rows.append(row)
                rhs.append(0.0)
        if i < n:
            req = reqs[i]
            if isinstance(req, HPolytope):
                for arow, bval in zip(req.A, req.b):
                    row = np.zeros(nv)
                    row[ycol(i)] = arow
                    rows.append(row)
                    rhs.append(bval)
            else:
                for g, ci in zip(req.gradients, req.intercepts):
                    row = np.zeros(nv)
                    row[ycol(i)] = g
                    row[ridx] = -1.0
                    rows.append(row)
                    rhs.append(-ci)
                ridx += 1
    A_eq = b_eq = None
    if endpoint is not None:
        A_eq = np.zeros((d, nv))
        A_eq[:, ycol(S - 1)] = np.eye(d)
        b_eq = np.asarray(endpoint, dtype=float)
    if theta is not None:
        c[ycol(S - 1)] -= theta
    if level_budget is not None:
        rows.append(spend)
        rhs.append(level_budget)
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise EmptyLevelSet("level-set LP is infeasible")
    if res.status != 0:
        raise SolverFailure(f"path LP failed: {res.message}", int(getattr(res, "nit", 0)), None)
    path = res.x[:ny].reshape(S, d)
    return float(res.fun), path[-1].copy(), path


# ---------------------------------------------------------------------------
# projected subgradient backend


def _path_cost(instance, reqs, Y, tag):
    prev = np.zeros(instance.dim)
    total = 0.0
    for req, y in zip(reqs, Y):
        total += float(norm(y - prev, tag))
        if isinstance(req, MaxAffine):
            total += float(req(y))
        prev = y
    return total


def _subgradient_path(instance: Instance, n: int, *, theta=None, endpoint=None,
                      cfg: SolverConfig, Y0=None):
    """Projected subgradient with Polyak-type steps on the path variables.

    Returns (best objective, final point, best path, estimated gap).
    """
    tag = instance.norm
    d = instance.dim
    reqs = instance.requests[:n]

    def grad_norm(u):
        if tag is NormTag.L2:
            r = np.linalg.norm(u)
            return u / r if r > 0 else np.zeros_like(u)
        if tag is NormTag.L1:
            return np.sign(u)
        out = np.zeros_like(u)
        if np.any(u != 0):
            j = int(np.argmax(np.abs(u)))
            out[j] = np.sign(u[j])
        return out

    def objective(Y):
        val = _path_cost(instance, reqs, Y, tag)
        if endpoint is not None:
            val += float(norm(endpoint - Y[-1], tag))
        if theta is not None:
            val -= float(theta @ Y[-1])
        return val

    def project(Y):
        out = Y.copy()
        for i, req in enumerate(reqs):
            if isinstance(req, HPolytope):
                out[i] = euclid_project(out[i], req)
        return out

    if Y0 is None:
        Y = np.array([r.center if isinstance(r, HPolytope) else np.zeros(d) for r in reqs])
    else:
        Y = np.array(Y0, dtype=float)
    Y = project(Y)
    best = objective(Y)
    bestY = Y.copy()
    avg = np.zeros_like(Y)
    wsum = 0.0
    scale = 1.0 + abs(best)
    delta = 0.5 * scale
    stall = 0
    for it in range(cfg.max_iter):
        G = np.zeros_like(Y)
        prev = np.zeros(d)
        for i, req in enumerate(reqs):
            gm = grad_norm(Y[i] - prev)
            G[i] += gm
            if i > 0:
                G[i - 1] -= gm
            if isinstance(req, MaxAffine):
                vals = req.gradients @ Y[i] + req.intercepts
                G[i] += req.gradients[int(np.argmax(vals))]
            prev = Y[i]
        if endpoint is not None:
            G[-1] -= grad_norm(endpoint - Y[-1])
        if theta is not None:
            G[-1] -= theta
        gg = float(np.sum(G * G))
        if gg == 0.0:
            break
        fY = objective(Y)
        step = (fY - (best - delta)) / gg
        Y = project(Y - step * G)
        fY = objective(Y)
        avg += step * Y
        wsum += step
        if fY < best - 1e-12 * scale:
            best, bestY = fY, Y.copy()
            stall = 0
        else:
            stall += 1
            if stall > 50:
                delta *= 0.5
                stall = 0
        if delta < 0.25 * cfg.tol * scale:
            break
    if wsum > 0:
        Ya = project(avg / wsum)
        fa = objective(Ya)
        if fa < best:
            best, bestY = fa, Ya
    return best, bestY[-1].copy(), bestY, 2.0 * delta


# ---------------------------------------------------------------------------
# handle


class WorkFunctionHandle:
    """A request prefix plus solver settings; evaluates ``W_n`` and friends.

    Handles are cheap to create and immutable apart from an internal
    memo of the offline optimum.
    """

    def __init__(self, instance: Instance, n: int | None = None,
                 solver: SolverConfig | None = None):
        n = len(instance) if n is None else int(n)
        if not 0 <= n <= len(instance):
            raise ValidationError(f"prefix length {n} outside [0, {len(instance)}]")
        self.instance = instance
        self.n = n
        self.solver = solver or SolverConfig()
        self._chains = {}
        self._opt = None

    @property
    def dim(self):
        return self.instance.dim

    @property
    def norm(self) -> NormTag:
        return self.instance.norm

    @property
    def requests(self):
        return self.instance.requests[: self.n]

    def with_solver(self, solver: SolverConfig) -> "WorkFunctionHandle":
        return WorkFunctionHandle(self.instance, self.n, solver)

    def _chain(self, tail):
        if tail not in self._chains:
            self._chains[tail] = _build_chain(self.instance, self.n, tail, self.solver.box_radius)
        return self._chains[tail]

    # -- work function ----------------------------------------------------

    def eval_work_many(self, X) -> BatchResult:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n == 0:
            vals = norm(X, self.norm)
            return BatchResult(vals, X.copy(), np.zeros(len(X)))
        mode = self.solver.mode
        if mode == "ipm":
            chain = self._chain("work")
            obj, gap, path, spend, status, iters = _run_chain(
                chain, self.norm, np.zeros_like(X), X, cfg=self.solver)
            _check_status(status, iters, obj, "eval_work")
            return BatchResult(obj, X.copy(), gap, path, spend, iters)
        vals, gaps = [], []
        for x in X:
            if mode == "lp":
                v, _, _ = _lp_path(self.instance, self.n, theta=None, endpoint=x)
                vals.append(v)
                gaps.append(0.0)
            else:
                v, _, _, g = _subgradient_path(self.instance, self.n, endpoint=x, cfg=self.solver)
                vals.append(v)
                gaps.append(g)
        return BatchResult(np.array(vals), X.copy(), np.array(gaps))

    def eval_work(self, x) -> float:
        return float(self.eval_work_many(np.asarray(x, dtype=float)[None, :]).values[0])

    # -- conjugate --------------------------------------------------------

    def eval_conjugate_many(self, V, check=True) -> BatchResult:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if check:
            dn = norm(V, self.norm.dual)
            if np.any(dn > 1 + 1e-9):
                raise DualNormViolation(f"conjugate queried at dual norm {dn.max():.6g} > 1")
        if self.n == 0:
            return BatchResult(np.zeros(len(V)), np.zeros_like(V), np.zeros(len(V)),
                               spend=np.zeros(len(V)), iterations=np.zeros(len(V), dtype=np.int64))
        mode = self.solver.mode
        if mode == "ipm":
            chain = self._chain("conj")
            obj, gap, path, spend, status, iters = _run_chain(
                chain, self.norm, V, chain.p[-1], cfg=self.solver)
            _check_status(status, iters, obj, "eval_conjugate")
            return BatchResult(obj, path[:, -1, :].copy(), gap, path, spend, iters)
        vals, ends, gaps = [], [], []
        for v in V:
            if mode == "lp":
                val, end, _ = _lp_path(self.instance, self.n, theta=v)
                g = 0.0
            else:
                val, end, _, g = _subgradient_path(self.instance, self.n, theta=v, cfg=self.solver)
            vals.append(val)
            ends.append(end)
            gaps.append(g)
        return BatchResult(np.array(vals), np.array(ends), np.array(gaps))

    def eval_conjugate(self, v) -> ConjugateResult:
        r = self.eval_conjugate_many(np.asarray(v, dtype=float)[None, :])
        return ConjugateResult(float(r.values[0]), r.endpoints[0], float(r.gaps[0]))

    # -- offline optimum --------------------------------------------------

    def _opt_solve(self):
        if self._opt is None:
            r = self.eval_conjugate_many(np.zeros((1, self.dim)))
            path = r.paths[0] if r.paths is not None else None
            self._opt = (float(r.values[0]), r.endpoints[0], float(r.gaps[0]), path)
        return self._opt

    def opt_value(self) -> float:
        return max(0.0, self._opt_solve()[0])

    def argmin(self) -> np.ndarray:
        """An offline-optimal final position (the conjugate point of 0)."""
        return self._opt_solve()[1].copy()

    # -- level sets -------------------------------------------------------

    def level_set_support_many(self, R: float, thetas) -> BatchResult:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        R = float(R)
        opt, _, opt_gap, opt_path = self._opt_solve()
        tol = self.solver.tol * (1 + abs(opt))
        if R < opt - tol:
            raise EmptyLevelSet(f"level {R:.6g} is below the optimum {opt:.6g}")
        if self.solver.mode == "lp":
            vals, wits = [], []
            for th in thetas:
                val, wit, _ = _lp_path(self.instance, self.n, theta=th, level_budget=R)
                vals.append(-val)
                wits.append(wit)
            return BatchResult(np.array(vals), np.array(wits), np.zeros(len(thetas)))
        if self.solver.mode == "subgradient" or R <= opt + opt_gap + tol:
            return self._level_set_by_conjugates(R, thetas)
        # When the conjugate path ends inside the level set the multiplier of
        # the budget is 1 and h(theta) = R - W*(theta); the witness walks on
        # from v* along a norming direction until the budget is used up.
        vals = np.empty(len(thetas))
        wits = np.empty_like(thetas)
        gaps = np.empty(len(thetas))
        iters = np.zeros(len(thetas), dtype=np.int64)
        scale = norm(thetas, self.norm.dual)
        zero = scale == 0.0
        vals[zero], gaps[zero] = 0.0, 0.0
        wits[zero] = self.argmin()
        unit = thetas[~zero] / scale[~zero, None]
        cj = self.eval_conjugate_many(unit, check=False)
        inside = cj.spend <= R
        idx = np.flatnonzero(~zero)
        sel = idx[inside]
        u = _norming(unit[inside], self.norm)
        slack = R - cj.spend[inside]
        wits[sel] = cj.endpoints[inside] + slack[:, None] * u
        vals[sel] = scale[sel] * (R - cj.values[inside])
        gaps[sel] = scale[sel] * cj.gaps[inside]
        iters[sel] = cj.iterations[inside]
        rest = idx[~inside]
        if rest.size:
            chain = self._chain("level")
            z0 = self._level_start(R, opt, opt_path, len(chain.k))
            obj, gap, path, spend, status, it = _run_chain(
                chain, self.norm, thetas[rest], chain.p[-1], cost_flag=False, budget=R,
                z0=z0, cfg=self.solver)
            _check_status(status, it, obj, "level_set_support")
            vals[rest], wits[rest], gaps[rest], iters[rest] = -obj, path[:, -1, :], gap, it
        return BatchResult(vals, wits, gaps, iterations=iters)

    def _level_start(self, R, opt, opt_path, stages):
        """Strictly feasible start for the budgeted chain.

        The optimal path hugs the body boundaries (barrier slack ~ 1/t), which
        makes Newton systems there badly conditioned; pull body points toward
        the body centres while keeping half of the budget slack ``R - opt``.
        """
        d = self.dim
        reqs = self.requests
        Y = np.array(opt_path[: self.n], dtype=float)
        centre = Y.copy()
        for i, req in enumerate(reqs):
            if isinstance(req, HPolytope):
                centre[i] = req.affine_point + req.affine_basis @ req.center_z
        lam = 0.5
        while lam > 1e-6:
            blend = (1 - lam) * Y + lam * centre
            if _path_cost(self.instance, reqs, blend, self.norm) <= opt + 0.5 * (R - opt):
                break
            lam *= 0.25
        else:
            blend = Y
        z0 = np.zeros((stages, d))
        for i, req in enumerate(reqs):
            y = blend[i]
            if isinstance(req, HPolytope):
                z0[i, : req.affine_dim] = req.affine_basis.T @ (y - req.affine_point)
            else:
                z0[i] = y
        z0[-1] = blend[-1] if self.n else 0.0
        return z0

    def _level_set_by_conjugates(self, R, thetas):
        """Support of ``{W <= R}`` via ``min_{lam >= |theta|_*} lam (R - W*(theta/lam))``."""
        vals, wits, gaps = [], [], []
        for th in thetas:
            lo = float(norm(th, self.norm.dual))
            if lo == 0.0:
                vals.append(0.0)
                wits.append(self.argmin())
                gaps.append(self.solver.tol)
                continue

            def phi(lam):
                r = self.eval_conjugate(th / lam)
                return lam * (R - r.value), r

            # phi is convex in lam; bracket then golden-section search
            hi = lo * 2.0
            f_lo, _ = phi(lo)
            f_hi, _ = phi(hi)
            while f_hi < f_lo and hi < 1e8 * lo:
                lo, f_lo = hi, f_hi
                hi *= 2.0
                f_hi, _ = phi(hi)
            a, b = max(float(norm(th, self.norm.dual)), lo / 2.0), hi
            g = (math.sqrt(5) - 1) / 2
            c1, c2 = b - g * (b - a), a + g * (b - a)
            f1, r1 = phi(c1)
            f2, r2 = phi(c2)
            for _ in range(80):
                if f1 <= f2:
                    b, c2, f2, r2 = c2, c1, f1, r1
                    c1 = b - g * (b - a)
                    f1, r1 = phi(c1)
                else:
                    a, c1, f1, r1 = c1, c2, f2, r2
                    c2 = a + g * (b - a)
                    f2, r2 = phi(c2)
                if b - a < 1e-10 * b:
                    break
            f, r = (f1, r1) if f1 <= f2 else (f2, r2)
            vals.append(f)
            wits.append(r.endpoint)
            gaps.append(r.gap * b + self.solver.tol)
        return BatchResult(np.array(vals), np.array(wits), np.array(gaps))

    def level_set_support(self, R: float, theta):
        r = self.level_set_support_many(R, np.asarray(theta, dtype=float)[None, :])
        return float(r.values[0]), r.endpoints[0]


# ---------------------------------------------------------------------------
# module-level operations


def eval_work(h: WorkFunctionHandle, x) -> float:
    return h.eval_work(x)


def eval_conjugate(h: WorkFunctionHandle, v) -> ConjugateResult:
    return h.eval_conjugate(v)


def opt_value(h: WorkFunctionHandle) -> float:
    return h.opt_value()


def level_set_support(h: WorkFunctionHandle, R: float, theta):
    return h.level_set_support(R, theta)


def finite_diff_conjugate_rate(h: WorkFunctionHandle, v, delta: float) -> float:
    """``(W*_{n+delta}(v) - W*_n(v)) / delta`` where the next request of the
    instance (a function) is served for a fraction ``delta`` of a time unit."""
    if h.n >= len(h.instance):
        raise ValidationError("no next request to differentiate along")
    f = h.instance.requests[h.n]
    if not isinstance(f, MaxAffine):
        raise ValidationError("the next request must be a function")
    v = np.asarray(v, dtype=float)
    if norm(v, h.norm.dual) >= 1:
        raise DualNormViolation("finite differences need |v|_* < 1")
    base = h.eval_conjugate(v).value
    stepped = Instance(h.dim, h.norm, h.requests + (f.scaled(delta),))
    after = WorkFunctionHandle(stepped, solver=h.solver).eval_conjugate(v).value
    return (after - base) / delta


def brute_force_work(instance: Instance, n: int, x, grid_step: float, box=None,
                     chunk: int = 2048):
    """Grid dynamic-programming oracle for ``W_n`` in dimension <= 2.

    Path points are restricted to grid points of ``box`` (default: a box
    around the origin, the query points and all body bounding boxes).
    ``x`` may be a single point or an array of points.
    """
    d = instance.dim
    if d > 2:
        raise DimensionTooLarge(f"brute force oracle supports d <= 2, got {d}")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    tag = instance.norm
    reqs = instance.requests[:n]
    if n == 0:
        out = norm(X, tag)
        return out if np.ndim(x) > 1 else float(out[0])
    if box is None:
        lo = np.minimum(X.min(axis=0), 0.0)
        hi = np.maximum(X.max(axis=0), 0.0)
        for r in reqs:
            if isinstance(r, HPolytope):
                lo = np.minimum(lo, r.bbox[0])
                hi = np.maximum(hi, r.bbox[1])
        lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = (np.asarray(t, dtype=float) for t in box)
    axes = [np.arange(math.floor(l / grid_step), math.ceil(u / grid_step) + 1) * grid_step
            for l, u in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    def candidates(req):
        if isinstance(req, HPolytope):
            lo_b, hi_b = req.bbox
            sub = [a[(a >= l - 1e-9) & (a <= u + 1e-9)] for a, l, u in zip(axes, lo_b, hi_b)]
            pts = np.stack(np.meshgrid(*sub, indexing="ij"), axis=-1).reshape(-1, d)
            scale = np.linalg.norm(req.A, axis=1)
            ok = np.all(pts @ req.A.T <= req.b + 1e-9 * scale, axis=1)
            return pts[ok], np.zeros(int(ok.sum()))
        return grid, req(grid)

    def relax(src, val, dst):
        out = np.empty(len(dst))
        for s in range(0, len(dst), chunk):
            blk = dst[s:s + chunk]
            dist = norm(blk[:, None, :] - src[None, :, :], tag)
            out[s:s + chunk] = np.min(dist + val[None, :], axis=1)
        return out

    pts, cost = candidates(reqs[0])
    if len(pts) == 0:
        raise ValidationError("grid misses request 0; refine grid_step")
    val = norm(pts, tag) + cost
    for req in reqs[1:]:
        nxt, cost = candidates(req)
        if len(nxt) == 0:
            raise ValidationError("grid misses a request; refine grid_step")
        val = relax(pts, val, nxt) + cost
        pts = nxt
    out = relax(pts, val, X)
    return out if np.ndim(x) > 1 else float(out[0])
