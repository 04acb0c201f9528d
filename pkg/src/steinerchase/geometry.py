"""Norms, H-polytopes, max-affine functions, projections and dual-sphere samplers."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial import HalfspaceIntersection

from .errors import InfeasibleBody, MaxIterations, Unbounded, ValidationError

# a body whose Chebyshev radius falls below this is treated as lower dimensional
INTERIOR_TOL = 1e-9
FEAS_TOL = 1e-9


class NormTag(str, enum.Enum):
    L2 = "l2"
    LINF = "linf"
    L1 = "l1"

    @property
    def dual(self) -> "NormTag":
        return _DUAL[self]

    @property
    def code(self) -> int:
        return _CODE[self]

    @property
    def ord(self):
        return _ORD[self]

    @classmethod
    def parse(cls, value) -> "NormTag":
        if isinstance(value, NormTag):
            return value
        key = str(value).strip().lower()
        aliases = {"euclidean": "l2", "2": "l2", "inf": "linf", "max": "linf", "1": "l1"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown norm tag {value!r}; expected l2, linf or l1") from None


_DUAL = {NormTag.L2: NormTag.L2, NormTag.LINF: NormTag.L1, NormTag.L1: NormTag.LINF}
_CODE = {NormTag.L2: 0, NormTag.LINF: 1, NormTag.L1: 2}
_ORD = {NormTag.L2: 2, NormTag.LINF: np.inf, NormTag.L1: 1}


def norm(v, tag: NormTag = NormTag.L2):
    """Norm of ``v`` (or of each row of a 2-D array) under ``tag``."""
    v = np.asarray(v, dtype=float)
    return np.linalg.norm(v, ord=NormTag.parse(tag).ord, axis=-1)


def dual_norm(v, tag: NormTag = NormTag.L2):
    return norm(v, NormTag.parse(tag).dual)


def _as_vector(v, name="vector") -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Halfspace:
    """The set ``{x : normal . x <= offset}``."""

    normal: tuple
    offset: float

    def __post_init__(self):
        a = _as_vector(self.normal, "halfspace normal")
        if not np.any(a != 0.0):
            raise ValidationError("halfspace normal must be nonzero")
        if not np.isfinite(self.offset):
            raise ValidationError("halfspace offset must be finite")
        object.__setattr__(self, "normal", tuple(float(t) for t in a))
        object.__setattr__(self, "offset", float(self.offset))


def _lp(c, A, b, A_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=A, b_ub=b, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds if bounds is not None else (None, None), method="highs")
    return res


class HPolytope:
    """Bounded, nonempty intersection of halfspaces ``A x <= b``.

    Construction certifies feasibility and boundedness with a handful of LPs and
    works out the affine hull, so lower-dimensional bodies (a face of a cube, a
    segment, a point) are handled exactly: the body is parametrised as
    ``p + Z z`` with ``z`` ranging over a full-dimensional polytope.
    """

    def __init__(self, A, b):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] == 0 or A.shape[0] != b.shape[0]:
            raise ValidationError("HPolytope needs a nonempty (m, d) matrix and m offsets")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValidationError("HPolytope data must be finite")
        if np.any(np.all(A == 0.0, axis=1)):
            raise ValidationError("halfspace normal must be nonzero")
        self.A = A
        self.b = b
        self.A.setflags(write=False)
        self.b.setflags(write=False)
        self.dim = A.shape[1]
        self._certify()

    @classmethod
    def from_halfspaces(cls, halfspaces):
        halfspaces = list(halfspaces)
        if not halfspaces:
            raise ValidationError("HPolytope needs at least one halfspace")
        return cls([h.normal for h in halfspaces], [h.offset for h in halfspaces])

    @classmethod
    def box(cls, lo, hi):
        lo = _as_vector(lo, "box lower corner")
        hi = _as_vector(hi, "box upper corner")
        d = lo.shape[0]
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def halfspaces(self):
        return [Halfspace(tuple(a), float(c)) for a, c in zip(self.A, self.b)]

    def _certify(self):
        A, b, d = self.A, self.b, self.dim
        row_norm = np.linalg.norm(A, axis=1)
        # bounding box via per-axis support LPs
        lo = np.empty(d)
        hi = np.empty(d)
        for axis in range(d):
            for sign in (1.0, -1.0):
                c = np.zeros(d)
                c[axis] = -sign
                res = _lp(c, A, b)
                if res.status == 2:
                    raise InfeasibleBody("polytope is empty")
                if res.status == 3:
                    raise Unbounded(f"polytope is unbounded along axis {axis}")
                if res.status != 0:
                    raise ValidationError(f"support LP failed: {res.message}")
                if sign > 0:
                    hi[axis] = res.x[axis]
                else:
                    lo[axis] = res.x[axis]
        self.bbox = (lo, hi)
        self.radius = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        scale = 1.0 + self.radius

        # affine hull: peel off implicit equalities until the rest has interior
        p = np.zeros(d)
        Z = np.eye(d)
        eq_rows = np.zeros(len(b), dtype=bool)
        while True:
            G = A @ Z
            h = b - A @ p
            active = ~eq_rows
            gn = np.linalg.norm(G, axis=1)
            keep = active & (gn > 1e-12 * row_norm)
            k = Z.shape[1]
            if k == 0:
                break
            Gk, hk, gk = G[keep], h[keep], gn[keep]
            c = np.zeros(k + 1)
            c[-1] = -1.0
            res = _lp(c, np.hstack([Gk, gk[:, None]]), hk,
                      bounds=[(None, None)] * k + [(None, scale)])
            if res.status != 0:
                raise InfeasibleBody(f"Chebyshev-centre LP failed: {res.message}")
            z_c, tau = res.x[:k], res.x[-1]
            if tau > INTERIOR_TOL * scale:
                break
            # rows that cannot be slack anywhere in the body are equalities
            new_eq = np.zeros(len(b), dtype=bool)
            for r in np.flatnonzero(keep):
                res_r = _lp(G[r], Gk, hk, bounds=[(None, None)] * k)
                if res_r.status == 0 and h[r] - res_r.fun <= INTERIOR_TOL * scale * row_norm[r]:
                    new_eq[r] = True
            if not new_eq.any():
                break
            eq_rows |= new_eq
            AE, bE = A[eq_rows], b[eq_rows]
            _, sv, Vt = np.linalg.svd(AE)
            rank = int(np.sum(sv > 1e-10 * sv.max()))
            # a feasible point of the current parametrisation, snapped onto the hull
            x0 = p + Z @ z_c
            Z = Vt[rank:].T.copy()
            p = x0 - np.linalg.pinv(AE) @ (AE @ x0 - bE)
        self.eq_rows = eq_rows
        self.affine_point = p
        self.affine_basis = Z
        k = Z.shape[1]
        G = A @ Z
        h = b - A @ p
        gn = np.linalg.norm(G, axis=1)
        keep = (~eq_rows) & (gn > 1e-12 * row_norm)
        self.ineq_rows = keep
        if k == 0:
            self.center_z = np.zeros(0)
        else:
            self.center_z = z_c
        self.center = p + Z @ self.center_z
        self.inradius = float(tau) if k > 0 else 0.0

    @property
    def affine_dim(self) -> int:
        return self.affine_basis.shape[1]

    @cached_property
    def vertices(self) -> np.ndarray:
        """Vertices as an (nv, d) array (exact up to floating point)."""
        k = self.affine_dim
        p, Z = self.affine_point, self.affine_basis
        if k == 0:
            return p[None, :].copy()
        G = (self.A @ Z)[self.ineq_rows]
        h = (self.b - self.A @ p)[self.ineq_rows]
        if k == 1:
            g = G[:, 0]
            up = h[g > 0] / g[g > 0]
            dn = h[g < 0] / g[g < 0]
            zs = np.array([[dn.max()], [up.min()]])
        else:
            hs = HalfspaceIntersection(np.hstack([G, -h[:, None]]), self.center_z)
            zs = hs.intersections
            zs = zs[np.all(np.isfinite(zs), axis=1)]
        verts = p + zs @ Z.T
        scale = 1.0 + self.radius
        key = np.round(verts / (1e-9 * scale)).astype(np.int64)
        _, idx = np.unique(key, axis=0, return_index=True)
        return verts[np.sort(idx)]

    def contains(self, x, tol=FEAS_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        scale = 1.0 + self.radius
        return bool(np.all(self.A @ x <= self.b + tol * scale * np.linalg.norm(self.A, axis=1)))

    def max_violation(self, x) -> float:
        """Largest normalised halfspace violation (0 for members)."""
        x = np.asarray(x, dtype=float)
        viol = (self.A @ x - self.b) / np.linalg.norm(self.A, axis=1)
        return float(max(0.0, viol.max()))

    def translate(self, c) -> "HPolytope":
        c = _as_vector(c)
        return HPolytope(self.A, self.b + self.A @ c)

    def support_many(self, thetas) -> tuple[np.ndarray, np.ndarray]:
        """Support values and maximising vertices for each row of ``thetas``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        vals = thetas @ self.vertices.T
        idx = np.argmax(vals, axis=1)
        return vals[np.arange(len(idx)), idx], self.vertices[idx]

    def contained_in(self, other: "HPolytope", tol=1e-9) -> bool:
        """Containment test by support checks against each halfspace of ``other``."""
        scale = 1.0 + max(self.radius, other.radius)
        for a, c in zip(other.A, other.b):
            val, _ = support(self, a)
            if val > c + tol * scale * np.linalg.norm(a):
                return False
        return True

    def __eq__(self, other):
        if not isinstance(other, HPolytope):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)

    def __hash__(self):
        return hash((self.A.tobytes(), self.b.tobytes()))

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, m={len(self.b)}, radius={self.radius:.4g})"


def support(P: HPolytope, theta) -> tuple[float, np.ndarray]:
    """Support function ``max_{x in P} theta . x`` and a maximiser, by LP."""
    theta = _as_vector(theta, "direction")
    res = _lp(-theta, P.A, P.b)
    if res.status == 3:
        raise Unbounded("support LP is unbounded")
    if res.status != 0:
        raise ValidationError(f"support LP failed: {res.message}")
    w = res.x
    if np.linalg.norm(w) > P.radius * (1 + 1e-6) + 1e-9:
        raise Unbounded("support witness lies outside the certified radius")
    return float(theta @ w), w


def euclid_project(x, P: HPolytope, maxiter=None) -> np.ndarray:
    """Euclidean projection onto ``P`` (least-distance program solved as NNLS)."""
    x = _as_vector(x, "point")
    A, b = P.A, P.b
    if P.contains(x, tol=0.0):
        return x.copy()
    # min ||z|| s.t. G z >= h with G = -A, h = A x - b
    G = -A
    h = A @ x - b
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    try:
        u, _ = nnls(E, f, maxiter=maxiter)
    except RuntimeError as exc:
        raise MaxIterations(f"projection did not converge: {exc}") from exc
    r = E @ u - f
    if abs(r[-1]) < 1e-14:
        raise InfeasibleBody("projection target is empty")
    y = x - r[:-1] / r[-1]
    # polish: a couple of exact halfspace corrections for round-off
    for _ in range(3):
        viol = A @ y - b
        j = int(np.argmax(viol / np.linalg.norm(A, axis=1)))
        if viol[j] <= 0.0:
            break
        y = y - viol[j] * A[j] / (A[j] @ A[j])
    return y


@dataclass(frozen=True, eq=False)
class MaxAffine:
    """``f(x) = max_i (a_i . x + c_i)``; one piece must be identically zero."""

    gradients: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        G = np.array(self.gradients, dtype=float)
        c = np.array(self.intercepts, dtype=float).reshape(-1)
        if G.ndim != 2 or G.shape[0] == 0 or G.shape[0] != c.shape[0]:
            raise ValidationError("MaxAffine needs a nonempty (k, d) gradient matrix and k intercepts")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(c))):
            raise ValidationError("MaxAffine data must be finite")
        zero = np.all(G == 0.0, axis=1) & (c == 0.0)
        if not zero.any():
            raise ValidationError("request functions must include the zero piece (a=0, c=0)")
        G.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "gradients", G)
        object.__setattr__(self, "intercepts", c)

    @classmethod
    def from_pieces(cls, pieces):
        arr = np.array(pieces, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ValidationError("pieces must be rows [a_1..a_d, c]")
        return cls(arr[:, :-1], arr[:, -1])

    @property
    def dim(self) -> int:
        return self.gradients.shape[1]

    @property
    def pieces(self) -> np.ndarray:
        return np.hstack([self.gradients, self.intercepts[:, None]])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.max(x @ self.gradients.T + self.intercepts, axis=-1)

    def scaled(self, w: float) -> "MaxAffine":
        return MaxAffine(self.gradients * w, self.intercepts * w)

    def __eq__(self, other):
        if not isinstance(other, MaxAffine):
            return NotImplemented
        return (np.array_equal(self.gradients, other.gradients)
                and np.array_equal(self.intercepts, other.intercepts))

    def __hash__(self):
        return hash((self.gradients.tobytes(), self.intercepts.tobytes()))


def maxaffine_eval_subgrad(f: MaxAffine, x) -> tuple[float, np.ndarray]:
    """Value and the gradient of the lowest-index active piece."""
    x = _as_vector(x, "point")
    vals = f.gradients @ x + f.intercepts
    i = int(np.argmax(vals))
    return float(vals[i]), f.gradients[i].copy()


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def sample_dual_sphere(tag: NormTag, d: int, rng: np.random.Generator, size: int):
    """Draw ``size`` points of the dual unit sphere under the cone measure.

    Returns ``(theta, normals)`` with ``dual_norm(theta) == 1``,
    ``norm(normals) == 1`` and ``normals . theta == 1`` row by row.
    """
    tag = NormTag.parse(tag)
    if tag is NormTag.L2:
        g = rng.standard_normal((size, d))
        r = np.linalg.norm(g, axis=1)
        while np.any(r == 0.0):
            bad = r == 0.0
            g[bad] = rng.standard_normal((int(bad.sum()), d))
            r = np.linalg.norm(g, axis=1)
        theta = g / r[:, None]
        return theta, theta.copy()
    if tag is NormTag.LINF:
        # dual ball is the cross-polytope; cone measure is uniform on each facet
        e = rng.standard_exponential((size, d))
        while np.any(e == 0.0):
            bad = np.any(e == 0.0, axis=1)
            e[bad] = rng.standard_exponential((int(bad.sum()), d))
        signs = np.where(rng.random((size, d)) < 0.5, -1.0, 1.0)
        theta = signs * e / e.sum(axis=1, keepdims=True)
        return theta, signs
    # l1 norm: dual ball is the cube; normalise a uniform point by its sup norm
    z = rng.uniform(-1.0, 1.0, (size, d))
    while True:
        a = np.abs(z)
        top = np.sort(a, axis=1)
        bad = (top[:, -1] == 0.0)
        if d > 1:
            bad |= top[:, -1] == top[:, -2]
        if not bad.any():
            break
        z[bad] = rng.uniform(-1.0, 1.0, (int(bad.sum()), d))
    a = np.abs(z)
    face = np.argmax(a, axis=1)
    rows = np.arange(size)
    theta = z / a[rows, face][:, None]
    theta[rows, face] = np.sign(z[rows, face])
    normals = np.zeros((size, d))
    normals[rows, face] = np.sign(z[rows, face])
    return theta, normals


def sample_dual_ball(tag: NormTag, d: int, rng: np.random.Generator, size: int):
    """Uniform draws from the dual unit ball."""
    theta, _ = sample_dual_sphere(tag, d, rng, size)
    radius = rng.random(size) ** (1.0 / d)
    return theta * radius[:, None]
