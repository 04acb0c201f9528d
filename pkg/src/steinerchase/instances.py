"""Instance generators, adaptive adversaries and JSON serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidSpec, ParseError, ValidationError
from .geometry import HPolytope, MaxAffine, NormTag, norm, stream
from .workfn import Instance

# ---------------------------------------------------------------------------
# generator specs


@dataclass(frozen=True)
class HypercubeFaces:
    d: int
    N: int
    adaptive: bool = True
    seed: int = 0


@dataclass(frozen=True)
class NestedCuts:
    d: int
    N: int
    seed: int = 0


@dataclass(frozen=True)
class RandomBodies:
    d: int
    N: int
    seed: int = 0
    scale: float = 2.0


@dataclass(frozen=True)
class RandomMaxAffine:
    d: int
    N: int
    seed: int = 0
    pieces: int = 0  # non-zero pieces; 0 means d + 2


GeneratorSpec = Union[HypercubeFaces, NestedCuts, RandomBodies, RandomMaxAffine]

_FAMILIES = {
    "hypercube": (HypercubeFaces, {"d": int, "N": int, "adaptive": "bool", "seed": int}),
    "nested": (NestedCuts, {"d": int, "N": int, "seed": int}),
    "random": (RandomBodies, {"d": int, "N": int, "seed": int, "scale": float}),
    "maxaffine": (RandomMaxAffine, {"d": int, "N": int, "seed": int, "pieces": int}),
}


def parse_spec(text: str) -> GeneratorSpec:
    """Parse ``family:key=value,...`` (e.g. ``hypercube:d=2,N=8``)."""
    fam, _, rest = text.strip().partition(":")
    if fam not in _FAMILIES:
        raise InvalidSpec(f"unknown generator family {fam!r}; expected one of {sorted(_FAMILIES)}")
    cls, fields = _FAMILIES[fam]
    kw = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq or key not in fields:
            raise InvalidSpec(f"bad generator field {item!r} for {fam}")
        conv = fields[key]
        try:
            if conv == "bool":
                if val.lower() not in ("0", "1", "true", "false"):
                    raise ValueError(val)
                kw[key] = val.lower() in ("1", "true")
            else:
                kw[key] = conv(val)
        except ValueError:
            raise InvalidSpec(f"bad value for {key}: {val!r}") from None
    for req in ("d", "N"):
        if req not in kw:
            raise InvalidSpec(f"generator spec needs {req}")
    spec = cls(**kw)
    _validate_spec(spec)
    return spec


def _validate_spec(spec):
    if spec.d < 1 or spec.N < 1:
        raise InvalidSpec("need d >= 1 and N >= 1")
    if isinstance(spec, RandomBodies) and not spec.scale > 0:
        raise InvalidSpec("scale must be positive")
    if isinstance(spec, RandomMaxAffine) and spec.pieces < 0:
        raise InvalidSpec("pieces must be >= 0")


def face(d: int, axis: int, sign: float) -> HPolytope:
    """The face ``x_axis = sign`` of ``[-1, 1]^d``."""
    lo, hi = -np.ones(d), np.ones(d)
    lo[axis] = hi[axis] = sign
    return HPolytope.box(lo, hi)


class HypercubeAdversary:
    """Emits faces of ``[-1, 1]^d``.

    Adaptive: the face farthest from the chaser, skipping the axis of the
    previous request (so the same signed face never repeats; in d = 1 only
    that face is skipped).  Ties are broken by a seeded stream.  Otherwise
    round-robin over axes with alternating signs.
    """

    def __init__(self, spec: HypercubeFaces, tag):
        self.spec = spec
        self.dim = spec.d
        self.norm = NormTag.parse(tag)
        self.length = spec.N
        self._last = None
        self._faces = {}

    def _face(self, axis, sign):
        key = (axis, sign)
        if key not in self._faces:
            self._faces[key] = face(self.dim, axis, sign)
        return self._faces[key]

    def choose(self, position, step):
        d = self.dim
        if not self.spec.adaptive:
            return step % d, (1.0 if (step // d) % 2 == 0 else -1.0)
        cands, dists = [], []
        for axis in range(d):
            for sign in (1.0, -1.0):
                if self._last is not None and (
                        (axis, sign) == self._last or (d > 1 and axis == self._last[0])):
                    continue
                proj = np.clip(position, -1.0, 1.0)
                proj[axis] = sign
                cands.append((axis, sign))
                dists.append(float(norm(position - proj, self.norm)))
        dists = np.array(dists)
        top = np.flatnonzero(dists >= dists.max() - 1e-9)
        rng = stream(self.spec.seed, 7, step)
        return cands[int(top[rng.integers(len(top))])]

    def next_request(self, position, step):
        axis, sign = self.choose(np.asarray(position, dtype=float), step)
        self._last = (axis, sign)
        return self._face(axis, sign)


def _nested_cuts(spec: NestedCuts, tag) -> Instance:
    d = spec.d
    rng = stream(spec.seed, 11)
    A = np.vstack([np.eye(d), -np.eye(d)])
    b = np.ones(2 * d)
    reqs = []
    body = HPolytope(A, b)
    for n in range(spec.N):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        # cut through a point near the current centre; keeps half a ball around it
        c = body.center + 0.5 * body.inradius * rng.uniform(-1, 1, d) / math.sqrt(d)
        A = np.vstack([A, u])
        b = np.append(b, u @ c)
        nxt = HPolytope(A, b)
        if reqs and not nxt.contained_in(reqs[-1]):
            raise ValidationError("nested generator produced a non-nested pair")
        reqs.append(nxt)
        body = nxt
    return Instance(d, tag, reqs)


def _random_bodies(spec: RandomBodies, tag) -> Instance:
    d, s = spec.d, spec.scale
    rng = stream(spec.seed, 13)
    reqs = []
    box_A = np.vstack([np.eye(d), -np.eye(d)])
    for n in range(spec.N):
        if n % 2 == 0:
            half = rng.uniform(0.05, 0.4, d) * s
            c = rng.uniform(-s, s, d) * 0.8
            lo, hi = np.maximum(c - half, -s), np.minimum(c + half, s)
            reqs.append(HPolytope.box(lo, hi))
        else:
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            mid = rng.uniform(-0.7, 0.7) * s
            w = rng.uniform(0.05, 0.3) * s
            A = np.vstack([box_A, u, -u])
            b = np.concatenate([np.full(2 * d, s), [mid + w, -(mid - w)]])
            reqs.append(HPolytope(A, b))
    return Instance(d, tag, reqs)


def _random_maxaffine(spec: RandomMaxAffine, tag) -> Instance:
    d = spec.d
    k = spec.pieces or d + 2
    rng = stream(spec.seed, 17)
    reqs = []
    for n in range(spec.N):
        # zero on a small region around a target point, growing linearly away from it
        target = rng.standard_normal(d)
        target *= rng.uniform(0.5, 2.0) / np.linalg.norm(target)
        G = rng.standard_normal((k, d))
        G *= (rng.uniform(0.3, 1.5, k) / np.linalg.norm(G, axis=1))[:, None]
        c = -(G @ target) - rng.uniform(0.0, 0.3, k)
        reqs.append(MaxAffine(np.vstack([np.zeros(d), G]), np.concatenate([[0.0], c])))
    return Instance(d, tag, reqs)


def gen(spec: Union[GeneratorSpec, str], tag="l2"):
    """Build an Instance, or an adversary object for adaptive families."""
    if isinstance(spec, str):
        spec = parse_spec(spec)
    _validate_spec(spec)
    tag = NormTag.parse(tag)
    if isinstance(spec, HypercubeFaces):
        adv = HypercubeAdversary(spec, tag)
        if spec.adaptive:
            return adv
        return Instance(spec.d, tag, [adv.next_request(np.zeros(spec.d), n) for n in range(spec.N)])
    if isinstance(spec, NestedCuts):
        return _nested_cuts(spec, tag)
    if isinstance(spec, RandomBodies):
        return _random_bodies(spec, tag)
    if isinstance(spec, RandomMaxAffine):
        return _random_maxaffine(spec, tag)
    raise InvalidSpec(f"unsupported generator spec {spec!r}")


# ---------------------------------------------------------------------------
# serialization


def _num(x) -> str:
    x = float(x)
    if x == 0.0 and math.copysign(1.0, x) < 0:
        return "-0.0"  # "-0" would parse back as the integer 0
    return format(x, ".17g")


def _vec(v) -> str:
    return "[" + ", ".join(_num(x) for x in np.ravel(v)) + "]"


def _mat(M) -> str:
    return "[" + ", ".join(_vec(row) for row in np.atleast_2d(M)) + "]"


def dumps(instance: Instance) -> str:
    lines = ["{", f'  "dim": {int(instance.dim)},', f'  "norm": "{instance.norm.value}",',
             '  "requests": [']
    items = []
    for r in instance.requests:
        if isinstance(r, HPolytope):
            items.append(f'    {{"type": "body", "A": {_mat(r.A)}, "b": {_vec(r.b)}}}')
        else:
            items.append(f'    {{"type": "func", "pieces": {_mat(r.pieces)}}}')
    lines.append(",\n".join(items))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(line for line in lines if line) + "\n"


def save(instance: Instance, path) -> None:
    Path(path).write_text(dumps(instance), encoding="utf-8")


def _expect_keys(obj, required, where, line=None):
    if not isinstance(obj, dict):
        raise ParseError(f"{where} must be an object", line=line)
    for key in required:
        if key not in obj:
            raise ParseError(f"{where} is missing required field", line=line, field=key)
    extra = set(obj) - set(required)
    if extra:
        raise ParseError(f"{where} has unknown field", line=line, field=sorted(extra)[0])


def _array(value, field, where, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: not a numeric array", field=field) from None
    if arr.ndim != ndim or arr.size == 0:
        raise ParseError(f"{where}: expected a nonempty {ndim}-d array", field=field)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: non-finite entry", field=field)
    return arr


def loads(text: str) -> Instance:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON: {e.msg}", line=e.lineno) from None
    _expect_keys(obj, ("dim", "norm", "requests"), "instance")
    dim = obj["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ParseError("dim must be a positive integer", field="dim")
    try:
        tag = NormTag.parse(obj["norm"])
    except ValidationError:
        raise ParseError(f"unknown norm {obj['norm']!r}", field="norm") from None
    if not isinstance(obj["requests"], list):
        raise ParseError("requests must be a list", field="requests")
    reqs = []
    for i, r in enumerate(obj["requests"]):
        where = f"request {i}"
        if not isinstance(r, dict) or "type" not in r:
            raise ParseError(f"{where} needs a type", field="type")
        if r["type"] == "body":
            _expect_keys(r, ("type", "A", "b"), where)
            A = _array(r["A"], "A", where, 2)
            b = _array(r["b"], "b", where, 1)
            if A.shape != (len(b), dim):
                raise ParseError(f"{where}: A must be ({len(b)}, {dim})", field="A")
            reqs.append(HPolytope(A, b))
        elif r["type"] == "func":
            _expect_keys(r, ("type", "pieces"), where)
            P = _array(r["pieces"], "pieces", where, 2)
            if P.shape[1] != dim + 1:
                raise ParseError(f"{where}: pieces need {dim + 1} columns", field="pieces")
            reqs.append(MaxAffine.from_pieces(P))
        else:
            raise ParseError(f"{where}: unknown type {r['type']!r}", field="type")
    return Instance(dim, tag, reqs)


def load(path) -> Instance:
    return loads(Path(path).read_text(encoding="utf-8"))
