"""Monte-Carlo Steiner points of bodies, work functions and level sets.

All estimators are averages over directions drawn from the cone measure on
the boundary of the dual unit ball (or uniformly from the dual ball for the
primal form).  Antithetic pairs ``(theta, -theta)`` are on by default; the
reported standard error is computed from pair means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import HPolytope, NormTag, sample_dual_ball, sample_dual_sphere, stream
from .workfn import WorkFunctionHandle

# stream keys: one namespace per estimator family
_KEY_SPHERE = 1
_KEY_BALL = 2


@dataclass(frozen=True)
class SteinerConfig:
    samples: int = 4096
    seed: int = 0
    antithetic: bool = True
    common_random_numbers: bool = True

    def __post_init__(self):
        if int(self.samples) < 2:
            raise ValidationError("need at least 2 samples")
        if self.antithetic and int(self.samples) % 2:
            raise ValidationError("antithetic sampling needs an even sample count")


@dataclass(frozen=True)
class SteinerEstimate:
    point: np.ndarray
    stderr: float
    samples_used: int
    stderr_coords: np.ndarray = None
    gap: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.point)):
            raise ValidationError("Steiner estimate is not finite")


def _key(cfg: SteinerConfig, step: int) -> int:
    return 0 if cfg.common_random_numbers else int(step) + 1


def sphere_directions(tag, d: int, cfg: SteinerConfig, step: int = 0):
    """Cone-measure directions and normals; antithetic pairs are ``j`` and ``j + M/2``."""
    tag = NormTag.parse(tag)
    rng = stream(cfg.seed, _KEY_SPHERE, _key(cfg, step))
    if cfg.antithetic:
        th, nv = sample_dual_sphere(tag, d, rng, cfg.samples // 2)
        return np.vstack([th, -th]), np.vstack([nv, -nv])
    return sample_dual_sphere(tag, d, rng, cfg.samples)


def ball_points(tag, d: int, cfg: SteinerConfig, step: int = 0):
    tag = NormTag.parse(tag)
    rng = stream(cfg.seed, _KEY_BALL, _key(cfg, step))
    if cfg.antithetic:
        v = sample_dual_ball(tag, d, rng, cfg.samples // 2)
        return np.vstack([v, -v])
    return sample_dual_ball(tag, d, rng, cfg.samples)


def _summarise(contrib: np.ndarray, cfg: SteinerConfig, gap: float = 0.0) -> SteinerEstimate:
    """Mean and per-coordinate standard error of per-sample contributions."""
    M = contrib.shape[0]
    if cfg.antithetic:
        h = M // 2
        units = 0.5 * (contrib[:h] + contrib[h:])
    else:
        units = contrib
    point = units.mean(axis=0)
    se = units.std(axis=0, ddof=1) / np.sqrt(units.shape[0])
    return SteinerEstimate(point, float(se.max()), M, se, float(gap))


def steiner_body(P: HPolytope, tag, cfg: SteinerConfig, step: int = 0) -> SteinerEstimate:
    """``d * avg h_P(theta) n(theta)`` over the cone measure."""
    d = P.dim
    th, nv = sphere_directions(tag, d, cfg, step)
    h, _ = P.support_many(th)
    return _summarise(d * h[:, None] * nv, cfg)


def functional_steiner_dual(h: WorkFunctionHandle, cfg: SteinerConfig, step: int = 0) -> SteinerEstimate:
    """``-d * avg W*(theta) n(theta)`` over the cone measure."""
    d = h.dim
    th, nv = sphere_directions(h.norm, d, cfg, step)
    r = h.eval_conjugate_many(th, check=False)
    return _summarise(-d * r.values[:, None] * nv, cfg, float(np.max(r.gaps)))


def functional_steiner_primal(h: WorkFunctionHandle, cfg: SteinerConfig, step: int = 0) -> SteinerEstimate:
    """Average conjugate point ``v*`` over ``v`` uniform in the dual ball."""
    v = ball_points(h.norm, h.dim, cfg, step)
    r = h.eval_conjugate_many(v, check=False)
    return _summarise(r.endpoints, cfg, float(np.max(r.gaps)))


def level_set_steiner(h: WorkFunctionHandle, R: float, cfg: SteinerConfig, step: int = 0) -> SteinerEstimate:
    """Ordinary Steiner point of ``{x : W(x) <= R}``."""
    d = h.dim
    th, nv = sphere_directions(h.norm, d, cfg, step)
    r = h.level_set_support_many(R, th)
    return _summarise(d * r.values[:, None] * nv, cfg, float(np.max(r.gaps)))
