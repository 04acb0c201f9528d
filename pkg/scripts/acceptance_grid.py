"""Rerun the 50-run body suite and print movement against the d * OPT cap.

    python scripts/acceptance_grid.py --samples 2048
"""
import argparse
import time
from dataclasses import dataclass

from steinerchase.harness import RunConfig, execute
from steinerchase.instances import HypercubeFaces, RandomBodies, gen


@dataclass(frozen=True)
class GridConfig:
    samples: int = 8192
    tol: float = 1e-6
    slack: float = 1.15


def cells():
    out = []
    for d in (1, 2, 3):
        for tag in ("l2", "linf"):
            for seed, N in zip((1, 2, 3, 4), (16, 8, 12, 4)):
                out.append((HypercubeFaces(d, N, adaptive=True, seed=seed), tag))
            for seed, N in zip((1, 2, 3, 4), (8, 12, 16, 6)):
                out.append((RandomBodies(d, N, seed=seed), tag))
    out.append((RandomBodies(2, 10, seed=5), "l2"))
    out.append((HypercubeFaces(3, 10, adaptive=True, seed=5), "linf"))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=GridConfig.samples)
    ap.add_argument("--tol", type=float, default=GridConfig.tol)
    args = ap.parse_args(argv)
    g = GridConfig(args.samples, args.tol)
    worst = 0.0
    for spec, tag in cells():
        t0 = time.time()
        cfg = RunConfig(algo="steiner", norm=tag, samples=g.samples, tol=g.tol, seed=spec.seed)
        rep = execute(gen(spec, tag), cfg)
        cap = spec.d * g.slack * rep.opt_total + rep.estimator_error_budget
        frac = rep.total_movement / cap if cap > 0 else 0.0
        worst = max(worst, frac)
        print(f"{type(spec).__name__:15s} d={spec.d} N={spec.N:2d} seed={spec.seed} {tag:4s} "
              f"ratio={rep.ratio:6.3f} movement/cap={frac:5.3f} flagged={rep.flagged} "
              f"{time.time() - t0:5.1f}s", flush=True)
    print(f"worst movement/cap {worst:.3f}")


if __name__ == "__main__":
    main()
