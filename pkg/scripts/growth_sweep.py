"""Growth of the functional Steiner ratio with N, for several d and norms.

Writes one JSON report per (d, norm) into --out-dir.
"""
import argparse
from pathlib import Path

from steinerchase.harness import growth


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--norms", nargs="+", default=["l2", "linf"])
    ap.add_argument("--N", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--samples", type=int, default=4096)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=Path("growth_out"))
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for d in args.d:
        for tag in args.norms:
            rep = growth(d=d, Ns=tuple(args.N), norm_tag=tag, seed=args.seed, samples=args.samples)
            (args.out_dir / f"growth_d{d}_{tag}.json").write_text(rep.to_json())
            ratios = " ".join(f"N={c.N}:{c.ratio:.3f}" for c in rep.cells)
            print(f"d={d} {tag}: {ratios} slope={rep.slope:.3f}", flush=True)


if __name__ == "__main__":
    main()
