"""``steinerchase`` command line: run, check, growth."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ChaseError, SolverFailure, ValidationError
from .harness import ALGORITHMS, SUITES, CheckContext, RunConfig, execute, growth, resolve_source, run_checks

EXIT_OK, EXIT_CHECK, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steinerchase",
                                description="Chase convex bodies and functions with Steiner points.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a chaser on an instance or generator")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--instance", type=Path, help="instance JSON file")
    src.add_argument("--gen", help="generator spec, e.g. hypercube:d=2,N=8")
    r.add_argument("--algo", choices=ALGORITHMS, default="steiner")
    r.add_argument("--norm", choices=("l2", "linf", "l1"), default=None,
                   help="ambient norm (default: the instance's, or l2 for generators)")
    r.add_argument("--samples", type=int, default=4096, help="Monte-Carlo samples M")
    r.add_argument("--tol", type=float, default=1e-6)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--substeps", type=int, default=1, help="substeps m for function requests")
    r.add_argument("--out", type=Path, help="write the report here instead of stdout")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--svg", type=Path, help="trajectory plot (d = 2 only)")

    c = sub.add_parser("check", help="run invariant check suites")
    c.add_argument("--suite", action="append", choices=list(SUITES),
                   help="restrict to a suite (repeatable)")
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--samples", type=int, default=2048)
    c.add_argument("--perturb-conjugate", type=float, default=0.0,
                   help="fault injection: shift every conjugate value")

    g = sub.add_parser("growth", help="ratio growth over N on adaptive hypercube adversaries")
    g.add_argument("--d", type=int, default=3)
    g.add_argument("--N", type=int, nargs="*", default=[4, 8, 16, 32])
    g.add_argument("--norm", choices=("l2", "linf", "l1"), default="l2")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--samples", type=int, default=4096)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--out", type=Path)
    return p


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _cmd_run(a) -> int:
    source, tag = resolve_source(instance_path=a.instance, gen_spec=a.gen, norm_tag=a.norm,
                                 seed=a.seed)
    cfg = RunConfig(algo=a.algo, norm=tag.value, samples=a.samples, tol=a.tol, seed=a.seed,
                    substeps=a.substeps)
    if a.svg is not None and source.dim != 2:
        raise ValidationError("--svg needs d = 2")
    rep = execute(source, cfg)
    _emit(rep.to_json() if a.format == "json" else rep.to_csv(), a.out)
    if a.svg is not None:
        a.svg.write_text(rep.to_svg(), encoding="utf-8")
    if rep.flagged:
        print("warning: a fix-up distance exceeded 5 stderr + tol", file=sys.stderr)
    return EXIT_OK


def _cmd_check(a) -> int:
    ctx = CheckContext(seed=a.seed, tol=a.tol, samples=a.samples,
                       perturb_conjugate=a.perturb_conjugate)
    results = run_checks(ctx, a.suite, on_result=lambda r: print(r.line(), flush=True))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failing check: {failed[0].suite}/{failed[0].name}", file=sys.stderr)
        print(f"FAILED: {failed[0].suite}/{failed[0].name}")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _cmd_growth(a) -> int:
    rep = growth(a.d, a.N, a.norm, a.seed, a.samples, a.tol)
    _emit(rep.to_json(), a.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "check": _cmd_check, "growth": _cmd_growth}[args.command]
    try:
        return handler(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverFailure as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except ChaseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
