"""Command line front end.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or arguments,
3 runtime failure. ``CHOQUARD_OUTPUT_ROOT`` overrides the output root.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ChoquardError, ConfigError, ParameterError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes or any(s < 8 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be integers >= 8")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="choquard", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("constants", help="whole-space critical constants")
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--mu", type=float, required=True)
    for name, helptext in (("solve", "multi-start solve"), ("sweep", "eps sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="run directory (default: <root>/<name>-<kind>)")
    v = sub.add_parser("verify", help="oracle checks")
    v.add_argument("--out", type=Path, default=None, help="directory for verify.csv")
    v.add_argument("--zero-singular-cell", action="store_true", help=argparse.SUPPRESS)
    b = sub.add_parser("bench", help="kernel timings")
    b.add_argument("--sizes", type=_sizes, default=[16, 32, 64])
    return ap


def _print_manifest(man) -> None:
    print(f"wrote {man.directory}")
    for v in man.verdicts:
        if "summary" in v:
            print(v["summary"])
        elif "message" in v:
            print(f"{v['check']}: {v['message']}")
        else:
            print(f"{v['check']}: {'ok' if v.get('ok') else 'FLAGGED'}")


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    from . import experiments
    from .config import load_config
    from .persistence import output_root
    try:
        if args.command == "constants":
            sys.stdout.write(experiments.run_constants(args.dim, args.mu))
            return EXIT_OK
        if args.command in ("solve", "sweep"):
            config = load_config(args.config)
            run = experiments.run_solve if args.command == "solve" else experiments.run_sweep
            _print_manifest(run(config, args.out))
            return EXIT_OK
        if args.command == "verify":
            out = args.out if args.out is not None else output_root("runs") / "verify"
            ok, checks = experiments.run_verify(out, "zero" if args.zero_singular_cell else "average")
            for c in checks:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tol {c.tolerance:g})")
            print(f"wrote {out / 'verify.csv'}")
            return EXIT_OK if ok else EXIT_CHECK
        if args.command == "bench":
            sys.stdout.write(experiments.run_bench(args.sizes))
            return EXIT_OK
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChoquardError, RuntimeError, ValueError, OSError) as exc:
        print(f"run failed ({args.command}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
