"""Command-line driver: parse the module set, run the relational analysis,
replay counterexamples, and render the report.

Exit codes: 0 verified constant-time, 1 violations found, 2 analysis
incomplete (limits hit or unresolved solver answers), 3 usage or input
error. Malformed input never raises past main.
"""

from __future__ import annotations

import argparse
import sys

from . import frontend as fe
from .engine import Engine, EngineConfig
from .report import render
from .solver import SolverHost, SolverUnavailable, discover_config

EXIT_VERIFIED = 0
EXIT_VIOLATION = 1
EXIT_INCOMPLETE = 2
EXIT_USAGE = 3

_INPUT_ERRORS = (fe.WatSyntaxError, fe.ValidationError, fe.PolicyError,
                 fe.MissingEntry, fe.UnknownFunction)


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 means "incomplete" here,
    # so usage problems are remapped
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(
        prog="relwasm",
        description="Verify the constant-time policy of a WebAssembly text "
                    "module by relational symbolic execution.")
    p.add_argument("inputs", nargs="+", metavar="FILE",
                   help="WAT module plus optional annotation sidecar files")
    p.add_argument("--entry", metavar="NAME", default=None,
                   help="entry function override (name with or without $)")
    p.add_argument("--unroll-limit", type=int, default=512, metavar="N",
                   help="back-edge executions per loop per path "
                        "(default %(default)s)")
    p.add_argument("--invariants", action="store_true",
                   help="summarize loops with inferred invariants instead "
                        "of unrolling them")
    p.add_argument("--select-unsafe", action="store_true",
                   help="treat the select instruction as a leaking branch")
    p.add_argument("--portfolio-threshold", type=int, default=1500,
                   metavar="N",
                   help="expression count above which queries go to the "
                        "solver portfolio (default %(default)s)")
    p.add_argument("--timeout", type=float, default=5400.0, metavar="SEC",
                   help="analysis wall-clock budget in seconds "
                        "(default %(default)s)")
    p.add_argument("--solver-config", metavar="PATH", default=None,
                   help="backend config file; overrides $RELWASM_SOLVER_CONFIG")
    p.add_argument("--format", choices=("text", "json"), default="text",
                   help="report format (default %(default)s)")
    p.add_argument("--stats", action=argparse.BooleanOptionalAction,
                   default=True, help="include counter lines in text output")
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        parts = []
        for path in args.inputs:
            with open(path, encoding="utf-8") as fh:
                parts.append(fe.parse_module(fh.read()))
        ast = fe.merge_modules(parts)
        fe.resolve_entry(ast, args.entry)  # fail fast on a bad entry
    except OSError as e:
        print(f"relwasm: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as e:
        print(f"relwasm: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        cfg = EngineConfig(
            unroll_limit=args.unroll_limit,
            time_budget=args.timeout,
            select_unsafe=args.select_unsafe,
            invariants_enabled=args.invariants,
            portfolio_threshold=args.portfolio_threshold)
    except ValueError as e:
        print(f"relwasm: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        solver_cfg = discover_config(args.solver_config)
    except SolverUnavailable as e:
        print(f"relwasm: {e}", file=sys.stderr)
        return EXIT_USAGE
    solver_cfg.threshold = args.portfolio_threshold

    host = SolverHost(solver_cfg)
    try:
        eng = Engine(ast, cfg, host)
        try:
            rep = eng.explore(args.entry)
        except _INPUT_ERRORS as e:
            print(f"relwasm: {e}", file=sys.stderr)
            return EXIT_USAGE
        rep.run_replays(ast, eng.entry_spec)
        out = render(rep, args.format, stats=args.stats)
        sys.stdout.buffer.write(out)
        sys.stdout.buffer.flush()
        return rep.exit_code()
    finally:
        host.close()


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
