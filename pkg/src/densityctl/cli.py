"""Command-line entry point.

Exit codes: 0 success, 1 validation or bound-check failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .harness import (
    ScenarioError,
    check_bound_file,
    coerce_value,
    load_scenario,
    run,
    sweep,
)

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="densityctl", description="Robust density control experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a scenario")
    v.add_argument("scenario", help="scenario file or bundled name")

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (default: runs/<name>)")

    s = sub.add_parser("sweep", help="run a scenario once per parameter value")
    s.add_argument("scenario")
    s.add_argument("--param", default=None, help="dotted parameter path, e.g. drift.k_dist")
    s.add_argument("--values", default=None, help="comma-separated values")
    s.add_argument("--out", default=None)
    s.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("check-bound", help="check a metrics CSV against the exponential bound")
    c.add_argument("metrics")
    c.add_argument("--kp", type=float, required=True)
    c.add_argument("--slack", type=float, default=0.0)
    c.add_argument("--floor", type=float, default=0.0)
    c.add_argument("--relative", action="store_true", help="floor is a fraction of the initial error")
    return p


def _cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok {sc.name} ({sc.mode}, {sc.grid.dim}-D) hash={sc.hash}")
    return EXIT_OK


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    out = args.out or str(Path("runs") / sc.name)
    rec = run(sc, seed=args.seed, out_dir=out)
    print(f"{sc.name}: final l2 error {rec.final_error:.6e} ({rec.wall_clock:.2f}s) -> {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    values = None
    if args.values is not None:
        values = [coerce_value(v) for v in args.values.split(",") if v.strip()]
    if args.param is None and sc.sweep is None:
        raise ScenarioError("--param is required: the scenario declares no sweep", "sweep")
    param = args.param or sc.sweep.param
    out = args.out or str(Path("runs") / f"{sc.name}_sweep")
    records = sweep(sc, args.param, values, out_dir=out, workers=args.workers)
    shown = values if values is not None else list(sc.sweep.values) if args.param is None else []
    print(f"{param},final_l2_error")
    for v, rec in zip(shown, records):
        print(f"{v},{rec.final_error:.6e}")
    return EXIT_OK


def _cmd_check(args) -> int:
    res = check_bound_file(args.metrics, args.kp, args.slack, args.floor, args.relative)
    if res.passed:
        print(f"PASS worst ratio {res.worst_ratio:.4g}")
        return EXIT_OK
    print(f"FAIL first violation at t={res.first_violation:.6g} (worst ratio {res.worst_ratio:.4g})")
    return EXIT_FAIL


COMMANDS = {"validate": _cmd_validate, "run": _cmd_run, "sweep": _cmd_sweep, "check-bound": _cmd_check}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
