"""Command-line entry points: run, sweep, report, validate.

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 convergence failure (including a failed convergence gate on an
otherwise completed run). Partial artifacts are left on disk when an
engine dies mid-run so the work done so far stays inspectable.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import emit_config, parse_config
from .errors import ConfigError, ConvergenceError, NumericalError
from .runner import report, run_experiment, sweep_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CONVERGENCE = 4


def _read_config(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _apply_seed(cfg, seed_override):
    if seed_override is None:
        return cfg
    if seed_override < 0:
        raise ConfigError(f"seed override must be >= 0, got {seed_override}")
    return replace(cfg, seed=seed_override)


def _cmd_run(args) -> int:
    cfg = _apply_seed(_read_config(args.config), args.seed_override)
    outcome = run_experiment(cfg, resume=args.resume)
    print(report(outcome.out_dir))
    if not outcome.gate_ok:
        return EXIT_CONVERGENCE
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _apply_seed(_read_config(args.config), args.seed_override)
    outcome = sweep_experiment(cfg, workers=args.workers)
    print(report(outcome.out_dir))
    return EXIT_OK if outcome.gate_ok else EXIT_CONVERGENCE


def _cmd_report(args) -> int:
    print(report(args.directory))
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _apply_seed(_read_config(args.config), args.seed_override)
    from .runner import resolve

    res = resolve(cfg)
    print(emit_config(res.cfg), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavkin",
        description="cavity-modified reaction kinetics: run, sweep, and inspect "
                    "simulation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a single experiment config")
    run_p.add_argument("config", help="TOML experiment config")
    run_p.add_argument("--resume", metavar="CHECKPOINT", default=None,
                       help="checkpoint file or run directory to continue from")
    run_p.add_argument("--seed-override", type=int, default=None, metavar="SEED")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run every point of a parameter sweep")
    sweep_p.add_argument("config", help="TOML experiment config with a [sweep] section")
    sweep_p.add_argument("--workers", type=int, default=1,
                         help="parallel worker processes (default 1)")
    sweep_p.add_argument("--seed-override", type=int, default=None, metavar="SEED")
    sweep_p.set_defaults(func=_cmd_sweep)

    report_p = sub.add_parser("report", help="summarize a run or sweep directory")
    report_p.add_argument("directory")
    report_p.set_defaults(func=_cmd_report)

    val_p = sub.add_parser("validate", help="parse a config and echo its resolved form")
    val_p.add_argument("config")
    val_p.add_argument("--seed-override", type=int, default=None, metavar="SEED")
    val_p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as err:
        print(f"convergence failure: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
