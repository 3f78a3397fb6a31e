"""Command-line front end.

    icsgld run --config FILE [--scale F] [--seed N] [--out DIR] [--log-messages]
    icsgld preset NAME [--out DIR] [--scale F] [--algorithm A]
    icsgld compare --out DIR A.csv B.csv ...

Exit status: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, InputError, NumericalError
from ..interaction import RunAborted
from .config import ALGORITHMS, PRESETS, load_config, preset, save_config
from .report import compare, final_rows, format_table
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("icsgld")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icsgld", description="Interacting contour SGLD experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--scale", type=float, default=None, help="multiply the round count")
    run.add_argument("--seed", type=int, default=None, help="override base_seed")
    run.add_argument("--out", default=None, help="override out_dir")
    run.add_argument("--log-messages", action="store_true", help="write the coordinator message log")
    run.add_argument("--no-figures", action="store_true")

    pre = sub.add_parser("preset", help="write a preset config file")
    pre.add_argument("name", choices=PRESETS)
    pre.add_argument("--out", default=".", help="directory for the config file")
    pre.add_argument("--scale", type=float, default=1.0)
    pre.add_argument("--algorithm", default="icsgld", choices=ALGORITHMS)

    cmp_ = sub.add_parser("compare", help="mean and standard error tables from metric CSVs")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--no-figures", action="store_true")
    cmp_.add_argument("csv", nargs="+")
    return p


def _run(args) -> int:
    config = load_config(args.config)
    if args.scale is not None:
        config = config.scaled(args.scale)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        config = config.with_overrides(base_seed=args.seed)
    report = run_experiment(config, args.out, log_messages=args.log_messages,
                            figures=False if args.no_figures else None)
    for t, res in enumerate(report.results):
        last = {k: v[-1] for k, v in res.series.items() if len(v)}
        print(f"trial {t} seed {res.seed}: rounds {res.extras['rounds_completed']} "
              f"kl {last.get('kl', float('nan')):.4g} theta_tv {last.get('theta_tv', float('nan')):.4g}"
              + (f" ABORTED: {res.error}" if res.error else ""))
    print(f"outputs in {report.out_dir}")
    return EXIT_NUMERICAL if report.aborted else EXIT_OK


def _preset(args) -> int:
    config = preset(args.name, args.scale, args.algorithm)
    suffix = "" if args.algorithm == "icsgld" else f"_{args.algorithm}"
    path = save_config(config, Path(args.out) / f"{args.name}{suffix}.json")
    print(path)
    return EXIT_OK


def _compare(args) -> int:
    table = compare(args.csv, args.out, figures=not args.no_figures)
    print(format_table(final_rows(table)))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _run, "preset": _preset, "compare": _compare}[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, RunAborted) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
