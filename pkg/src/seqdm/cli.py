"""Command-line entry point.

Exit status: 0 on success, 1 when an experiment or repro scenario fails,
2 on invalid input (bad flags, missing or invalid config).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .harness import (
    EXPERIMENTS,
    FORMATS,
    ConfigError,
    ExperimentConfig,
    ExperimentError,
    resolve_output_dir,
    run_experiment,
    to_plain,
)
from .scenarios import SCENARIOS

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqdm", description="Sequential decision-making experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run a {name} experiment from a JSON config")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--output-dir", help="output directory (beats $SEQDM_OUTPUT_DIR and the config)")
        p.add_argument("--format", choices=FORMATS, help="table format (default: config or csv)")
    p = sub.add_parser("repro", help="run named acceptance scenarios and print PASS/FAIL")
    p.add_argument("name", nargs="?", choices=sorted(SCENARIOS), metavar="NAME", help="scenario name")
    p.add_argument("--all", action="store_true", help="run every scenario in criterion order")
    p.add_argument("--list", action="store_true", help="list scenario names")
    p.add_argument("--output-dir", help="also write one JSON file of details per scenario here")
    return parser


def _load(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError([("$", f"config file not found: {path}")])
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError([("$", f"{path} is not valid JSON: {err}")]) from err
    if isinstance(doc, dict):
        doc.setdefault("experiment", args.command)
        if args.seed is not None:
            doc["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(doc)
    if cfg.experiment != args.command:
        raise ConfigError([("$.experiment", f"config is for {cfg.experiment!r}, not {args.command!r}")])
    return cfg


def _run(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as err:
        for path, msg in err.errors:
            print(f"error: {path}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    outdir = resolve_output_dir(cfg, args.output_dir)
    fmt = args.format or cfg.output_format
    try:
        report = run_experiment(cfg, outdir, fmt)
    except ConfigError as err:
        for path, msg in err.errors:
            print(f"error: {path}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except ExperimentError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILED
    agg = report.aggregate
    print(f"{cfg.experiment}: {agg['metric']} mean={agg['mean']:.6g} half_width={agg['half_width']:.3g} "
          f"n={agg['n']} -> {outdir}")
    return EXIT_OK


def _repro(args) -> int:
    if args.list:
        for name in SCENARIOS:
            print(name)
        return EXIT_OK
    if args.all == bool(args.name):
        print("error: give exactly one of NAME or --all", file=sys.stderr)
        return EXIT_INVALID
    names = list(SCENARIOS) if args.all else [args.name]
    outdir = Path(args.output_dir) if args.output_dir else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in names:
        start = time.perf_counter()
        result = SCENARIOS[name]()
        elapsed = time.perf_counter() - start
        print(result.line(), flush=True)
        print(f"{name}: {elapsed:.2f}s", file=sys.stderr)
        failed += not result.passed
        if outdir:
            doc = {"name": result.name, "criterion": result.criterion, "passed": result.passed,
                   "details": result.details}
            (outdir / f"{name}.json").write_text(json.dumps(to_plain(doc), indent=2, sort_keys=True) + "\n")
    if args.all:
        print(f"{len(names) - failed}/{len(names)} scenarios passed")
    return EXIT_FAILED if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.command == "repro":
        return _repro(args)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
