"""Command-line entry point: ``ppan run | oracle | compare | datagen``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .datagen import dump_csv, rng_streams, sample
from .experiments import (
    EXPERIMENTS, ConfigError, CsvFormatError, ExperimentConfig, build_model, compare,
    default_output_dir, load_config, run_experiment,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
CURVES = EXPERIMENTS[:5]


def _settings(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppan", description="Train privacy mechanisms and compare them with optimal tradeoff curves.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="run an experiment from an INI config file")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--output-dir", type=Path)
    run.add_argument("--workers", type=int)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    orc = verbs.add_parser("oracle", help="write the optimal tradeoff curve on a grid (no training)")
    orc.add_argument("curve", choices=CURVES)
    orc.add_argument("--grid", help="comma-separated distortion targets")
    orc.add_argument("--linspace", help="start, stop, count")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--output-dir", type=Path)
    orc.add_argument("--set", action="append", metavar="KEY=VALUE", help="model parameter, e.g. rho=0.7")

    cmp_ = verbs.add_parser("compare", help="summarize leakage minus optimum in a tradeoff.csv")
    cmp_.add_argument("csv", type=Path)
    cmp_.add_argument("--tolerance", type=float, default=0.1, help="pass threshold in nats (default 0.1)")

    gen = verbs.add_parser("datagen", help="sample a synthetic data model to CSV")
    gen.add_argument("model", choices=CURVES)
    gen.add_argument("-n", "--samples", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", type=Path, required=True)
    gen.add_argument("--set", action="append", metavar="KEY=VALUE", help="model parameter, e.g. rho=0.7")
    return parser


def _cmd_run(args) -> int:
    overrides = _settings(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    out = args.output_dir or default_output_dir(cfg)
    points = run_experiment(cfg, out, args.workers)
    failed = [p for p in points if p.status != "ok"]
    print(f"wrote {len(points)} points to {Path(out) / 'tradeoff.csv'}")
    for p in failed:
        print(f"point delta={p.delta_target} lam={p.lam}: {p.status}", file=sys.stderr)
    return EXIT_DIVERGED if failed else EXIT_OK


def _cmd_oracle(args) -> int:
    values = _settings(args.set)
    values.update(curve=args.curve, seed=str(args.seed))
    if args.grid:
        values["grid"] = args.grid
    elif args.linspace:
        values["grid_linspace"] = args.linspace
    cfg = ExperimentConfig.from_mapping("oracle-only", values, source="command line")
    out = args.output_dir or default_output_dir(cfg)
    points = run_experiment(cfg, out)
    print(f"wrote {len(points)} oracle points to {Path(out) / 'tradeoff.csv'}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    report = compare(args.csv, args.tolerance)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_FAIL


def _cmd_datagen(args) -> int:
    values = _settings(args.set)
    values.update(curve=args.model, seed=str(args.seed))
    cfg = ExperimentConfig.from_mapping("oracle-only", values, source="command line")
    if args.samples < 1:
        raise ConfigError("--samples must be at least 1")
    data_rng, _, _ = rng_streams(args.seed)
    data = sample(build_model(cfg), args.samples, data_rng)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    dump_csv(data, args.output)
    print(f"wrote {args.samples} samples to {args.output}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "oracle": _cmd_oracle, "compare": _cmd_compare, "datagen": _cmd_datagen}[args.verb]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CsvFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
