"""Command line: ``icpi run | resume | aggregate | validate-config``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigurationError
from .harness import ALGORITHMS, BACKENDS, ExperimentConfig, run_experiment, write_aggregate


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--domain", action="append", dest="domains", help="repeatable")
    p.add_argument("--algorithm", action="append", dest="algorithms", choices=ALGORITHMS, help="repeatable")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--seeds", type=int, help="number of seeds, numbered from 0")
    p.add_argument("--episodes", type=int)
    p.add_argument("--no-hints", action="store_const", const=False, dest="hints")
    p.add_argument("--no-balance", action="store_const", const=False, dest="balance")
    p.add_argument("--no-constraints", action="store_const", const=False, dest="constraints")
    p.add_argument("--recency-cutoff", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--jobs", type=int)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(
        domains=args.domains,
        algorithms=args.algorithms,
        backend=args.backend,
        seeds=list(range(args.seeds)) if args.seeds is not None else None,
        episodes=args.episodes,
        hints=args.hints,
        balance=args.balance,
        constraints=args.constraints,
        recency_cutoff=args.recency_cutoff,
        output_dir=args.output_dir,
        jobs=args.jobs,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icpi", description=__doc__)
    parser.add_argument("--debug", action="store_true", help="debug logging (credentials redacted)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every (domain, algorithm, seed) cell and aggregate")
    _add_overrides(run)

    resume = sub.add_parser("resume", help="finish an interrupted experiment from its output directory")
    resume.add_argument("output_dir")

    agg = sub.add_parser("aggregate", help="rebuild the aggregate CSVs of an output directory")
    agg.add_argument("output_dir")

    val = sub.add_parser("validate-config", help="check a config file (and overrides) without running")
    _add_overrides(val)
    return parser


def _saved_config(output_dir: str) -> ExperimentConfig:
    path = Path(output_dir) / "config.yaml"
    if not path.exists():
        raise ConfigurationError(f"{path} not found")
    return ExperimentConfig.from_file(path).with_overrides(output_dir=output_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "validate-config":
            cfg = config_from_args(args)
            print(cfg.to_yaml(), end="")
            print("config OK")
            return 0
        if args.command == "aggregate":
            for path in write_aggregate(_saved_config(args.output_dir)):
                print(path)
            return 0
        if args.command == "resume":
            cfg = _saved_config(args.output_dir)
            summary = run_experiment(cfg, resume=True)
        else:
            cfg = config_from_args(args)
            summary = run_experiment(cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    n, failed = len(summary["runs"]), summary["failed"]
    print(f"{n - len(failed)}/{n} runs complete; results in {cfg.output_dir}")
    for f in failed:
        print(f"  FAILED {f['domain']}/{f['algorithm']}/seed{f['seed']}: {f['error']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
