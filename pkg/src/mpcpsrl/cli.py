"""Command line entry point ``psrl``.

    psrl run <config.yaml | train | regret | theory> [--seed N] [--out DIR] [--workers K]
             [--env NAME] [--episodes N] [--trials N] [--suite NAME] [--cases N]
    psrl resume <checkpoint>
    psrl report <run_dir>
    psrl schema

Exit codes: 0 success, 1 runtime failure, 2 config/schema error.
``PSRL_OUT`` and ``PSRL_WORKERS`` override the output directory and worker
count when the matching flag is not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint, config as cfg
from .report import report
from .runner import execute, resume

logger = logging.getLogger("psrl")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psrl", description="MPC-PSRL experiments and theory checks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or a built-in default")
    run.add_argument("config", help="YAML config path, or one of: train, regret, theory")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--env", help="train: environment name")
    run.add_argument("--episodes", type=int, help="train: episodes per trial")
    run.add_argument("--trials", type=int, help="train: number of trials")
    run.add_argument("--suite", help="theory: suite name")
    run.add_argument("--cases", type=int, help="theory: random cases per family")

    res = sub.add_parser("resume", help="continue a training trial from a checkpoint")
    res.add_argument("checkpoint")

    rep = sub.add_parser("report", help="aggregate a finished run into CSV and SVG")
    rep.add_argument("run_dir")

    sub.add_parser("schema", help="print the config JSON schema")
    return p


def build_config(args) -> dict:
    if args.config in cfg.KINDS:
        config = cfg.default_config(args.config)
    else:
        config = cfg.load(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.env is not None:
        config.setdefault("env", {})["name"] = args.env
    if args.episodes is not None:
        config.setdefault("agent", {})["episodes"] = args.episodes
    if args.trials is not None:
        config["n_trials"] = args.trials
    if args.suite is not None:
        config.setdefault("theory", {})["suite"] = args.suite
    if args.cases is not None:
        config.setdefault("theory", {})["cases"] = args.cases
    return cfg.validate(config)


def _out_dir(args, config: dict) -> Path:
    out = args.out or os.environ.get("PSRL_OUT") or config.get("output_dir")
    if out is None:
        out = Path("runs") / f"{config['kind']}-{cfg.canonical_hash(config)[:10]}"
    return Path(out)


def _workers(args, config: dict) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("PSRL_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise cfg.ConfigError(f"PSRL_WORKERS: expected an integer, got {env!r}") from None
    return int(config.get("workers", 1))


def cmd_run(args) -> int:
    try:
        config = build_config(args)
        workers = _workers(args, config)
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, config)
    try:
        manifest = execute(config, out, workers)
    except Exception as exc:
        logger.exception("run failed")
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"run_dir": str(out), "status": manifest.data["status"]}))
    return EXIT_OK


def cmd_resume(args) -> int:
    try:
        resume(args.checkpoint)
    except checkpoint.CheckpointError as exc:
        print(f"resume refused: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("resume failed")
        print(f"resume failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        for path in report(args.run_dir):
            print(path)
    except Exception as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    if args.command == "resume":
        return cmd_resume(args)
    if args.command == "report":
        return cmd_report(args)
    print(json.dumps(cfg.SCHEMA, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
