"""Command-line entry point: ``recency-audit <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .backend import AuthFailure, BackendError, parse_backend_name
from .config import ConfigError, load_config
from .corpus import CorpusError
from .protocol import STRICT

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_AUTH = 4
EXIT_BACKEND = 5
EXIT_PARTIAL = 6


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
    p.add_argument("--output", help="run directory (overrides paths.output)")
    p.add_argument("--backend", help="backend override: remote, identity, reverse, lexical_overlap, "
                                     "recency_greedy[:lambda], date_blind, fresh_preferring, random[:seed]")
    p.add_argument("--strict-parse", action="store_true", help="strict response parsing with one retry")
    p.add_argument("--seed", type=int, help="seed for pair sampling and noisy mocks")
    p.add_argument("--workers", type=int, help="topic worker pool size")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recency-audit", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, metavar="{validate,listwise,pairwise,metrics,report,resume,demo}")

    p = sub.add_parser("validate", help="check config and input files")
    _common(p)
    for name in ("listwise", "pairwise"):
        p = sub.add_parser(name, help=f"run the {name} date-injection experiment")
        _common(p)
    p = sub.add_parser("metrics", help="recompute metrics.json from a finished run directory")
    p.add_argument("run_dir")
    p = sub.add_parser("report", help="render report.md and tables from one or more run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--output", help="output directory (default: the single run directory)")
    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("run_dir")
    p = sub.add_parser("demo", help="run the bundled synthetic collection with mock backends")
    p.add_argument("--output", default="demo-output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--strict-parse", action="store_true")
    return ap


def _apply_overrides(cfg, args):
    if args.backend:
        try:
            spec = parse_backend_name(args.backend)
        except ValueError as exc:
            raise ConfigError("--backend", str(exc)) from None
        if spec is None:
            cfg.backend.kind = "remote"
            cfg.backend.lam = None
        else:
            cfg.backend.kind, cfg.backend.lam = spec.kind, spec.lam
            if spec.seed:
                cfg.backend.seed = spec.seed
    if args.strict_parse:
        cfg.experiment.parse_mode = STRICT
    if args.seed is not None:
        cfg.experiment.seed = args.seed
        cfg.backend.seed = args.seed
    if args.workers:
        cfg.experiment.workers = args.workers
    if args.output:
        cfg.paths.output = str(Path(args.output).resolve())
    from .config import validate_fields

    validate_fields(cfg)
    return cfg


def _dispatch(args) -> int:
    from . import runner

    if args.command in ("validate", "listwise", "pairwise"):
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "validate":
            inputs = runner.load_inputs(cfg)
            print(f"ok: {len(inputs.runs)} judged topics, {len(inputs.passages)} passages, "
                  f"{len(inputs.qrels)} judgments; config {runner.config_hash(cfg)}")
            return EXIT_OK
        cfg.experiment.listwise = args.command == "listwise"
        cfg.experiment.pairwise = args.command == "pairwise"
        out = runner.run_experiment(cfg, cfg.paths.output)
        return _summarize(out)
    if args.command == "resume":
        return _summarize(runner.resume_run(args.run_dir))
    if args.command == "metrics":
        doc = runner.compute_metrics(args.run_dir)
        print(f"wrote {Path(args.run_dir) / 'metrics.json'} ({doc['collection']['n_topics']} topics)")
        return EXIT_OK
    if args.command == "report":
        out_dir = args.output or (args.run_dirs[0] if len(args.run_dirs) == 1 else None)
        if out_dir is None:
            raise ConfigError("--output", "required when reporting several run directories")
        print(f"wrote {runner.report_runs(args.run_dirs, out_dir)}")
        return EXIT_OK
    if args.command == "demo":
        outcomes = runner.run_demo(args.output, seed=args.seed, workers=args.workers, strict=args.strict_parse)
        print(f"demo finished: {len(outcomes)} runs, report at {Path(args.output) / 'report.md'}")
        return EXIT_PARTIAL if any(o.failed for o in outcomes) else EXIT_OK
    raise ConfigError("command", f"unknown subcommand {args.command!r}")


def _summarize(outcome) -> int:
    done = sum(len(v) for v in outcome.completed.values())
    failed = sum(len(v) for v in outcome.failed.values())
    print(f"{outcome.run_dir}: {done} topic tasks completed, {failed} failed, {outcome.backend_calls} backend calls")
    return EXIT_PARTIAL if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AuthFailure as exc:
        print(f"error[auth]: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except BackendError as exc:
        print(f"error[backend]: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
