"""Command line entry point: ``lampsum <subcommand> --config grid.toml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import runner
from .client import PredictionError
from .container import ContainerError
from .retrieval import build_indexes, save_indexes
from .store import DatasetError, load_dataset, persist_store, validate_profile
from .summarizer import SummaryBudgetError


def _grid(args) -> runner.GridConfig:
    if not args.config:
        raise runner.ConfigError(f"`{args.command}` needs --config <file>")
    return runner.load_config(args.config)


def cmd_ingest(args) -> int:
    grid = _grid(args)
    cfg = grid.base
    out = Path(args.out) if args.out else cfg.path(cfg.store or "store.json")
    if args.dry_run:
        print(f"would load {cfg.path(cfg.questions)} (golds {cfg.path(cfg.golds)}) as {cfg.task_kind.value}")
        print(f"would write store -> {out}")
        return 0
    if cfg.questions is None:
        raise runner.ConfigError("ingest needs 'questions' in the config")
    table = runner._task_table(cfg)
    instances, profiles = load_dataset(cfg.path(cfg.questions), cfg.path(cfg.golds), cfg.task_kind, table)
    persist_store(instances, profiles, out)
    print(f"{len(instances)} instances, {len(profiles)} users, "
          f"{sum(len(p) for p in profiles.values())} profile items -> {out}")
    return 0


def cmd_validate(args) -> int:
    grid = _grid(args)
    cfg = grid.base
    if args.dry_run:
        print(f"would validate every profile in {cfg.store or cfg.questions}")
        return 0
    table = runner._task_table(cfg)
    _, profiles = runner.load_task_data(cfg, table)
    n_bad = 0
    for uid in sorted(profiles):
        report = validate_profile(profiles[uid], table)
        for v in report:
            print(f"user {uid}: {v}")
        n_bad += len(report)
    print(f"{len(profiles)} profiles checked, {n_bad} violations")
    return 1 if (n_bad and args.strict) else 0


def cmd_index(args) -> int:
    grid = _grid(args)
    cfg = grid.base
    if args.dry_run:
        print(f"would build BM25 indexes for {cfg.store or cfg.questions}"
              + (f" and save them to {args.out}" if args.out else ""))
        return 0
    table = runner._task_table(cfg)
    _, profiles = runner.load_task_data(cfg, table)
    t0 = time.perf_counter()
    indexes = build_indexes(profiles.values(), table, workers=args.workers)
    dt = time.perf_counter() - t0
    n_docs = sum(ix.N for ix in indexes.values())
    vocab = sum(len(ix.postings) for ix in indexes.values())
    print(f"{len(indexes)} indexes, {n_docs} documents, {vocab} postings lists, built in {dt:.3f}s")
    if args.out:
        save_indexes(indexes, args.out)
        print(f"saved -> {args.out}")
    return 0


def cmd_summarize(args) -> int:
    grid = _grid(args)
    if not grid.summarizer.backends:
        raise runner.ConfigError("no summarizer backend configured ([summarizer] backends = [...])")
    if args.dry_run:
        for b in grid.summarizer.backends:
            print(f"would summarize every {grid.base.task_kind.value} user with {b} "
                  f"via {grid.summarizer.endpoints.get(b, '<backend default endpoint>')}")
        print(f"cache -> {grid.base.path(grid.base.summary_cache)}")
        return 0
    reports = runner.run_summarize(grid)
    for rep in reports:
        print("\n".join(rep.lines()))
    return 1 if any(rep.failures for rep in reports) else 0


def cmd_run(args) -> int:
    grid = _grid(args)
    if args.dry_run:
        print("\n".join(runner.plan_lines(grid)))
        return 0
    outcomes = runner.run_grid(grid, output=args.output)
    out = args.output or grid.base.path(grid.base.output)
    n_rows = sum(len(o.rows) for o in outcomes)
    n_excl = sum(len(o.excluded) for o in outcomes)
    print(f"{len(outcomes)} configurations, {n_rows} runs -> {out}" + (f" ({n_excl} exclusions)" if n_excl else ""))
    return 0


def cmd_compare(args) -> int:
    if args.dry_run:
        print("would compare: " + ", ".join(args.files))
        return 0
    report = runner.compare_files(args.files)
    sys.stdout.write(report.render(show_std=args.std))
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_records(), indent=1, sort_keys=True) + "\n", "utf-8")
    return 0


def cmd_report(args) -> int:
    grid = _grid(args)
    results = grid.base.path(grid.base.output)
    out = Path(args.out) if args.out else results.with_name(results.name + ".report.txt")
    if args.dry_run:
        print(f"would render {results} -> {out} (+ {out.name}.json)")
        return 0
    report = runner.compare_files([results])
    runner.write_report(report, out)
    sys.stdout.write(report.render(show_std=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (TOML)")
    common.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lampsum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="load a LaMP dataset into a versioned store")
    p.add_argument("--out", help="store path (default: config 'store' or store.json)")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("validate", parents=[common], help="check every profile item against the task table")
    p.add_argument("--strict", action="store_true", help="exit 1 when violations are found")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("index", parents=[common], help="build per-user BM25 indexes")
    p.add_argument("--out", help="save the built indexes here")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("summarize", parents=[common], help="generate and cache user summaries offline")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("run", parents=[common], help="run the experiment grid")
    p.add_argument("--output", help="results file (overrides the config)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="compare results files as a table")
    p.add_argument("files", nargs="+")
    p.add_argument("--json", help="also write machine-readable cells here")
    p.add_argument("--std", action="store_true", help="show standard deviations")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", parents=[common], help="render the report for the config's results file")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (runner.ConfigError, runner.MissingSummariesError, runner.CompareError, DatasetError,
            ContainerError, SummaryBudgetError, PredictionError, FileNotFoundError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
