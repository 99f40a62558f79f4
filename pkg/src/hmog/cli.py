"""Command line entry point.

    hmog run CONFIG [--seed N ...] [--out DIR] [--jobs J]
    hmog eval RUN_DIR
    hmog plot RUN_DIR
    hmog compare RUN_DIR [RUN_DIR ...]

Runs land in ``<root>/<output-dir>/seed-<N>`` where ``<root>`` is the
working directory unless HMOG_OUTPUT_ROOT is set; ``--out`` replaces
``<root>/<output-dir>``.  Exit codes: 0 success, 1 configuration error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ConfigError, parse_config
from .runner import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, compare_runs, eval_run, run_experiment

OUTPUT_ROOT_ENV = "HMOG_OUTPUT_ROOT"

log = logging.getLogger("hmog")


def run_base(output_dir: str, out: str | None) -> Path:
    if out is not None:
        return Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(output_dir)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for note in cfg.notices:
        print(f"notice: {note}", file=sys.stderr)
    seeds = args.seed if args.seed else [cfg.seed]
    base = run_base(cfg.output_dir, args.out)

    def one(seed: int) -> int:
        run_dir = base / f"seed-{seed}"

        def progress(step, report):
            log.info(
                "seed %d step %d: frechet %.4f knn %.3f/%.3f modes %d",
                seed, step, report.frechet, report.knn_real_acc, report.knn_fake_acc, report.modes_covered,
            )

        status = run_experiment(cfg.with_seed(seed), run_dir, plots=not args.no_plots, progress=progress)
        if status == EXIT_NUMERICAL:
            print(f"seed {seed}: numerical failure, see {run_dir / 'diagnostics.json'}", file=sys.stderr)
        else:
            print(run_dir)
        return status

    try:
        if args.jobs > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                statuses = list(pool.map(one, seeds))
        else:
            statuses = [one(s) for s in seeds]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return max(statuses)


def _cmd_eval(args) -> int:
    try:
        report = eval_run(args.run_dir)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import emit_plots

    try:
        for path in emit_plots(args.run_dir):
            print(path)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _cmd_compare(args) -> int:
    try:
        print(compare_runs(args.run_dirs))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmog", description="Mixture-of-generators GANs on 2-D toy data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log evaluation snapshots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one experiment per seed")
    p.add_argument("config")
    p.add_argument("--seed", type=int, action="append", help="override the config seed; repeat for several runs")
    p.add_argument("--out", help="directory for seed-N run folders")
    p.add_argument("--jobs", type=int, default=1, help="seeds to run concurrently (threads)")
    p.add_argument("--no-plots", action="store_true", help="skip SVG output")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="recompute metrics from a run's checkpoint")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("plot", help="write SVG plots for a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("compare", help="table of final metrics across runs")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
