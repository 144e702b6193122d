"""Command-line driver: fetch / train / crossval / report.

Exit codes: 0 success, 1 data error, 2 numerical divergence,
64 config error, 65 malformed input file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .checkpoint import save_checkpoint
from .dataset import (DEFAULT_BASE_URL, default_data_dir, fetch_mnist,
                      load_mnist, make_permuted_sequence)
from .errors import (ConfigError, ConsolidateError, DivergenceError,
                     IntegrityError, ParseError, TransportError)
from .reporting import (read_metrics_csv, read_metrics_json,
                        write_metrics_csv, write_metrics_json)
from .runner import (HyperGrid, PRESET_NAMES, build_preset, default_grid,
                     grid_search, render_summary, run_sequence, summarize)
from .svg import sequence_overview_figure, task_panels_figure

log = logging.getLogger("consolidate")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 64
EXIT_MALFORMED = 65


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consolidate",
        description="Sequential MNIST training under SGD, L2 anchoring, "
                    "and elastic weight consolidation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fetch = sub.add_parser("fetch", help="download and verify MNIST")
    p_fetch.add_argument("--data-dir", type=Path, default=None,
                         help="cache directory (default: $CONSOLIDATE_DATA_DIR "
                              "or ./data)")
    p_fetch.add_argument("--base-url", default=DEFAULT_BASE_URL)
    p_fetch.set_defaults(func=cmd_fetch)

    p_train = sub.add_parser("train", help="run a sequential experiment")
    p_train.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p_train.add_argument("--config", type=Path, default=None,
                         help="TOML experiment config")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", type=Path, default=Path("./out"))
    p_train.add_argument("--data-dir", type=Path, default=None)
    p_train.add_argument("--subset", type=int, default=None,
                         help="cap on training examples per task")
    p_train.add_argument("--epochs", type=int, default=None,
                         help="override epochs for every regime")
    p_train.set_defaults(func=cmd_train)

    p_cv = sub.add_parser("crossval", help="grid-search hyperparameters")
    p_cv.add_argument("--regime", choices=("sgd", "l2", "ewc"), default="sgd")
    p_cv.add_argument("--grid-file", type=Path, default=None)
    p_cv.add_argument("--tasks", type=int, default=2,
                      help="length of the permuted subset sequence")
    p_cv.add_argument("--budget-epochs", type=int, default=3)
    p_cv.add_argument("--subsample", type=int, default=10000)
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--out", type=Path, default=Path("./out"))
    p_cv.add_argument("--data-dir", type=Path, default=None)
    p_cv.set_defaults(func=cmd_crossval)

    p_rep = sub.add_parser("report", help="render SVG figures from metrics")
    p_rep.add_argument("metrics", type=Path, help="path to metrics.csv")
    p_rep.add_argument("--out", type=Path, default=None,
                       help="output directory (default: alongside metrics)")
    p_rep.add_argument("--reference", type=float, default=None,
                       help="single-task reference accuracy line")
    p_rep.set_defaults(func=cmd_report)
    return parser


def cmd_fetch(args) -> int:
    cache = args.data_dir if args.data_dir is not None else default_data_dir()
    paths = fetch_mnist(base_url=args.base_url, cache_dir=cache)
    print(f"MNIST cache ready at {cache} ({len(paths)} files verified)")
    return EXIT_OK


def _resolve_plan(args):
    if (args.preset is None) == (args.config is None):
        raise ConfigError("exactly one of --preset or --config is required")
    if args.preset is not None:
        return build_preset(args.preset, seed=args.seed or 0,
                            subset=args.subset or 0, epochs=args.epochs)
    return config_mod.load_config(args.config, seed_override=args.seed,
                                  subset_override=args.subset,
                                  epochs_override=args.epochs)


def _load_data(data_dir):
    cache = data_dir if data_dir is not None else default_data_dir()
    return load_mnist(cache)


def cmd_train(args) -> int:
    plan = _resolve_plan(args)
    train_data, test_data = _load_data(args.data_dir)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint_sink(regime, result):
        save_checkpoint(out / f"checkpoint-{regime.name}.json",
                        result.params, regime.net_cfg, state=result.state,
                        extra={"experiment_id": plan.experiment_id,
                               "master_seed": plan.master_seed,
                               "regime": regime.name})

    metrics = run_sequence(plan, train_data, test_data,
                           regime_callback=checkpoint_sink)
    write_metrics_csv(out / "metrics.csv", metrics)
    write_metrics_json(out / "metrics.json", metrics)
    print(render_summary(summarize(metrics)))
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_crossval(args) -> int:
    mode = {"sgd": "none", "l2": "l2", "ewc": "ewc"}[args.regime]
    if args.grid_file is not None:
        axes = config_mod.load_grid(args.grid_file)
        base = default_grid(mode)
        grid = HyperGrid(
            batch_sizes=axes.get("batch_sizes", base.batch_sizes),
            momenta=axes.get("momenta", base.momenta),
            lambdas=axes.get("lambdas", base.lambdas),
            learning_rates=axes.get("learning_rates", base.learning_rates),
            hidden_widths=axes.get("hidden_widths", base.hidden_widths))
    else:
        grid = default_grid(mode)
    train_data, test_data = _load_data(args.data_dir)
    subset_tasks = make_permuted_sequence(args.tasks, args.seed)

    best, table = grid_search(grid, mode, train_data, test_data, subset_tasks,
                              budget_epochs=args.budget_epochs,
                              subsample=args.subsample,
                              master_seed=args.seed)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / f"crossval-{args.regime}.csv"
    with open(table_path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        columns = ("batch_size", "momentum", "lambda", "learning_rate",
                   "hidden_width", "score", "diverged")
        writer.writerow(columns)
        for row in table:
            writer.writerow([row[c] for c in columns])

    winner_path = out / f"crossval-{args.regime}-winner.toml"
    config_mod.write_toml(winner_path, {
        "experiment": {"name": f"crossval-{args.regime}-winner",
                       "benchmark": "permuted", "n_tasks": args.tasks,
                       "seed": args.seed},
        "regime": [{"name": args.regime, "mode": mode,
                    "batch_size": best["batch_size"],
                    "momentum": best["momentum"],
                    "lambda": best["lambda"],
                    "learning_rate": best["learning_rate"],
                    "hidden_width": best["hidden_width"]}],
    })
    print(f"best {args.regime} configuration "
          f"(validation accuracy {best['score']:.4f}):")
    for key in ("batch_size", "momentum", "lambda", "learning_rate",
                "hidden_width"):
        print(f"  {key} = {best[key]}")
    print(f"score table: {table_path}")
    print(f"winner config: {winner_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        rows = read_metrics_csv(args.metrics)
    except FileNotFoundError:
        print(f"error: metrics file not found: {args.metrics}",
              file=sys.stderr)
        return EXIT_MALFORMED
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED

    reference = args.reference
    if reference is None:
        sibling = args.metrics.parent / "metrics.json"
        if sibling.exists():
            try:
                reference = read_metrics_json(sibling).get(
                    "single_task_reference")
            except ParseError:
                reference = None

    out = args.out if args.out is not None else args.metrics.parent
    out.mkdir(parents=True, exist_ok=True)
    n_tasks = 1 + max(row["eval_task_id"] for row in rows)
    title = f"{args.metrics.name} ({n_tasks} tasks)"
    if n_tasks <= 4:
        svg = task_panels_figure(rows, reference=reference, title=title)
        target = out / "report-tasks.svg"
    else:
        svg = sequence_overview_figure(rows, reference=reference, title=title)
        target = out / "report-sequence.svg"
    target.write_text(svg, encoding="utf-8")
    print(f"wrote {target}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        where = f" [regime {exc.regime}, task {exc.task_id}]" \
            if exc.regime else ""
        print(f"divergence: {exc}{where}", file=sys.stderr)
        return EXIT_DIVERGED
    except (TransportError, IntegrityError, ParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConsolidateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
