"""CSV and JSON metrics exports plus their readers.

One CSV row per (regime, task, epoch, evaluated task): the per-epoch
validation metrics are repeated across that epoch's evaluation rows.
The JSON export carries exactly the same records plus the configuration
echo and the master seed, so the two formats can be cross-checked
record for record.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ParseError
from .runner import MetricsLog

CSV_COLUMNS = ("regime", "task_id", "epoch", "train_loss", "val_loss",
               "val_acc", "eval_task_id", "eval_acc", "wall_secs")

_INT_COLUMNS = {"task_id", "epoch", "eval_task_id"}


def metrics_rows(metrics: MetricsLog) -> list[dict]:
    """Flatten a metrics log into CSV-schema records."""
    rows = []
    for regime, records in metrics.records.items():
        for rec in records:
            for eval_task, acc in enumerate(rec.prev_task_acc):
                rows.append({
                    "regime": regime,
                    "task_id": rec.task_id,
                    "epoch": rec.epoch,
                    "train_loss": rec.train_loss,
                    "val_loss": rec.val_loss,
                    "val_acc": rec.val_acc,
                    "eval_task_id": eval_task,
                    "eval_acc": acc,
                    "wall_secs": rec.wall_secs,
                })
    return rows


def _format_cell(column: str, value) -> str:
    if column == "regime":
        return str(value)
    if column in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(path: Path, metrics: MetricsLog) -> None:
    """UTF-8, LF line endings, header row mandatory."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in metrics_rows(metrics):
            writer.writerow([_format_cell(c, row[c]) for c in CSV_COLUMNS])


def write_metrics_json(path: Path, metrics: MetricsLog) -> None:
    doc = {
        "experiment_id": metrics.experiment_id,
        "seed": metrics.master_seed,
        "config": metrics.config_echo,
        "single_task_reference": metrics.single_task_reference,
        "records": metrics_rows(metrics),
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def read_metrics_csv(path: Path) -> list[dict]:
    """Parse and type-check a metrics CSV; errors name the offending row."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty metrics file") from None
        if tuple(header) != CSV_COLUMNS:
            raise ParseError(f"{path}: bad header row: expected "
                             f"{list(CSV_COLUMNS)}, got {header}")
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(CSV_COLUMNS):
                raise ParseError(f"{path}: row {lineno}: expected "
                                 f"{len(CSV_COLUMNS)} cells, got {len(cells)}")
            row: dict = {}
            for column, cell in zip(CSV_COLUMNS, cells):
                try:
                    if column == "regime":
                        row[column] = cell
                    elif column in _INT_COLUMNS:
                        row[column] = int(cell)
                    else:
                        row[column] = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {lineno}: column "
                                     f"{column}: cannot parse {cell!r}") from None
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def read_metrics_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
