"""Self-contained SVG accuracy charts (no plotting dependency).

Two layouts mirror the replication figures: one panel per task for short
sequences, and a first-task + pooled-average pair for long ones. Output
is a pure function of the input rows: float coordinates are formatted
with fixed precision and iteration order follows the file order, so
re-rendering the same metrics is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

PANEL_W = 360
PANEL_H = 300
MARGIN_L = 52
MARGIN_R = 16
MARGIN_T = 40
MARGIN_B = 42
LEGEND_H = 26


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


@dataclass
class Series:
    label: str
    points: list[tuple[float, float]]


@dataclass
class Panel:
    title: str
    series: list[Series]
    x_label: str = "epoch"
    y_label: str = "accuracy"
    boundaries: list[float] = field(default_factory=list)
    reference: float | None = None
    y_min: float = 0.0
    y_max: float = 1.0


def _panel_svg(panel: Panel, x_offset: float, colors: dict[str, str]) -> list[str]:
    left = x_offset + MARGIN_L
    right = x_offset + PANEL_W - MARGIN_R
    top = MARGIN_T
    bottom = PANEL_H - MARGIN_B
    xs = [x for s in panel.series for x, _ in s.points]
    x_max = max(xs) if xs else 1.0
    x_min = min(xs) if xs else 0.0
    span = (x_max - x_min) or 1.0

    def px(x: float) -> float:
        return left + (x - x_min) / span * (right - left)

    def py(y: float) -> float:
        frac = (y - panel.y_min) / (panel.y_max - panel.y_min)
        return bottom - frac * (bottom - top)

    out = []
    out.append(f'<text x="{(left + right) / 2:.2f}" y="{top - 16}" '
               f'text-anchor="middle" font-size="15" font-family="sans-serif" '
               f'font-weight="bold">{_esc(panel.title)}</text>')
    # horizontal grid with y tick labels
    for i in range(6):
        y_val = panel.y_min + (panel.y_max - panel.y_min) * i / 5
        y = py(y_val)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-size="11" font-family="sans-serif">{y_val:.1f}</text>')
    # x ticks: integer-ish positions, at most 10
    n_ticks = min(10, int(span) if span >= 1 else 1)
    for i in range(n_ticks + 1):
        x_val = x_min + span * i / n_ticks
        x = px(x_val)
        out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" '
                   f'y2="{bottom + 4}" stroke="#000000" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{bottom + 16}" text-anchor="middle" '
                   f'font-size="11" font-family="sans-serif">{x_val:.0f}</text>')
    # task boundaries
    for b in panel.boundaries:
        x = px(b)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{bottom}" '
                   f'stroke="#999999" stroke-width="1" stroke-dasharray="4,3"/>')
    # reference line
    if panel.reference is not None:
        y = py(panel.reference)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" '
                   f'stroke="#333333" stroke-width="1.5" stroke-dasharray="7,4"/>')
    # axes
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
               f'stroke="#000000" stroke-width="1.5"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" '
               f'stroke="#000000" stroke-width="1.5"/>')
    out.append(f'<text x="{(left + right) / 2:.2f}" y="{bottom + 32}" '
               f'text-anchor="middle" font-size="12" '
               f'font-family="sans-serif">{_esc(panel.x_label)}</text>')
    # series
    for s in panel.series:
        color = colors[s.label]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in s.points)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                   f'points="{pts}"/>')
    return out


def render_figure(panels: list[Panel], title: str = "") -> str:
    """Lay panels out horizontally with one shared legend line on top."""
    labels: list[str] = []
    for panel in panels:
        for s in panel.series:
            if s.label not in labels:
                labels.append(s.label)
    colors = {lab: PALETTE[i % len(PALETTE)] for i, lab in enumerate(labels)}

    width = PANEL_W * len(panels)
    height = PANEL_H + LEGEND_H
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>']
    # legend
    lx = 16
    ly = PANEL_H + LEGEND_H - 10
    for lab in labels:
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                   f'y2="{ly - 4}" stroke="{colors[lab]}" stroke-width="3"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" font-size="12" '
                   f'font-family="sans-serif">{_esc(lab)}</text>')
        lx += 36 + 8 * len(lab)
    if title:
        out.append(f'<text x="{width - 10}" y="{ly}" text-anchor="end" '
                   f'font-size="12" font-family="sans-serif" '
                   f'fill="#555555">{_esc(title)}</text>')
    for i, panel in enumerate(panels):
        out.extend(_panel_svg(panel, i * PANEL_W, colors))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------
# Figure composers over metrics rows (see reporting.CSV_COLUMNS)
# ----------------------------------------------------------------------

def _regime_steps(rows: list[dict]) -> dict[str, list[dict]]:
    """Group rows into ordered per-regime steps, one per (task, epoch).

    Each step holds the epoch's evaluated accuracies keyed by task id.
    Row order in the file defines step order.
    """
    regimes: dict[str, list[dict]] = {}
    index: dict[tuple, dict] = {}
    for row in rows:
        key = (row["regime"], row["task_id"], row["epoch"])
        if key not in index:
            step = {"task_id": row["task_id"], "epoch": row["epoch"],
                    "evals": {}}
            index[key] = step
            regimes.setdefault(row["regime"], []).append(step)
        index[key]["evals"][row["eval_task_id"]] = row["eval_acc"]
    return regimes


def _boundaries(steps: list[dict]) -> list[float]:
    cuts = []
    for i in range(1, len(steps)):
        if steps[i]["task_id"] != steps[i - 1]["task_id"]:
            cuts.append(float(i))
    return cuts


def task_panels_figure(rows: list[dict], reference: float | None = None,
                       title: str = "") -> str:
    """One panel per task: that task's test accuracy over the whole run."""
    regimes = _regime_steps(rows)
    n_tasks = 1 + max(row["eval_task_id"] for row in rows)
    panels = []
    for task in range(n_tasks):
        series = []
        bounds: list[float] = []
        for regime, steps in regimes.items():
            pts = [(float(i), step["evals"][task])
                   for i, step in enumerate(steps) if task in step["evals"]]
            if pts:
                series.append(Series(label=regime, points=pts))
            bounds = bounds or _boundaries(steps)
        panels.append(Panel(title=f"task {chr(ord('A') + task)}",
                            series=series, x_label="training epoch (sequence)",
                            boundaries=bounds, reference=reference))
    return render_figure(panels, title=title)


def sequence_overview_figure(rows: list[dict], reference: float | None = None,
                             title: str = "") -> str:
    """First-task retention and pooled-average accuracy panels."""
    regimes = _regime_steps(rows)
    first_panel = Panel(title="first task", series=[],
                        x_label="training epoch (sequence)",
                        reference=reference)
    pooled_panel = Panel(title="average over seen tasks", series=[],
                         x_label="training epoch (sequence)",
                         reference=reference)
    for regime, steps in regimes.items():
        first = [(float(i), step["evals"][0])
                 for i, step in enumerate(steps) if 0 in step["evals"]]
        pooled = [(float(i),
                   sum(step["evals"].values()) / len(step["evals"]))
                  for i, step in enumerate(steps) if step["evals"]]
        first_panel.series.append(Series(label=regime, points=first))
        pooled_panel.series.append(Series(label=regime, points=pooled))
        bounds = _boundaries(steps)
        first_panel.boundaries = first_panel.boundaries or bounds
        pooled_panel.boundaries = pooled_panel.boundaries or bounds
    return render_figure([first_panel, pooled_panel], title=title)
