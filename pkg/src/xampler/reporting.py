"""Result tables, CSV/markdown emission, fixture ingestion, and figures.

Tables keep one row per language (or method, for ablation-style fixtures)
and one column per method; the Avg row is recomputed from the column, never
stored. Report emission also renders a matplotlib figure next to the
delimited output: bar charts for tables, line charts for sweeps.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalharness import EvalError, EvalRecord, SweepResult, macro_average

AVG_ROW = "Avg"


@dataclass
class ReportTable:
    """Rows x methods matrix of accuracies, in percent."""

    key_name: str  # heading of the row-key column, e.g. "language"
    keys: list[str]
    methods: list[str]
    values: dict[tuple[str, str], float] = field(default_factory=dict)

    def value(self, key: str, method: str) -> float:
        return self.values[(key, method)]

    def column(self, method: str) -> list[float]:
        return [self.values[(k, method)] for k in self.keys]

    def column_mean(self, method: str) -> float:
        return macro_average(self.column(method))

    @classmethod
    def from_records(cls, records: Sequence[EvalRecord]) -> ReportTable:
        keys: list[str] = []
        methods: list[str] = []
        values: dict[tuple[str, str], float] = {}
        for r in records:
            if r.language not in keys:
                keys.append(r.language)
            if r.method not in methods:
                methods.append(r.method)
            values[(r.language, r.method)] = r.accuracy * 100.0
        missing = [(k, m) for k in keys for m in methods if (k, m) not in values]
        if missing:
            raise EvalError(f"sparse records: no value for {missing[0]}")
        return cls(key_name="language", keys=keys, methods=methods, values=values)


def load_fixture(path: str | Path) -> ReportTable:
    """Read a fixture CSV (leading ``#`` lines are provenance comments)."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        data_lines = [line for line in fh if not line.startswith("#")]
    for row in csv.reader(data_lines):
        if row:
            rows.append(row)
    if len(rows) < 2:
        raise EvalError(f"{path}: fixture has no data rows")
    header = rows[0]
    key_name, methods = header[0], header[1:]
    if not methods:
        raise EvalError(f"{path}: fixture has no method columns")
    keys = []
    values: dict[tuple[str, str], float] = {}
    for row in rows[1:]:
        if len(row) != len(header):
            raise EvalError(f"{path}: row {row[:1]} has {len(row)} cells, expected {len(header)}")
        key = row[0]
        keys.append(key)
        for method, cell in zip(methods, row[1:]):
            try:
                values[(key, method)] = float(cell)
            except ValueError:
                raise EvalError(f"{path}: non-numeric cell {cell!r} in row {key!r}") from None
    return ReportTable(key_name=key_name, keys=keys, methods=methods, values=values)


def ablation_gaps(table: ReportTable, reference: str | None = None) -> dict[str, float]:
    """Accuracy gap of every row below the reference row (default: the best
    row). Meant for single-column method/accuracy fixtures."""
    if len(table.methods) != 1:
        raise EvalError("ablation gaps need a single-column table")
    method = table.methods[0]
    if reference is None:
        reference = max(table.keys, key=lambda k: table.value(k, method))
    ref_value = table.value(reference, method)
    return {k: ref_value - table.value(k, method) for k in table.keys if k != reference}


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def render_table(table: ReportTable, fmt: str = "csv", average_row: bool = True) -> str:
    """Serialize a table as RFC-4180 CSV or a markdown grid, Avg row last."""
    body_rows = [[k] + [_fmt(table.value(k, m)) for m in table.methods] for k in table.keys]
    if average_row and len(table.keys) > 1:
        body_rows.append([AVG_ROW] + [_fmt(table.column_mean(m)) for m in table.methods])
    header = [table.key_name] + list(table.methods)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body_rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in body_rows]
        return "\n".join(lines) + "\n"
    raise EvalError(f"unknown report format {fmt!r}")


def render_sweep(sweeps: Sequence[SweepResult], fmt: str = "csv") -> str:
    """Serialize sweeps as one row per axis value, one column per method."""
    if not sweeps:
        raise EvalError("no sweeps to render")
    axis = sweeps[0].axis
    values = sorted({v for s in sweeps for v, _ in s.points})
    methods = [s.method or f"series{i}" for i, s in enumerate(sweeps)]
    lookup = {
        (s.method or f"series{i}", v): acc
        for i, s in enumerate(sweeps)
        for v, acc in s.points
    }
    header = [axis] + methods
    rows = []
    for v in values:
        cells = [str(v)]
        for m in methods:
            acc = lookup.get((m, v))
            cells.append(_fmt(acc * 100.0) if acc is not None else "")
        rows.append(cells)
    notes = {v: note for s in sweeps for v, note in s.notes.items()}
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header + (["note"] if notes else []))
        for cells in rows:
            if notes:
                cells = cells + [notes.get(int(cells[0]), "")]
            writer.writerow(cells)
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines += ["| " + " | ".join(cells) + " |" for cells in rows]
        return "\n".join(lines) + "\n"
    raise EvalError(f"unknown report format {fmt!r}")


def emit_report(
    content: ReportTable | Sequence[SweepResult],
    path: str | Path,
    fmt: str = "csv",
    figure: bool = True,
) -> Path:
    """Write the delimited report to ``path`` and, unless disabled, a PNG
    figure of the same data next to it."""
    path = Path(path)
    if isinstance(content, ReportTable):
        text = render_table(content, fmt=fmt)
    else:
        text = render_sweep(content, fmt=fmt)
    path.write_text(text, encoding="utf-8")
    if figure:
        fig_path = path.with_suffix(".png")
        if isinstance(content, ReportTable):
            render_table_figure(content, fig_path)
        else:
            render_sweep_figure(content, fig_path)
    return path


def render_table_figure(table: ReportTable, path: str | Path) -> None:
    """Bar chart of per-method averages across the table's rows."""
    means = [table.column_mean(m) for m in table.methods]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(table.methods)), 3.2))
    ax.bar(range(len(table.methods)), means, color="#4878d0")
    ax.set_xticks(range(len(table.methods)))
    ax.set_xticklabels(table.methods, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("macro accuracy (%)")
    ax.set_ylim(0, 100)
    for i, mean in enumerate(means):
        ax.text(i, mean + 1, _fmt(mean), ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figure(sweeps: Sequence[SweepResult], path: str | Path) -> None:
    """Line chart of macro accuracy against the sweep axis, one line per
    method."""
    if not sweeps:
        raise EvalError("no sweeps to render")
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    for sweep in sweeps:
        xs = [v for v, _ in sweep.points]
        ys = [acc * 100.0 for _, acc in sweep.points]
        ax.plot(xs, ys, marker="o", label=sweep.method or sweep.axis)
    ax.set_xlabel(sweeps[0].axis)
    ax.set_ylabel("macro accuracy (%)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
