"""Result tables and plots.

Two table shapes are emitted: a per-magnification metrics table for a single
model (rows: accuracy, precision, recall, F1, test time) and a multi-model
comparison grid. Baseline rows for the comparison grid ship as a bundled
fixture of externally reported results; they are reference values, never
measured output. All tables render as text, CSV, or JSON with two-decimal
cells that round-trip losslessly.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import ConfigError, IncompleteReportError
from .metrics import LatencyReport, MetricsReport, f1

__all__ = [
    "MAGNIFICATIONS",
    "COMPARISON_METRICS",
    "ComparisonRow",
    "emit_magnification_table",
    "emit_comparison_table",
    "rows_from_reports",
    "load_comparison_baselines",
    "plot_metric_bars",
    "plot_training_curves",
]

MAGNIFICATIONS = (40, 100, 200, 400)
COMPARISON_METRICS = ("Acc", "Pre", "Recall", "F1")
FORMATS = ("text", "csv", "json")

_MAG_HEADERS = tuple(f"{m}x" for m in MAGNIFICATIONS)


@dataclass(frozen=True)
class ComparisonRow:
    """One metric row of the comparison grid: a model name, a metric name,
    and one value per magnification (None marks an unreported value)."""

    model_name: str
    metric: str
    values: Mapping[int, Optional[float]]

    def __post_init__(self):
        if not self.model_name:
            raise ConfigError("model_name must be non-empty")
        if self.metric not in COMPARISON_METRICS:
            raise ConfigError(
                f"metric must be one of {COMPARISON_METRICS}, got {self.metric!r}"
            )
        if set(self.values) != set(MAGNIFICATIONS):
            raise ConfigError(
                f"values must be keyed by exactly {MAGNIFICATIONS}, "
                f"got {sorted(self.values)}"
            )
        for mag, v in self.values.items():
            if v is not None and not 0.0 <= float(v) <= 100.0:
                raise ConfigError(
                    f"{self.model_name} {self.metric} at {mag}x: "
                    f"value {v} outside [0, 100]"
                )
        object.__setattr__(self, "values", dict(self.values))


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")


def _cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def _text_grid(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    rows = [list(header)] + [list(r) for r in body]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for k, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])]
        cells += [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv_grid(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


def emit_magnification_table(
    reports: Mapping[int, MetricsReport],
    latencies: Optional[Mapping[int, LatencyReport]] = None,
    fmt: str = "text",
    stream=None,
) -> str:
    """Render the per-magnification metrics table (one column per level).

    Requires a report for every magnification. When a column's F1 disagrees
    with the value implied by its precision and recall by more than 0.01, a
    consistency warning is printed to ``stream`` (stderr by default).
    """
    _check_format(fmt)
    stream = stream if stream is not None else sys.stderr
    missing = [m for m in MAGNIFICATIONS if m not in reports]
    if missing:
        raise IncompleteReportError(
            f"missing reports for magnifications: {missing}"
        )
    for mag in MAGNIFICATIONS:
        rep = reports[mag]
        implied = f1(rep.precision, rep.recall)
        if abs(implied - rep.f1) > 0.01:
            print(
                f"warning: F1 at {mag}x is {rep.f1:.2f} but precision/recall "
                f"imply {implied:.2f}",
                file=stream,
            )

    rows: list[tuple[str, list[Optional[float]]]] = [
        ("Accuracy (%)", [reports[m].accuracy for m in MAGNIFICATIONS]),
        ("Precision (%)", [reports[m].precision for m in MAGNIFICATIONS]),
        ("Recall (%)", [reports[m].recall for m in MAGNIFICATIONS]),
        ("F1 score (%)", [reports[m].f1 for m in MAGNIFICATIONS]),
    ]
    if latencies is not None:
        lat_missing = [m for m in MAGNIFICATIONS if m not in latencies]
        if lat_missing:
            raise IncompleteReportError(
                f"missing latency reports for magnifications: {lat_missing}"
            )
        rows.append(
            ("Test time (ms)", [latencies[m].per_image_ms for m in MAGNIFICATIONS])
        )

    if fmt == "json":
        payload = {
            "columns": [f"{m}x" for m in MAGNIFICATIONS],
            "rows": [
                {"metric": name, "values": [round(v, 2) for v in vals]}
                for name, vals in rows
            ],
        }
        return json.dumps(payload, indent=2) + "\n"
    header = ["Metric", *_MAG_HEADERS]
    body = [[name, *(_cell(v) for v in vals)] for name, vals in rows]
    return _text_grid(header, body) if fmt == "text" else _csv_grid(header, body)


def emit_comparison_table(rows: Sequence[ComparisonRow], fmt: str = "text") -> str:
    """Render the multi-model comparison grid. Models keep their input order;
    metrics order Acc, Pre, Recall, F1; absent values render as "-"."""
    _check_format(fmt)
    if not rows:
        raise ConfigError("comparison table needs at least one row")
    by_model: dict[str, dict[str, ComparisonRow]] = {}
    for row in rows:
        by_model.setdefault(row.model_name, {})
        if row.metric in by_model[row.model_name]:
            raise ConfigError(
                f"duplicate row: {row.model_name} / {row.metric}"
            )
        by_model[row.model_name][row.metric] = row

    if fmt == "json":
        payload = {
            "columns": [f"{m}x" for m in MAGNIFICATIONS],
            "models": [
                {
                    "model": name,
                    "metrics": {
                        metric: [
                            None if metrics[metric].values[m] is None
                            else round(metrics[metric].values[m], 2)
                            for m in MAGNIFICATIONS
                        ]
                        for metric in COMPARISON_METRICS
                        if metric in metrics
                    },
                }
                for name, metrics in by_model.items()
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    header = ["Model", "Metric", *_MAG_HEADERS]
    body = []
    for name, metrics in by_model.items():
        first = True
        for metric in COMPARISON_METRICS:
            if metric not in metrics:
                continue
            row = metrics[metric]
            label = name if (first or fmt == "csv") else ""
            body.append(
                [label, metric, *(_cell(row.values[m]) for m in MAGNIFICATIONS)]
            )
            first = False
    return _text_grid(header, body) if fmt == "text" else _csv_grid(header, body)


def rows_from_reports(
    model_name: str, reports: Mapping[int, MetricsReport]
) -> list[ComparisonRow]:
    """Build the four comparison rows for a model from measured reports,
    filling magnifications without a report as absent."""
    fields = {
        "Acc": "accuracy",
        "Pre": "precision",
        "Recall": "recall",
        "F1": "f1",
    }
    return [
        ComparisonRow(
            model_name=model_name,
            metric=metric,
            values={
                m: (getattr(reports[m], attr) if m in reports else None)
                for m in MAGNIFICATIONS
            },
        )
        for metric, attr in fields.items()
    ]


def load_comparison_baselines() -> list[ComparisonRow]:
    """Load the bundled externally reported baseline rows."""
    text = (
        resources.files("shuffle_histo")
        .joinpath("resources/comparison_baselines.json")
        .read_text()
    )
    data = json.loads(text)
    rows = []
    for entry in data["models"]:
        for metric in COMPARISON_METRICS:
            if metric not in entry["metrics"]:
                continue
            raw = entry["metrics"][metric]
            rows.append(
                ComparisonRow(
                    model_name=entry["name"],
                    metric=metric,
                    values={
                        m: (None if raw[str(m)] is None else float(raw[str(m)]))
                        for m in MAGNIFICATIONS
                    },
                )
            )
    return rows


def plot_metric_bars(
    reports: Mapping[int, MetricsReport], out_path: str | Path
) -> Path:
    """Grouped bar chart of the four percentage metrics per magnification."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    mags = [m for m in MAGNIFICATIONS if m in reports]
    if not mags:
        raise IncompleteReportError("no reports to plot")
    metrics = [
        ("Accuracy", [reports[m].accuracy for m in mags]),
        ("Precision", [reports[m].precision for m in mags]),
        ("Recall", [reports[m].recall for m in mags]),
        ("F1", [reports[m].f1 for m in mags]),
    ]
    x = np.arange(len(mags))
    width = 0.2
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, (name, vals) in enumerate(metrics):
        ax.bar(x + (i - 1.5) * width, vals, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{m}x" for m in mags])
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.set_title("Metrics by magnification")
    ax.legend(loc="lower right")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_training_curves(history_csv: str | Path, out_path: str | Path) -> Path:
    """Loss and validation-accuracy curves from a run's history.csv."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs, train_loss, val_loss, val_acc = [], [], [], []
    with open(history_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            train_loss.append(float(row["train_loss"]))
            val_loss.append(float(row["val_loss"]))
            val_acc.append(float(row["val_accuracy"]))
    if not epochs:
        raise IncompleteReportError(f"no epochs in {history_csv}")

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(epochs, train_loss, label="train loss")
    ax.plot(epochs, val_loss, label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, val_acc, color="tab:green", linestyle="--", label="val accuracy")
    ax2.set_ylabel("val accuracy (%)")
    ax2.set_ylim(0, 105)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right")
    ax.set_title("Training curves")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
