"""Benchmark inference latency and render the metrics tables, including the
comparison against the bundled externally reported baselines.

Run from the repository root:

    python3 demos/04_reports_and_latency.py
"""

import torch

from shuffle_histo import (
    ConfusionCounts,
    ModelConfig,
    benchmark_latency,
    build_model,
    build_standalone_model,
    count_parameters,
    emit_comparison_table,
    emit_magnification_table,
    load_comparison_baselines,
    metrics_report,
)
from shuffle_histo.report import rows_from_reports


def show_latency() -> None:
    print("== latency: hybrid vs standalone ==")
    torch.manual_seed(0)
    hybrid = build_model(ModelConfig())
    standalone = build_standalone_model()
    print(f"hybrid parameters    : {count_parameters(hybrid):>10,}")
    print(f"standalone parameters: {count_parameters(standalone):>10,}")

    # Median and interquartile range of per-image wall time over 30 timed
    # passes, after warmup.
    for name, model in (("hybrid", hybrid), ("standalone", standalone)):
        rep = benchmark_latency(model, input_size=212, n_timed=30)
        print(f"{name:10s}: {rep.per_image_ms:7.2f} ms/image (IQR {rep.iqr_ms:.2f})")
    print()


def show_tables() -> None:
    # Hand-built confusion counts stand in for a real evaluation run; see
    # demos/03_train_and_evaluate.py for producing these with evaluate().
    print("== per-magnification table ==")
    counts = {
        40: ConfusionCounts(tp=191, fp=1, tn=58, fn=5),
        100: ConfusionCounts(tp=196, fp=2, tn=61, fn=8),
        200: ConfusionCounts(tp=190, fp=2, tn=57, fn=7),
        400: ConfusionCounts(tp=175, fp=3, tn=56, fn=3),
    }
    reports = {m: metrics_report(c, magnification=m) for m, c in counts.items()}
    print(emit_magnification_table(reports))

    print("== comparison with externally reported baselines ==")
    rows = load_comparison_baselines() + rows_from_reports("This model", reports)
    print(emit_comparison_table(rows))


def main() -> None:
    show_latency()
    show_tables()


if __name__ == "__main__":
    main()
