"""Confusion bookkeeping, the four evaluation percentages, and the
inference-latency benchmark.

Metric computation is pure. The latency benchmark takes exclusive ownership
of the process: concurrent benchmarks are rejected rather than interleaved.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConcurrentBenchmarkError, UndefinedMetricError

__all__ = [
    "ConfusionCounts",
    "MetricsReport",
    "LatencyReport",
    "confusion_from_predictions",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "degenerate_metrics",
    "metrics_report",
    "benchmark_latency",
]


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/TN/FN tallies; malignant is the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion_from_predictions(
    probs: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> ConfusionCounts:
    """Tally predictions (prob >= threshold) against 0/1 labels."""
    if len(probs) != len(labels):
        raise ValueError(f"length mismatch: {len(probs)} probs vs {len(labels)} labels")
    if len(probs) == 0:
        raise ValueError("need at least one (prob, label) pair")
    tp = fp = tn = fn = 0
    for p, y in zip(probs, labels):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p!r} outside [0, 1]")
        if y not in (0, 1):
            raise ValueError(f"label {y!r} not in {{0, 1}}")
        predicted = p >= threshold
        if predicted and y == 1:
            tp += 1
        elif predicted and y == 0:
            fp += 1
        elif not predicted and y == 0:
            tn += 1
        else:
            fn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    """Percentage of correct labels: 100 * (tp + tn) / total."""
    if c.total == 0:
        raise UndefinedMetricError("accuracy is undefined for zero samples")
    return 100.0 * (c.tp + c.tn) / c.total


def precision(c: ConfusionCounts) -> float:
    """100 * tp / (tp + fp); 0 when the denominator is 0 (see
    :func:`degenerate_metrics`)."""
    denom = c.tp + c.fp
    return 100.0 * c.tp / denom if denom else 0.0


def recall(c: ConfusionCounts) -> float:
    """100 * tp / (tp + fn); 0 when the denominator is 0 (see
    :func:`degenerate_metrics`)."""
    denom = c.tp + c.fn
    return 100.0 * c.tp / denom if denom else 0.0


def degenerate_metrics(c: ConfusionCounts) -> set[str]:
    """Names of metrics whose denominator is zero for these counts."""
    flags = set()
    if c.tp + c.fp == 0:
        flags.add("precision")
    if c.tp + c.fn == 0:
        flags.add("recall")
    return flags


def f1(precision_pct: float, recall_pct: float) -> float:
    """Harmonic mean 2PR/(P + R) of two percentages; 0 when both are 0."""
    for name, v in (("precision", precision_pct), ("recall", recall_pct)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} must be in [0, 100], got {v!r}")
    s = precision_pct + recall_pct
    return 2.0 * precision_pct * recall_pct / s if s else 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation results at one magnification level; percentages are stored
    rounded to two decimals (round-half-even)."""

    magnification: Optional[int]
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    degenerate: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "magnification": self.magnification,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": self.counts.to_dict(),
            "degenerate": list(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            magnification=d["magnification"],
            accuracy=d["accuracy"],
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            counts=ConfusionCounts(**d["counts"]),
            degenerate=tuple(d.get("degenerate", ())),
        )


def metrics_report(
    counts: ConfusionCounts, magnification: Optional[int] = None
) -> MetricsReport:
    """Compute all four percentages from the counts (rounded to 2 decimals)."""
    p = precision(counts)
    r = recall(counts)
    return MetricsReport(
        magnification=magnification,
        accuracy=round(accuracy(counts), 2),
        precision=round(p, 2),
        recall=round(r, 2),
        f1=round(f1(p, r), 2),
        counts=counts,
        degenerate=tuple(sorted(degenerate_metrics(counts))),
    )


@dataclass(frozen=True)
class LatencyReport:
    """Per-image inference latency summary (median and IQR, milliseconds)."""

    per_image_ms: float
    iqr_ms: float
    n_warmup: int
    n_timed: int
    batch_size: int
    device_label: str

    def __post_init__(self):
        if self.per_image_ms <= 0:
            raise ValueError(f"per_image_ms must be > 0, got {self.per_image_ms}")
        if self.n_timed < 30:
            raise ValueError(f"n_timed must be >= 30, got {self.n_timed}")

    def to_dict(self) -> dict:
        return {
            "per_image_ms": self.per_image_ms,
            "iqr_ms": self.iqr_ms,
            "n_warmup": self.n_warmup,
            "n_timed": self.n_timed,
            "batch_size": self.batch_size,
            "device_label": self.device_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyReport":
        return cls(**d)


_benchmark_lock = threading.Lock()


def benchmark_latency(
    model: torch.nn.Module,
    input_size: int = 212,
    batch_size: int = 1,
    n_warmup: int = 5,
    n_timed: int = 30,
    device: Optional[str] = None,
    seed: int = 0,
) -> LatencyReport:
    """Time ``n_timed`` inference passes on a fixed random input after
    ``n_warmup`` untimed passes; reports the median and IQR of per-image wall
    time (batch time / batch size). Accelerator work is synchronized before
    every stop timestamp. Only one benchmark may run per process at a time.
    """
    if n_timed < 30:
        raise ValueError(f"n_timed must be >= 30 for a stable median, got {n_timed}")
    if n_warmup < 0 or batch_size < 1:
        raise ValueError("n_warmup must be >= 0 and batch_size >= 1")
    if not _benchmark_lock.acquire(blocking=False):
        raise ConcurrentBenchmarkError(
            "another latency benchmark is already running in this process"
        )
    try:
        dev = torch.device(device) if device else next(model.parameters()).device
        was_training = model.training
        model.eval()
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(batch_size, 3, input_size, input_size, generator=gen).to(dev)

        def _sync():
            if dev.type == "cuda":
                torch.cuda.synchronize(dev)

        times_ms = []
        with torch.no_grad():
            for _ in range(n_warmup):
                model(x)
            _sync()
            for _ in range(n_timed):
                _sync()
                start = time.perf_counter()
                model(x)
                _sync()
                times_ms.append((time.perf_counter() - start) * 1000.0 / batch_size)
        model.train(was_training)

        arr = np.asarray(times_ms)
        if dev.type == "cuda":
            device_label = torch.cuda.get_device_name(dev)
        else:
            device_label = f"cpu/{torch.get_num_threads()}t"
        return LatencyReport(
            per_image_ms=float(np.median(arr)),
            iqr_ms=float(np.percentile(arr, 75) - np.percentile(arr, 25)),
            n_warmup=n_warmup,
            n_timed=n_timed,
            batch_size=batch_size,
            device_label=device_label,
        )
    finally:
        _benchmark_lock.release()
