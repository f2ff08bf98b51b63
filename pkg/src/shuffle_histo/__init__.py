"""Hybrid shuffle-attention classifier for breast histopathology images.

A pretrained mobile-style backbone, truncated at a chosen output stride,
feeds a stack of residual dual-shuffle attention blocks and a binary
sigmoid head. The package covers dataset scanning and splitting, synthetic
data generation, training, evaluation metrics, latency benchmarking, and
report emission, all reproducible from a single seed.
"""

from .blocks import (
    BlockConfig,
    ChannelAttention,
    ChannelShuffle,
    DualShuffleAttentionBlock,
    FeatureMapSpec,
    ResidualDualShuffleAttentionBlock,
    channel_shuffle,
)
from .data import (
    DatasetManifest,
    ImageRecord,
    SplitSpec,
    make_splits,
    parse_filename,
    preprocess_image,
    scan_dataset,
    synth_dataset,
)
from .errors import (
    CheckpointError,
    ConcurrentBenchmarkError,
    ConfigError,
    ConfigMismatchError,
    CorruptCheckpointError,
    DivergenceError,
    EmptyDatasetError,
    FilenameParseError,
    IncompleteReportError,
    InvalidImageError,
    PretrainedWeightsError,
    ShuffleHistoError,
    SplitInfeasibleError,
    UndefinedMetricError,
)
from .metrics import (
    ConfusionCounts,
    LatencyReport,
    MetricsReport,
    benchmark_latency,
    confusion_from_predictions,
    f1,
    metrics_report,
)
from .model import (
    HybridClassifier,
    ModelConfig,
    StandaloneClassifier,
    build_model,
    build_standalone_model,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .report import (
    ComparisonRow,
    emit_comparison_table,
    emit_magnification_table,
    load_comparison_baselines,
)
from .training import TrainConfig, TrainState, evaluate, run_training, sweep_m, train

__version__ = "0.1.0"

__all__ = [
    # blocks
    "BlockConfig", "ChannelAttention", "ChannelShuffle",
    "DualShuffleAttentionBlock", "FeatureMapSpec",
    "ResidualDualShuffleAttentionBlock", "channel_shuffle",
    # data
    "DatasetManifest", "ImageRecord", "SplitSpec", "make_splits",
    "parse_filename", "preprocess_image", "scan_dataset", "synth_dataset",
    # errors
    "CheckpointError", "ConcurrentBenchmarkError", "ConfigError",
    "ConfigMismatchError", "CorruptCheckpointError", "DivergenceError",
    "EmptyDatasetError", "FilenameParseError", "IncompleteReportError",
    "InvalidImageError", "PretrainedWeightsError", "ShuffleHistoError",
    "SplitInfeasibleError", "UndefinedMetricError",
    # metrics
    "ConfusionCounts", "LatencyReport", "MetricsReport", "benchmark_latency",
    "confusion_from_predictions", "f1", "metrics_report",
    # model
    "HybridClassifier", "ModelConfig", "StandaloneClassifier", "build_model",
    "build_standalone_model", "count_parameters", "load_checkpoint",
    "save_checkpoint",
    # report
    "ComparisonRow", "emit_comparison_table", "emit_magnification_table",
    "load_comparison_baselines",
    # training
    "TrainConfig", "TrainState", "evaluate", "run_training", "sweep_m", "train",
]
