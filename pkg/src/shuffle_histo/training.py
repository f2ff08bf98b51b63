"""Training loop, evaluation, the m-sweep, and run-directory artifacts.

A run directory holds ``config.json``, the three split files,
``history.csv`` (columns: epoch,train_loss,val_loss,val_accuracy) and the
best checkpoint as ``best.weights`` + ``best.meta.json``. Everything is
deterministic given (seed, config, data, device).
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .data import ImageRecord, augment, load_rgb, preprocess_image, write_split_files
from .errors import ConfigError, DivergenceError
from .metrics import MetricsReport, confusion_from_predictions, metrics_report
from .model import HybridClassifier, ModelConfig, build_model, save_checkpoint

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainState",
    "BestSnapshot",
    "seed_everything",
    "train",
    "evaluate",
    "choose_m",
    "sweep_m",
    "run_training",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-4
    backbone_lr_multiplier: float = 0.1
    seed: int = 0
    magnification: Optional[int] = None
    loss: str = "binary-cross-entropy"
    early_stop_patience: Optional[int] = None
    augment: bool = False
    pos_weight: Optional[float] = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # 0 is tolerated so the null-update contract stays testable.
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.loss != "binary-cross-entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainState:
    epoch: int = 0
    best_val_accuracy: float = 0.0
    history: list[EpochStats] = field(default_factory=list)


@dataclass
class BestSnapshot:
    """In-memory copy of the best-by-val-accuracy model parameters."""

    state_dict: dict
    epoch: int
    val_accuracy: float


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _labels(records: Sequence[ImageRecord]) -> torch.Tensor:
    return torch.tensor(
        [1.0 if r.label == "malignant" else 0.0 for r in records]
    )


class _RecordLoader:
    """Loads and preprocesses records, caching raw pixels in memory
    (desk-scale datasets fit comfortably)."""

    def __init__(self, root: str | Path, records: Sequence[ImageRecord]):
        self.root = Path(root)
        self.records = list(records)
        self._raw = [load_rgb(self.root / r.path) for r in self.records]

    def batch(self, indices: Sequence[int], augment_seed: Optional[int] = None) -> torch.Tensor:
        tensors = []
        for i in indices:
            raw = self._raw[i]
            if augment_seed is not None:
                raw = augment(raw, seed=augment_seed * 1_000_003 + i)
            tensors.append(preprocess_image(raw))
        return torch.stack(tensors)


def _forward_logits(model: torch.nn.Module, x: torch.Tensor) -> torch.Tensor:
    if hasattr(model, "forward_logits"):
        return model.forward_logits(x)
    return model(x)


def train(
    model: HybridClassifier,
    train_records: Sequence[ImageRecord],
    val_records: Sequence[ImageRecord],
    cfg: TrainConfig,
    root: str | Path = ".",
    log: Optional[Callable[[str], None]] = None,
) -> tuple[TrainState, BestSnapshot]:
    """Minimize binary cross-entropy on the train split, tracking val loss and
    accuracy each epoch.

    The backbone stays frozen for ``model.config.freeze_backbone_epochs``
    epochs, then trains at ``backbone_lr_multiplier`` times the base learning
    rate. The best snapshot is chosen by val accuracy with ties going to the
    earlier epoch. A non-finite loss raises :class:`DivergenceError` naming
    the epoch and batch.
    """
    if not train_records or not val_records:
        raise ValueError("train and val record lists must be non-empty")
    seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    train_loader = _RecordLoader(root, train_records)
    val_loader = _RecordLoader(root, val_records)
    y_train = _labels(train_records)
    y_val = _labels(val_records)

    freeze_epochs = getattr(getattr(model, "config", None), "freeze_backbone_epochs", 0)
    has_backbone = hasattr(model, "freeze_backbone")
    if has_backbone:
        groups = [
            {"params": list(model.finetune_parameters()), "lr": cfg.learning_rate},
            {
                "params": list(model.backbone_parameters()),
                "lr": cfg.learning_rate * cfg.backbone_lr_multiplier,
            },
        ]
    else:
        groups = [{"params": list(model.parameters()), "lr": cfg.learning_rate}]
    optimizer = torch.optim.Adam(groups)
    pos_weight = (
        torch.tensor(float(cfg.pos_weight)) if cfg.pos_weight is not None else None
    )
    loss_fn = torch.nn.BCEWithLogitsLoss(pos_weight=pos_weight)

    state = TrainState()
    best = BestSnapshot(state_dict={}, epoch=-1, val_accuracy=-1.0)
    epochs_since_best = 0

    for epoch in range(cfg.epochs):
        if has_backbone:
            if epoch < freeze_epochs:
                model.freeze_backbone()
            else:
                model.unfreeze_backbone()
        model.train()
        order = rng.permutation(len(train_records))
        running_loss = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            x = train_loader.batch(
                idx, augment_seed=(cfg.seed + epoch) if cfg.augment else None
            )
            y = y_train[idx]
            optimizer.zero_grad()
            logits = _forward_logits(model, x)
            loss = loss_fn(logits, y)
            if not torch.isfinite(loss):
                raise DivergenceError(epoch=epoch, batch=b, loss=loss.item())
            loss.backward()
            optimizer.step()
            running_loss += loss.item() * len(idx)
        train_loss = running_loss / len(train_records)

        val_probs, val_loss = _predict(model, val_loader, y_val, cfg.batch_size, loss_fn)
        val_counts = confusion_from_predictions(
            val_probs.tolist(), [int(v) for v in y_val.tolist()], cfg.threshold
        )
        val_accuracy = 100.0 * (val_counts.tp + val_counts.tn) / val_counts.total

        state.epoch = epoch + 1
        state.history.append(
            EpochStats(
                epoch=epoch + 1,
                train_loss=train_loss,
                val_loss=val_loss,
                val_accuracy=val_accuracy,
            )
        )
        if val_accuracy > best.val_accuracy:
            best = BestSnapshot(
                state_dict=copy.deepcopy(model.state_dict()),
                epoch=epoch + 1,
                val_accuracy=val_accuracy,
            )
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        state.best_val_accuracy = best.val_accuracy
        if log:
            log(
                f"epoch {epoch + 1}/{cfg.epochs} "
                f"train_loss={train_loss:.4f} val_loss={val_loss:.4f} "
                f"val_acc={val_accuracy:.2f}%"
            )
        if (
            cfg.early_stop_patience is not None
            and epochs_since_best >= cfg.early_stop_patience
        ):
            break
    return state, best


def _predict(
    model: torch.nn.Module,
    loader: _RecordLoader,
    labels: torch.Tensor,
    batch_size: int,
    loss_fn: Optional[torch.nn.Module] = None,
) -> tuple[np.ndarray, float]:
    model.eval()
    probs = []
    total_loss = 0.0
    with torch.no_grad():
        for start in range(0, len(loader.records), batch_size):
            idx = range(start, min(start + batch_size, len(loader.records)))
            x = loader.batch(idx)
            logits = _forward_logits(model, x)
            if loss_fn is not None:
                total_loss += float(loss_fn(logits, labels[list(idx)])) * len(list(idx))
            probs.append(torch.sigmoid(logits))
    mean_loss = total_loss / len(loader.records) if loss_fn is not None else float("nan")
    return torch.cat(probs).numpy(), mean_loss


def evaluate(
    model: torch.nn.Module,
    records: Sequence[ImageRecord],
    magnification: Optional[int] = None,
    root: str | Path = ".",
    threshold: float = 0.5,
    batch_size: int = 32,
) -> MetricsReport:
    """Run inference over all records (no augmentation) and build a report."""
    if not records:
        raise ValueError("record list must be non-empty")
    loader = _RecordLoader(root, records)
    labels = _labels(records)
    probs, _ = _predict(model, loader, labels, batch_size)
    counts = confusion_from_predictions(
        probs.tolist(), [int(v) for v in labels.tolist()], threshold
    )
    return metrics_report(counts, magnification=magnification)


def choose_m(accuracies: Mapping[int, float]) -> int:
    """Argmax of val accuracy over m, ties broken toward the smallest m
    (the lighter model)."""
    if not accuracies:
        raise ValueError("accuracies must be non-empty")
    return min(accuracies, key=lambda m: (-accuracies[m], m))


def sweep_m(
    candidates: Sequence[int],
    model_cfg: ModelConfig,
    train_records: Sequence[ImageRecord],
    val_records: Sequence[ImageRecord],
    train_cfg: TrainConfig,
    root: str | Path = ".",
    log: Optional[Callable[[str], None]] = None,
) -> tuple[int, dict[int, float]]:
    """Train one model per candidate m on the same split and seed; return the
    val-accuracy argmax with ties broken toward the smallest m."""
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    if any(m < 1 for m in candidates):
        raise ValueError(f"all m candidates must be >= 1, got {list(candidates)}")
    accuracies: dict[int, float] = {}
    for m in candidates:
        cfg_m = dataclasses.replace(model_cfg, m=m)
        try:
            seed_everything(train_cfg.seed)
            model = build_model(cfg_m)
            _, best = train(model, train_records, val_records, train_cfg, root, log=log)
        except Exception as exc:
            raise type(exc)(f"m={m}: {exc}") from exc
        accuracies[m] = best.val_accuracy
        if log:
            log(f"m={m}: best val accuracy {best.val_accuracy:.2f}%")
    return choose_m(accuracies), accuracies


def _history_csv(path: Path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for h in history:
            writer.writerow([h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.val_accuracy)])


def run_training(
    run_dir: str | Path,
    root: str | Path,
    train_records: Sequence[ImageRecord],
    val_records: Sequence[ImageRecord],
    test_records: Sequence[ImageRecord],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[TrainState, Path]:
    """Full reproducible run: seeds, builds, trains, and writes the run
    directory (config.json, split files, history.csv, best checkpoint).
    Returns the final state and the checkpoint base path."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(
            {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    write_split_files(run_dir, train_records, val_records, test_records)

    seed_everything(train_cfg.seed)
    model = build_model(model_cfg)
    state, best = train(model, train_records, val_records, train_cfg, root, log=log)
    _history_csv(run_dir / "history.csv", state.history)

    model.load_state_dict(best.state_dict)
    best_val = evaluate(
        model,
        val_records,
        magnification=train_cfg.magnification,
        root=root,
        threshold=train_cfg.threshold,
    )
    checkpoint_base = run_dir / "best"
    save_checkpoint(
        model,
        str(checkpoint_base),
        epoch=best.epoch,
        seed=train_cfg.seed,
        metrics={"val_accuracy": best.val_accuracy, "val_report": best_val.to_dict()},
    )
    return state, checkpoint_base
