"""Full classifier assembly: truncated backbone, stem, residual dual-shuffle
attention stages, and the sigmoid head, plus parameter counting and
checkpoint I/O.

Checkpoints are a pair of files: ``<name>.weights`` (binary state dict) and
``<name>.meta.json`` (keys: config, epoch, seed, metrics).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import torch
import torch.nn as nn

from .backbone import truncate_backbone
from .blocks import BlockConfig, ResidualDualShuffleAttentionBlock
from .errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    CorruptCheckpointError,
)

__all__ = [
    "ModelConfig",
    "HybridClassifier",
    "StandaloneClassifier",
    "build_model",
    "build_standalone_model",
    "count_parameters",
    "max_pools_outside_backbone",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_meta",
]


@dataclass(frozen=True)
class ModelConfig:
    """Every architectural free parameter of the classifier.

    ``block.channels`` and ``block.m`` are kept in lock-step with
    ``stem_channels`` and ``m`` so the block config never disagrees with the
    widths the assembled model actually uses.
    """

    input_size: int = 212
    backbone_name: str = "mobilenet_v1"
    backbone_weights: str = "random"
    truncate_at_stride: int = 16
    freeze_backbone_epochs: int = 5
    stem_channels: int = 256
    num_rdab_stages: int = 3
    m: int = 1
    block: BlockConfig = field(default_factory=BlockConfig)
    head_channels: int = 128

    def __post_init__(self):
        if self.input_size < 32:
            raise ConfigError(f"input_size must be >= 32, got {self.input_size}")
        if self.truncate_at_stride not in (8, 16, 32):
            raise ConfigError(
                f"truncate_at_stride must be 8, 16, or 32, got {self.truncate_at_stride}"
            )
        if self.num_rdab_stages < 1:
            raise ConfigError(
                f"num_rdab_stages must be >= 1, got {self.num_rdab_stages}"
            )
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.freeze_backbone_epochs < 0:
            raise ConfigError(
                f"freeze_backbone_epochs must be >= 0, got {self.freeze_backbone_epochs}"
            )
        if self.head_channels < 1:
            raise ConfigError(f"head_channels must be >= 1, got {self.head_channels}")
        block = dataclasses.replace(
            self.block, channels=self.stem_channels, m=self.m
        )
        object.__setattr__(self, "block", block)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        if "block" in d and isinstance(d["block"], dict):
            block_known = {f.name for f in dataclasses.fields(BlockConfig)}
            block_unknown = set(d["block"]) - block_known
            if block_unknown:
                raise ConfigError(f"unknown BlockConfig keys: {sorted(block_unknown)}")
            d["block"] = BlockConfig(**d["block"])
        return cls(**d)


def _stem(c_in: int, c_out: int, first_stride: int = 1) -> nn.Sequential:
    # Conv carries no bias (a batch norm follows the pool); the single
    # max-pool here is the only one outside the backbone.
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=first_stride, padding=1, bias=False),
        nn.MaxPool2d(2),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


def _head(c_in: int, c_mid: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_mid, 1, bias=True),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(c_mid, 1),
    )


class HybridClassifier(nn.Module):
    """Truncated pretrained-capable backbone feeding a stack of residual
    dual-shuffle attention blocks and a sigmoid head.

    ``forward`` returns per-sample probabilities in (0, 1);
    ``forward_logits`` exposes the pre-sigmoid values for a numerically
    stable training loss.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone, backbone_channels = truncate_backbone(
            config.backbone_name,
            config.truncate_at_stride,
            weights=config.backbone_weights,
        )
        self.backbone_channels = backbone_channels
        self.stem = _stem(backbone_channels, config.stem_channels)
        self.stages = nn.Sequential(
            *(
                ResidualDualShuffleAttentionBlock(config.block)
                for _ in range(config.num_rdab_stages)
            )
        )
        self.head = _head(config.stem_channels, config.head_channels)
        if config.freeze_backbone_epochs > 0:
            self.freeze_backbone()

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        x = self.backbone(x)
        x = self.stem(x)
        x = self.stages(x)
        return self.head(x).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(x))

    def freeze_backbone(self) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(False)

    def unfreeze_backbone(self) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(True)

    @property
    def backbone_frozen(self) -> bool:
        return all(not p.requires_grad for p in self.backbone.parameters())

    def backbone_parameters(self):
        return self.backbone.parameters()

    def finetune_parameters(self):
        """Parameters outside the backbone (stem, stages, head)."""
        for name, p in self.named_parameters():
            if not name.startswith("backbone."):
                yield p


class StandaloneClassifier(nn.Module):
    """From-scratch comparator without the pretrained backbone: the stem reads
    raw pixels and a densely connected ladder of residual dual-shuffle
    attention stages does all of the feature extraction.

    Stage i works at width i * stem_channels (the concatenation of the stem
    output and every previous stage's growth projection), so capacity grows
    quadratically with depth -- the cost profile the hybrid model avoids by
    delegating early feature extraction to the backbone.
    """

    def __init__(
        self,
        stem_channels: int = 256,
        num_stages: int = 6,
        head_channels: int = 128,
        groups: int = 4,
        attention_reduction: int = 4,
        m: int = 1,
    ):
        super().__init__()
        if num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {num_stages}")
        self.stem_channels = stem_channels
        self.num_stages = num_stages
        self.stem = _stem(3, stem_channels, first_stride=2)
        self.stages = nn.ModuleList()
        self.growth = nn.ModuleList()
        for i in range(1, num_stages + 1):
            width = i * stem_channels
            cfg = BlockConfig(
                channels=width,
                groups=groups,
                attention_reduction=attention_reduction,
                m=m,
            )
            self.stages.append(ResidualDualShuffleAttentionBlock(cfg))
            if i < num_stages:
                self.growth.append(nn.Conv2d(width, stem_channels, 1, bias=True))
        self.head = _head(num_stages * stem_channels, head_channels)

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        collected = [self.stem(x)]
        out = collected[0]
        for i, stage in enumerate(self.stages):
            out = stage(torch.cat(collected, dim=1))
            if i < len(self.growth):
                collected.append(self.growth[i](out))
        return self.head(out).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(x))


def build_model(cfg: ModelConfig) -> HybridClassifier:
    """Assemble the full hybrid classifier from its config."""
    return HybridClassifier(cfg)


def build_standalone_model(
    cfg: Optional[ModelConfig] = None, num_stages: int = 6
) -> StandaloneClassifier:
    """Assemble the backbone-free comparator used for efficiency comparisons."""
    cfg = cfg or ModelConfig()
    return StandaloneClassifier(
        stem_channels=cfg.stem_channels,
        num_stages=num_stages,
        head_channels=cfg.head_channels,
        groups=cfg.block.groups,
        attention_reduction=cfg.block.attention_reduction,
        m=cfg.m,
    )


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    """Exact parameter count; trainable_only skips frozen parameters."""
    return sum(
        p.numel()
        for p in model.parameters()
        if p.requires_grad or not trainable_only
    )


def max_pools_outside_backbone(model: nn.Module) -> int:
    """Count max-pooling layers outside the backbone submodule."""
    backbone_modules = set()
    if hasattr(model, "backbone"):
        backbone_modules = {id(m) for m in model.backbone.modules()}
    return sum(
        1
        for m in model.modules()
        if isinstance(m, nn.MaxPool2d) and id(m) not in backbone_modules
    )


def _checkpoint_paths(path: str) -> tuple[str, str]:
    base = path
    for suffix in (".weights", ".meta.json"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return base + ".weights", base + ".meta.json"


def save_checkpoint(
    model: HybridClassifier,
    path: str,
    epoch: int = 0,
    seed: int = 0,
    metrics: Optional[dict] = None,
) -> tuple[str, str]:
    """Write ``<path>.weights`` and ``<path>.meta.json``; returns both paths."""
    weights_path, meta_path = _checkpoint_paths(path)
    os.makedirs(os.path.dirname(os.path.abspath(weights_path)), exist_ok=True)
    torch.save(model.state_dict(), weights_path)
    meta = {
        "config": model.config.to_dict(),
        "epoch": epoch,
        "seed": seed,
        "metrics": metrics,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return weights_path, meta_path


def read_checkpoint_meta(path: str) -> dict:
    _, meta_path = _checkpoint_paths(path)
    if not os.path.isfile(meta_path):
        raise CheckpointError(f"checkpoint metadata {meta_path!r} does not exist")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(
            f"checkpoint metadata {meta_path!r} is unreadable: {exc}"
        ) from exc
    for key in ("config", "epoch", "seed"):
        if key not in meta:
            raise CorruptCheckpointError(
                f"checkpoint metadata {meta_path!r} is missing key {key!r}"
            )
    return meta


def load_checkpoint(
    path: str, expected_config: Optional[ModelConfig] = None
) -> HybridClassifier:
    """Rebuild the model recorded at ``path`` and load its weights.

    The architecture is rebuilt from the embedded config (never refetching
    pretrained weights; the stored state dict overwrites everything), then the
    state dict is loaded strictly, so any edit to the embedded config that
    changes the architecture surfaces as a config-mismatch error.
    """
    weights_path, meta_path = _checkpoint_paths(path)
    meta = read_checkpoint_meta(path)
    config = ModelConfig.from_dict(meta["config"])
    if expected_config is not None and expected_config != config:
        raise ConfigMismatchError(
            f"checkpoint config in {meta_path!r} does not match the expected config"
        )
    if not os.path.isfile(weights_path):
        raise CheckpointError(f"checkpoint weights {weights_path!r} do not exist")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CorruptCheckpointError(
            f"checkpoint weights {weights_path!r} are unreadable: {exc}"
        ) from exc
    build_config = dataclasses.replace(config, backbone_weights="random")
    model = HybridClassifier(build_config)
    try:
        model.load_state_dict(state)
    except (RuntimeError, KeyError) as exc:
        raise ConfigMismatchError(
            f"stored weights do not fit the architecture described by "
            f"{meta_path!r}: {exc}"
        ) from exc
    model.config = config
    model.checkpoint_meta = meta
    model.eval()
    return model
