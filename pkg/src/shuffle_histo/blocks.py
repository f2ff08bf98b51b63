"""Building blocks: channel shuffle, channel attention, and the dual-shuffle
attention units used throughout the classifier.

All blocks preserve the (N, C, H, W) shape of their input. Forward passes are
pure functions of (input, parameters), so concurrent evaluation on disjoint
inputs is safe; only training mutates parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError

__all__ = [
    "FeatureMapSpec",
    "BlockConfig",
    "channel_shuffle",
    "ChannelShuffle",
    "ChannelAttention",
    "DualShuffleAttentionBlock",
    "ResidualDualShuffleAttentionBlock",
]


@dataclass(frozen=True)
class FeatureMapSpec:
    """Shape contract for the (batch, channels, height, width) tensors passed
    between blocks."""

    batch: int
    channels: int
    height: int
    width: int

    def __post_init__(self):
        for field in ("batch", "channels", "height", "width"):
            if getattr(self, field) < 1:
                raise ConfigError(f"FeatureMapSpec.{field} must be >= 1, got {getattr(self, field)}")

    @classmethod
    def of(cls, x: torch.Tensor) -> "FeatureMapSpec":
        if x.dim() != 4:
            raise ValueError(f"expected a 4-d (N, C, H, W) tensor, got {x.dim()}-d")
        return cls(*x.shape)

    def check_divisible(self, groups: int) -> None:
        """Grouped operations require the channel count to split evenly."""
        if self.channels % groups != 0:
            raise ValueError(
                f"channels={self.channels} not divisible by groups={groups}"
            )


@dataclass(frozen=True)
class BlockConfig:
    """Free parameters of one dual-shuffle attention block.

    m is the number of inner dual-shuffle units per residual block.
    """

    channels: int = 256
    groups: int = 4
    attention_reduction: int = 4
    m: int = 1

    def __post_init__(self):
        if self.channels < 1 or self.groups < 1 or self.attention_reduction < 1:
            raise ConfigError(f"BlockConfig fields must be >= 1, got {self}")
        if self.m < 1:
            raise ConfigError(f"BlockConfig.m must be >= 1, got {self.m}")
        if self.channels % self.groups != 0:
            raise ConfigError(
                f"channels={self.channels} not divisible by groups={self.groups}"
            )
        if self.channels % self.attention_reduction != 0:
            raise ConfigError(
                f"channels={self.channels} not divisible by "
                f"attention_reduction={self.attention_reduction}"
            )


def channel_shuffle(x: torch.Tensor, groups: int) -> torch.Tensor:
    """Interleave channels across groups via reshape-transpose.

    Output channel c reads input channel (c % groups) * (C // groups) + (c // groups);
    spatial values are untouched. Composing with ``channel_shuffle(_, C // groups)``
    restores the original order.
    """
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ValueError(f"channels={c} not divisible by groups={groups}")
    if groups == 1:
        return x
    return (
        x.view(n, groups, c // groups, h, w)
        .transpose(1, 2)
        .contiguous()
        .view(n, c, h, w)
    )


class ChannelShuffle(nn.Module):
    """Module wrapper around :func:`channel_shuffle`."""

    def __init__(self, groups: int):
        super().__init__()
        self.groups = groups

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return channel_shuffle(x, self.groups)

    def extra_repr(self) -> str:
        return f"groups={self.groups}"


class ChannelAttention(nn.Module):
    """Squeeze-excite gate: global average pool, bottleneck transform, sigmoid.

    Each channel of the input is rescaled by a weight strictly inside (0, 1),
    so the output never exceeds the input in magnitude.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction != 0:
            raise ConfigError(
                f"channels={channels} not divisible by reduction={reduction}"
            )
        self.channels = channels
        hidden = channels // reduction
        self.fc_reduce = nn.Linear(channels, hidden)
        self.fc_excite = nn.Linear(hidden, channels)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, _, _ = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        squeezed = x.mean(dim=(2, 3))
        logits = self.fc_excite(self.act(self.fc_reduce(squeezed)))
        weights = torch.sigmoid(logits).view(n, c, 1, 1)
        return x * weights


class DualShuffleAttentionBlock(nn.Module):
    """Inner unit: two grouped 1x1 convolutions around a depthwise 3x3, with a
    channel shuffle after each grouped stage and a channel-attention gate at
    the end. Width-preserving.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        c, g = cfg.channels, cfg.groups
        self.cfg = cfg
        self.conv_in = nn.Conv2d(c, c, kernel_size=1, groups=g, bias=False)
        self.bn_in = nn.BatchNorm2d(c)
        self.shuffle1 = ChannelShuffle(g)
        self.conv_dw = nn.Conv2d(c, c, kernel_size=3, padding=1, groups=c, bias=False)
        self.bn_dw = nn.BatchNorm2d(c)
        self.conv_out = nn.Conv2d(c, c, kernel_size=1, groups=g, bias=False)
        self.bn_out = nn.BatchNorm2d(c)
        self.shuffle2 = ChannelShuffle(g)
        self.attention = ChannelAttention(c, cfg.attention_reduction)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ValueError(
                f"expected {self.cfg.channels} channels, got {x.shape[1]}"
            )
        out = self.act(self.bn_in(self.conv_in(x)))
        out = self.shuffle1(out)
        out = self.bn_dw(self.conv_dw(out))
        out = self.act(self.bn_out(self.conv_out(out)))
        out = self.shuffle2(out)
        return self.attention(out)


class ResidualDualShuffleAttentionBlock(nn.Module):
    """m dual-shuffle units with dense inner connectivity plus a skip path.

    Unit i receives the channel-concatenation of the block input and all
    previous unit outputs, projected back to the working width by a 1x1
    convolution (unit 1 takes the input directly, so at m=1 no projection
    exists). The skip path adds the block input to the last unit's output,
    which makes a zeroed branch an exact identity map.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.units = nn.ModuleList(
            DualShuffleAttentionBlock(cfg) for _ in range(cfg.m)
        )
        # Unit i >= 2 sees i*c concatenated channels; projections are plain
        # (ungrouped) 1x1 convolutions with bias since no norm follows them.
        self.projections = nn.ModuleList(
            nn.Conv2d((i + 1) * c, c, kernel_size=1, bias=True)
            for i in range(1, cfg.m)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ValueError(
                f"expected {self.cfg.channels} channels, got {x.shape[1]}"
            )
        collected = [x]
        out = x
        for i, unit in enumerate(self.units):
            if i == 0:
                unit_in = x
            else:
                unit_in = self.projections[i - 1](torch.cat(collected, dim=1))
            out = unit(unit_in)
            collected.append(out)
        return x + out
