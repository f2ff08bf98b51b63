"""Pretrained-capable feature extractors and stride-based truncation.

The default family member is a classic depthwise-separable MobileNet (v1
style) implemented here; v2/v3 variants are provided through torchvision.
Backbones are truncated at a requested output stride by walking their
feature sequence with a probe tensor.
"""

from __future__ import annotations

import os
from typing import Callable

import torch
import torch.nn as nn

from .errors import ConfigError, PretrainedWeightsError

__all__ = ["MobileNetV1", "truncate_backbone", "available_backbones"]

VALID_STRIDES = (8, 16, 32)


def _conv_bn_relu(c_in: int, c_out: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class DepthwiseSeparableBlock(nn.Module):
    """Depthwise 3x3 followed by pointwise 1x1, each with BN + ReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.depthwise = nn.Sequential(
            nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1, groups=c_in, bias=False),
            nn.BatchNorm2d(c_in),
            nn.ReLU(inplace=True),
        )
        self.pointwise = nn.Sequential(
            nn.Conv2d(c_in, c_out, 1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pointwise(self.depthwise(x))


class MobileNetV1(nn.Module):
    """Depthwise-separable convolution stack with a width multiplier.

    Layer plan (width multiplier 1.0): 32 stem, then pairs
    64, 128/2, 128, 256/2, 256, 512/2, 512 x5, 1024/2, 1024.
    """

    PLAN = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ]

    def __init__(self, width_mult: float = 1.0, num_classes: int = 1000):
        super().__init__()
        scale = lambda c: max(8, int(round(c * width_mult)))
        layers: list[nn.Module] = [_conv_bn_relu(3, scale(32), stride=2)]
        c_in = scale(32)
        for c_out, stride in self.PLAN:
            layers.append(DepthwiseSeparableBlock(c_in, scale(c_out), stride))
            c_in = scale(c_out)
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(c_in, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = self.pool(x).flatten(1)
        return self.classifier(x)


def _build_mobilenet_v1(width_mult: float, weights: str) -> nn.Module:
    model = MobileNetV1(width_mult=width_mult)
    if weights == "random":
        return model
    if weights == "imagenet":
        raise PretrainedWeightsError(
            "no bundled ImageNet weights exist for the mobilenet_v1 family; "
            "pass a state-dict file path as backbone_weights, choose a "
            "torchvision backbone (mobilenet_v2, mobilenet_v3_small, "
            "mobilenet_v3_large), or set backbone_weights='random'"
        )
    _load_state_dict_file(model, weights)
    return model


def _build_torchvision(name: str, weights: str) -> nn.Module:
    import torchvision.models as tvm

    builders = {
        "mobilenet_v2": (tvm.mobilenet_v2, "MobileNet_V2_Weights"),
        "mobilenet_v3_small": (tvm.mobilenet_v3_small, "MobileNet_V3_Small_Weights"),
        "mobilenet_v3_large": (tvm.mobilenet_v3_large, "MobileNet_V3_Large_Weights"),
    }
    builder, enum_name = builders[name]
    if weights == "random":
        return builder(weights=None)
    if weights == "imagenet":
        enum = getattr(tvm, enum_name).IMAGENET1K_V1
        try:
            return builder(weights=enum)
        except Exception as exc:
            hub_dir = torch.hub.get_dir()
            raise PretrainedWeightsError(
                f"ImageNet weights for {name} could not be obtained ({exc}); "
                f"download {enum.url} into {hub_dir}/checkpoints/ on a "
                "connected machine, pass a state-dict file path as "
                "backbone_weights, or set backbone_weights='random'"
            ) from exc
    model = builder(weights=None)
    _load_state_dict_file(model, weights)
    return model


def _load_state_dict_file(model: nn.Module, path: str) -> None:
    if not os.path.isfile(path):
        raise PretrainedWeightsError(
            f"backbone weights file {path!r} does not exist; expected "
            "'imagenet', 'random', or a readable state-dict path"
        )
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except PretrainedWeightsError:
        raise
    except Exception as exc:
        raise PretrainedWeightsError(
            f"backbone weights file {path!r} could not be loaded: {exc}"
        ) from exc


_REGISTRY: dict[str, Callable[[str], nn.Module]] = {
    "mobilenet_v1": lambda w: _build_mobilenet_v1(1.0, w),
    "mobilenet_v1_050": lambda w: _build_mobilenet_v1(0.5, w),
    "mobilenet_v1_025": lambda w: _build_mobilenet_v1(0.25, w),
    "mobilenet_v2": lambda w: _build_torchvision("mobilenet_v2", w),
    "mobilenet_v3_small": lambda w: _build_torchvision("mobilenet_v3_small", w),
    "mobilenet_v3_large": lambda w: _build_torchvision("mobilenet_v3_large", w),
}


def available_backbones() -> list[str]:
    return sorted(_REGISTRY)


def truncate_backbone(
    backbone_name: str,
    truncate_at_stride: int,
    weights: str = "random",
) -> tuple[nn.Module, int]:
    """Return the backbone prefix whose output stride equals the request,
    together with its output channel count.

    The prefix is maximal: stride-preserving layers after the target stride
    is reached are kept up to (excluding) the next downsampling layer.
    ``weights`` is 'imagenet', 'random', or a state-dict file path; a
    pretrained request that cannot be satisfied raises
    :class:`PretrainedWeightsError` rather than silently using random
    initialization.
    """
    if truncate_at_stride not in VALID_STRIDES:
        raise ConfigError(
            f"truncate_at_stride must be one of {VALID_STRIDES}, "
            f"got {truncate_at_stride}"
        )
    if backbone_name not in _REGISTRY:
        raise ConfigError(
            f"unknown backbone {backbone_name!r}; available: {available_backbones()}"
        )
    full = _REGISTRY[backbone_name](weights)
    children = list(full.features.children())

    probe_size = 64
    probe = torch.zeros(1, 3, probe_size, probe_size)
    prefix: list[nn.Module] = []
    out_channels = 3
    stride = 1
    was_training = full.training
    full.eval()
    with torch.no_grad():
        for child in children:
            probe = child(probe)
            new_stride = probe_size // probe.shape[-1]
            if new_stride > truncate_at_stride:
                break
            prefix.append(child)
            stride = new_stride
            out_channels = probe.shape[1]
    full.train(was_training)

    if stride != truncate_at_stride:
        raise ConfigError(
            f"backbone {backbone_name!r} never reaches output stride "
            f"{truncate_at_stride} (deepest usable stride: {stride})"
        )
    return nn.Sequential(*prefix), out_channels
