"""Residual regression networks for steering prediction.

Two presets: ``resnet32`` follows the classic 6n+2 plain-shortcut CIFAR
configuration (n=5, widths 16/32/64) with a single linear output, about
464k parameters; ``resnet8-desk`` is a CPU-trainable cut-down with a
stride-4 stem and one block per stage.  Shortcuts are parameter-free
(subsample and zero-pad channels).  Weights are drawn from a zero-mean
Gaussian scaled by the fan-in; all biases start at zero.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

PRESETS = ("resnet32", "resnet8-desk")


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.stride = stride
        self.cin = cin
        self.cout = cout

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x
        if self.stride != 1 or self.cin != self.cout:
            shortcut = x[:, :, :: self.stride, :: self.stride]
            pad = self.cout - self.cin
            shortcut = F.pad(shortcut, (0, 0, 0, 0, pad // 2, pad - pad // 2))
        return F.relu(out + shortcut)


class SteeringResNet(nn.Module):
    def __init__(self, in_channels: int, blocks_per_stage: int, stem_stride: int = 1):
        super().__init__()
        if in_channels not in (1, 2):
            raise ValueError(f"unsupported input channel count {in_channels}")
        widths = (16, 32, 64)
        kernel = 5 if stem_stride > 1 else 3
        self.stem = nn.Conv2d(
            in_channels, widths[0], kernel, stride=stem_stride, padding=kernel // 2, bias=False
        )
        self.stem_bn = nn.BatchNorm2d(widths[0])
        stages = []
        cin = widths[0]
        for stage_idx, width in enumerate(widths):
            for block_idx in range(blocks_per_stage):
                stride = 2 if stage_idx > 0 and block_idx == 0 else 1
                stages.append(BasicBlock(cin, width, stride))
                cin = width
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(widths[-1], 1)

    def forward(self, x):
        x = F.relu(self.stem_bn(self.stem(x)))
        x = self.stages(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.head(x)


def _init_weights(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            nn.init.normal_(module.weight, 0.0, math.sqrt(2.0 / fan_in))
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, 0.0, math.sqrt(2.0 / module.in_features))
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


def channels_for_mode(mode: str) -> int:
    return 2 if mode == "fused" else 1


def build_model(preset: str, input_mode: str, seed: int = 0) -> SteeringResNet:
    """Construct and deterministically initialize a preset network."""
    if preset not in PRESETS:
        raise ValueError(f"preset must be one of {PRESETS}, got {preset!r}")
    in_channels = channels_for_mode(input_mode)
    torch.manual_seed(seed)
    if preset == "resnet32":
        model = SteeringResNet(in_channels, blocks_per_stage=5, stem_stride=1)
    else:
        model = SteeringResNet(in_channels, blocks_per_stage=1, stem_stride=4)
    _init_weights(model)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
