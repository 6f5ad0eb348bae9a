"""Weakly-supervised multi-scale symbol counting head.

Two parallel convolution branches (3x3 and 5x5 kernels) turn the encoder
feature map into per-class counting maps in (0, 1); each map's spatial
sum is that branch's predicted count vector and the fused prediction is
the average of the branch vectors. Supervision comes only from
sequence-derived totals, so the maps act as pseudo density maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class BranchConfig:
    kernel_size: int = 3
    inter_channels: int = 512
    reduction: int = 16

    def validate(self) -> "BranchConfig":
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.inter_channels <= 0:
            raise ValueError("intermediate channel count must be positive")
        if self.reduction < 1:
            raise ValueError("reduction ratio must be >= 1")
        return self


def masked_global_average(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Spatial mean over valid cells only; (B, C, H, W) -> (B, C)."""
    if mask is None:
        return x.mean(dim=(2, 3))
    denom = mask.sum(dim=(2, 3)).clamp(min=1.0)
    return (x * mask).sum(dim=(2, 3)) / denom


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate: per-channel scalar in (0, 1) scaling the input."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def gate(self, x, mask=None):
        q = F.relu(self.fc1(masked_global_average(x, mask)))
        return torch.sigmoid(self.fc2(q))

    def forward(self, x, mask=None):
        return x * self.gate(x, mask)[:, :, None, None]


class CountingBranch(nn.Module):
    """k x k conv -> channel attention -> 1x1 conv to C classes -> sigmoid."""

    def __init__(self, in_channels: int, num_classes: int, config: BranchConfig | None = None):
        super().__init__()
        self.config = (config or BranchConfig()).validate()
        k = self.config.kernel_size
        self.conv = nn.Conv2d(in_channels, self.config.inter_channels, k, padding=k // 2)
        self.attention = ChannelAttention(self.config.inter_channels, self.config.reduction)
        self.head = nn.Conv2d(self.config.inter_channels, num_classes, 1)

    def forward(self, features, mask=None):
        x = self.conv(features)
        if mask is not None:
            x = x * mask
        x = self.attention(x, mask)
        counting_map = torch.sigmoid(self.head(x))
        if mask is not None:
            counting_map = counting_map * mask
        return counting_map


def sum_pool(counting_map: torch.Tensor) -> torch.Tensor:
    """Spatial sum of each per-class map: (B, C, H, W) -> (B, C)."""
    return counting_map.sum(dim=(2, 3))


def fuse_counts(vectors) -> torch.Tensor:
    """Average of the branch count vectors (fixed branch order)."""
    return torch.stack(list(vectors), dim=0).mean(dim=0)


class MultiScaleCounting(nn.Module):
    """Parallel 3x3 / 5x5 counting branches fused by averaging."""

    def __init__(self, in_channels: int, num_classes: int,
                 kernel_sizes=(3, 5), inter_channels: int = 512, reduction: int = 16):
        super().__init__()
        self.branches = nn.ModuleList(
            CountingBranch(in_channels, num_classes,
                           BranchConfig(kernel_size=k, inter_channels=inter_channels,
                                        reduction=reduction))
            for k in kernel_sizes
        )
        self.kernel_sizes = tuple(kernel_sizes)

    def forward(self, features, mask=None):
        maps = [branch(features, mask) for branch in self.branches]
        vectors = [sum_pool(m) for m in maps]
        return fuse_counts(vectors), maps
