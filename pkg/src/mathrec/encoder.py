"""Dense convolutional backbone with padding-aware masking.

The stem downsamples by 4 and each of the two transitions by 2, for an
exact overall ratio of 16 between input pixels and feature cells. A
validity mask (1 over real content, 0 over batch padding) is carried
through every resolution; features are re-masked around every
convolution. Plain zero padding is not enough: BatchNorm's shift gives
padded zeros a nonzero value that the next convolution would smear into
valid cells, which would make model outputs depend on how much padding a
batch happens to contain.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    stem_channels: int = 48
    num_blocks: int = 3
    layers_per_block: int = 16
    growth: int = 24
    bottleneck: int = 4
    compression: float = 0.5
    out_channels: int = 684

    @classmethod
    def full_scale(cls) -> "EncoderConfig":
        # natural output: ((48 + 384)/2 + 384)/2 + 384 = 684, no projection
        return cls()

    @classmethod
    def desk(cls) -> "EncoderConfig":
        return cls(stem_channels=32, layers_per_block=4, growth=12, out_channels=128)

    def validate(self) -> "EncoderConfig":
        if self.num_blocks != 3:
            raise ValueError("downsampling contract (ratio 16) needs exactly 3 blocks")
        if self.stem_channels <= 0 or self.growth <= 0 or self.layers_per_block <= 0:
            raise ValueError("channel/depth settings must be positive")
        if not 0 < self.compression <= 1:
            raise ValueError("compression must be in (0, 1]")
        return self

    def natural_channels(self) -> int:
        c = self.stem_channels
        for b in range(self.num_blocks):
            c += self.layers_per_block * self.growth
            if b < self.num_blocks - 1:
                c = int(c * self.compression)
        return c


@dataclass
class FeatureMap:
    values: torch.Tensor  # (B, C, H, W), zero at padded cells
    mask: torch.Tensor    # (B, 1, H, W) in {0, 1}


class _DenseLayer(nn.Module):
    def __init__(self, in_channels, growth, bottleneck):
        super().__init__()
        inter = bottleneck * growth
        self.bn1 = nn.BatchNorm2d(in_channels)
        self.conv1 = nn.Conv2d(in_channels, inter, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(inter)
        self.conv2 = nn.Conv2d(inter, growth, 3, padding=1, bias=False)

    def forward(self, x, mask):
        y = self.conv1(F.relu(self.bn1(x)) * mask)
        y = self.conv2(F.relu(self.bn2(y)) * mask)
        return torch.cat([x, y * mask], dim=1)


class _Transition(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.bn = nn.BatchNorm2d(in_channels)
        self.conv = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.pool = nn.AvgPool2d(2, stride=2, ceil_mode=True)

    def forward(self, x, mask):
        x = self.conv(F.relu(self.bn(x)) * mask)
        return self.pool(x)


class DenseEncoder(nn.Module):
    """Grayscale image batch -> 16x-downsampled feature map."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = (config or EncoderConfig()).validate()
        cfg = self.config
        self.stem = nn.Conv2d(1, cfg.stem_channels, 7, stride=2, padding=3, bias=False)
        self.stem_bn = nn.BatchNorm2d(cfg.stem_channels)
        self.stem_pool = nn.MaxPool2d(2, stride=2, ceil_mode=True)

        channels = cfg.stem_channels
        self.blocks = nn.ModuleList()
        self.transitions = nn.ModuleList()
        for b in range(cfg.num_blocks):
            block = nn.ModuleList()
            for _ in range(cfg.layers_per_block):
                block.append(_DenseLayer(channels, cfg.growth, cfg.bottleneck))
                channels += cfg.growth
            self.blocks.append(block)
            if b < cfg.num_blocks - 1:
                out = int(channels * cfg.compression)
                self.transitions.append(_Transition(channels, out))
                channels = out

        self.final_bn = nn.BatchNorm2d(channels)
        if channels != cfg.out_channels:
            self.project = nn.Conv2d(channels, cfg.out_channels, 1, bias=False)
        else:
            self.project = None
        self.out_channels = cfg.out_channels

    def forward(self, images: torch.Tensor, mask: torch.Tensor | None = None) -> FeatureMap:
        b, c, h, w = images.shape
        if c != 1:
            raise ValueError(f"expected single-channel input, got {c} channels")
        if h % 16 or w % 16:
            raise ValueError(f"input extent must be a multiple of 16, got {h}x{w}")
        if mask is None:
            mask = torch.ones(b, 1, h, w, device=images.device, dtype=images.dtype)

        m = F.max_pool2d(mask, 2, stride=2, ceil_mode=True)  # stem conv stride 2
        x = self.stem(images * mask)
        x = F.relu(self.stem_bn(x)) * m
        x = self.stem_pool(x)
        m = F.max_pool2d(m, 2, stride=2, ceil_mode=True)

        for b_idx, block in enumerate(self.blocks):
            for layer in block:
                x = layer(x, m)
            if b_idx < len(self.transitions):
                x = self.transitions[b_idx](x, m)
                m = F.max_pool2d(m, 2, stride=2, ceil_mode=True)

        x = F.relu(self.final_bn(x)) * m
        if self.project is not None:
            x = self.project(x) * m
        return FeatureMap(values=x, mask=m)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
