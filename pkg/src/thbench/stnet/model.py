"""Spatio-temporal classification backbone.

Three stages: a stack of 3D convolutions capturing short-range motion, an
18-layer residual 2D network refining per-frame spatial features, and a
temporal fusion step (1D convolution over time + global average pooling)
producing one clip-level feature vector that feeds an MLP classifier head.

The same backbone, with separate weights per task, serves word-level
lipreading, emotion classification, and blink detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


def _norm2d(channels: int) -> nn.Module:
    # group norm: batch-size independent, so tiny-batch training and
    # single-clip inference see identical statistics
    return nn.GroupNorm(math.gcd(channels, 8), channels)


def _norm3d(channels: int) -> nn.Module:
    return nn.GroupNorm(math.gcd(channels, 8), channels)


@dataclass
class STNetConfig:
    frames: int = 16
    height: int = 96
    width: int = 96
    channels: int = 1
    # 3D stage: output channels per layer; temporal kernel 5 then 3
    st_channels: tuple[int, ...] = (32, 64)
    st_temporal_kernels: tuple[int, ...] = (5, 3)
    # residual refine stage: BasicBlock widths scale off this
    refine_base_width: int = 64
    fusion_kernel: int = 3
    feature_dim: int = 256  # clip-level feature width
    mlp_hidden: tuple[int, ...] = (128,)
    num_classes: int = 300

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("need at least 2 frames for temporal modeling")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.st_channels) != len(self.st_temporal_kernels):
            raise ValueError("st_channels and st_temporal_kernels must align")
        self.st_channels = tuple(self.st_channels)
        self.st_temporal_kernels = tuple(self.st_temporal_kernels)
        self.mlp_hidden = tuple(self.mlp_hidden)


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = _norm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = _norm2d(c_out)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                _norm2d(c_out),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ResidualRefine(nn.Module):
    """18-layer residual 2D refiner: stem conv + 4 stages x 2 blocks."""

    def __init__(self, c_in: int, base_width: int):
        super().__init__()
        w = base_width
        self.stem = nn.Sequential(
            nn.Conv2d(c_in, w, 3, padding=1, bias=False),
            _norm2d(w),
            nn.ReLU(inplace=True),
        )
        self.stages = nn.Sequential(
            BasicBlock(w, w), BasicBlock(w, w),
            BasicBlock(w, 2 * w, stride=2), BasicBlock(2 * w, 2 * w),
            BasicBlock(2 * w, 4 * w, stride=2), BasicBlock(4 * w, 4 * w),
            BasicBlock(4 * w, 8 * w, stride=2), BasicBlock(8 * w, 8 * w),
        )
        self.out_channels = 8 * w

    def forward(self, x):
        return self.stages(self.stem(x))


class STNet(nn.Module):
    def __init__(self, config: STNetConfig):
        super().__init__()
        self.config = config

        layers = []
        c_prev = config.channels
        for c_out, kt in zip(config.st_channels, config.st_temporal_kernels):
            stride = (1, 2, 2) if not layers else (1, 1, 1)
            layers += [
                nn.Conv3d(c_prev, c_out, kernel_size=(kt, 3, 3),
                          stride=stride, padding=(kt // 2, 1, 1), bias=False),
                _norm3d(c_out),
                nn.ReLU(inplace=True),
            ]
            c_prev = c_out
        self.st_stage = nn.Sequential(*layers)

        self.refine = ResidualRefine(c_prev, config.refine_base_width)
        self.frame_pool = nn.AdaptiveAvgPool2d(1)

        self.fusion = nn.Conv1d(self.refine.out_channels, config.feature_dim,
                                kernel_size=config.fusion_kernel,
                                padding=config.fusion_kernel // 2)
        self.temporal_pool = nn.AdaptiveAvgPool1d(1)

        mlp = []
        d_prev = config.feature_dim
        for hidden in config.mlp_hidden:
            mlp += [nn.Linear(d_prev, hidden), nn.ReLU(inplace=True)]
            d_prev = hidden
        mlp.append(nn.Linear(d_prev, config.num_classes))
        self.head = nn.Sequential(*mlp)

    def forward(self, clips: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, C, T, H, W) float input -> (features (B, feature_dim),
        logits (B, num_classes))."""
        if clips.ndim != 5:
            raise ValueError(f"expected 5D (B, C, T, H, W) input, got {tuple(clips.shape)}")
        b, c, t, h, w = clips.shape
        cfg = self.config
        if (c, t, h, w) != (cfg.channels, cfg.frames, cfg.height, cfg.width):
            raise ValueError(
                f"clip shape {(c, t, h, w)} does not match configured "
                f"{(cfg.channels, cfg.frames, cfg.height, cfg.width)}")

        x = self.st_stage(clips)                       # (B, C1, T, H', W')
        b, c1, t, hp, wp = x.shape
        frames = x.permute(0, 2, 1, 3, 4).reshape(b * t, c1, hp, wp)
        refined = self.refine(frames)                  # (B*T, C', h, w)
        per_frame = self.frame_pool(refined).flatten(1)  # (B*T, C')
        seq = per_frame.reshape(b, t, -1).permute(0, 2, 1)  # (B, C', T)
        fused = self.fusion(seq)                       # (B, feature_dim, T)
        features = self.temporal_pool(fused).squeeze(-1)  # (B, feature_dim)
        logits = self.head(features)
        return features, logits


def clips_to_tensor(clips: np.ndarray) -> torch.Tensor:
    """(N, T, H, W[, C]) numpy clips in [0, 1] -> (N, C, T, H, W) float32."""
    arr = np.asarray(clips, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[..., None]
    if arr.ndim != 5:
        raise ValueError(f"expected (N, T, H, W[, C]) clips, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 4, 1, 2, 3)))
