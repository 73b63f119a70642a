"""Additive angular-margin classification loss.

Feature rows and class-direction columns are L2-normalized (features to
length ``scale``, columns to unit length), giving per-class cosines
scale*cos(theta_j). The target class angle is penalized by an additive
margin before the softmax cross-entropy:

    loss = -mean_i log( e^{s*cos(theta_{y_i}+m)} /
                        (e^{s*cos(theta_{y_i}+m)} + sum_{j!=y_i} e^{s*cos(theta_j)}) )

cos(theta+m) is expanded as cos*cos(m) - sin*sin(m), so margin 0 reduces to
plain cross-entropy over the scaled cosines with no acos round-trip. The
target angle is clamped at pi: when theta + m would exceed it, the target
cosine saturates at -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import DegenerateFeatureError


@dataclass
class ArcLossParams:
    """Class-direction matrix (feature_dim x num_classes) with the scale and
    margin hyperparameters. Columns are normalized on use, so the stored
    matrix may be unnormalized."""

    weight: np.ndarray
    scale: float = 64.0
    margin: float = 0.5

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("weight must be (feature_dim, num_classes)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ValueError("margin must lie in [0, pi/2)")
        col_norms = np.linalg.norm(self.weight, axis=0)
        if np.any(col_norms == 0):
            raise ValueError("class-direction columns must be nonzero")


def arc_margin_loss(
    features: torch.Tensor,
    labels: torch.Tensor,
    weight: torch.Tensor,
    scale: float = 64.0,
    margin: float = 0.5,
    grad_safe_eps: float = 0.0,
) -> torch.Tensor:
    """Margin-penalized softmax loss over a feature batch.

    ``features`` (B, C), ``labels`` (B,) int64 in [0, V), ``weight`` (C, V).
    ``grad_safe_eps`` > 0 pulls cosines off the exact +-1 poles where the
    margin term's gradient is unbounded; the value path keeps it at 0 so
    closed-form checks are exact.
    """
    if features.ndim != 2 or weight.ndim != 2:
        raise ValueError("features must be (B, C) and weight (C, V)")
    if features.shape[1] != weight.shape[0]:
        raise ValueError(f"feature dim {features.shape[1]} vs weight rows {weight.shape[0]}")
    if labels.min() < 0 or labels.max() >= weight.shape[1]:
        raise ValueError("labels out of range")

    feat_norms = features.norm(dim=1)
    if bool((feat_norms == 0).any()):
        raise DegenerateFeatureError("zero-norm feature row")

    f = features / feat_norms.unsqueeze(1)
    w = weight / weight.norm(dim=0, keepdim=True)
    cos = (f @ w).clamp(-1.0, 1.0)

    idx = labels.long().unsqueeze(1)
    cos_y = cos.gather(1, idx).squeeze(1)
    if grad_safe_eps > 0.0:
        cos_y = cos_y.clamp(-1.0 + grad_safe_eps, 1.0 - grad_safe_eps)
    sin_y = torch.sqrt(torch.clamp(1.0 - cos_y * cos_y, min=0.0))
    cos_margin = cos_y * math.cos(margin) - sin_y * math.sin(margin)
    # clamp theta + m at pi: beyond it the target cosine saturates at -1
    over = cos_y < math.cos(math.pi - margin)
    cos_margin = torch.where(over, torch.full_like(cos_margin, -1.0), cos_margin)

    logits = scale * cos
    logits = logits.scatter(1, idx, (scale * cos_margin).unsqueeze(1))
    return nn.functional.cross_entropy(logits, labels.long())


class ArcMarginHead(nn.Module):
    """Trainable margin head: owns the class-direction matrix and applies
    arc_margin_loss with a small epsilon for gradient safety."""

    def __init__(self, feature_dim: int, num_classes: int, scale: float = 64.0, margin: float = 0.5):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(feature_dim, num_classes))
        nn.init.xavier_uniform_(self.weight)
        self.scale = scale
        self.margin = margin

    def forward(self, features: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return arc_margin_loss(features, labels, self.weight,
                               scale=self.scale, margin=self.margin,
                               grad_safe_eps=1e-6)

    def params(self) -> ArcLossParams:
        return ArcLossParams(weight=self.weight.detach().numpy().copy(),
                             scale=self.scale, margin=self.margin)
