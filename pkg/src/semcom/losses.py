"""Semantic contrastive coding: projection head and training losses.

The projection head maps backbone feature maps onto a unit hypersphere
(dimension 32 by default) where cosine similarity measures semantic
distance. The contrastive loss pulls each anchor (projected original)
toward its positive (projected channel-corrupted reconstruction) and away
from the other originals in the batch, which act as negatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigError, DegenerateInputError, ShapeError

_NORM_EPS = 1e-12
_LOG_EPS = 1e-12


@dataclass
class LossConfig:
    """Temperature and loss-combination switches for both training stages.

    alpha1_policy "ratio_tied" resolves alpha1 to the codec's achieved
    bandwidth compression ratio k/n; "fixed" uses the alpha1 value as given.
    """

    tau: float = 0.1
    alpha1: float = 0.5
    alpha1_policy: str = "ratio_tied"
    alpha2: float = 0.5
    include_positive_in_denominator: bool = False
    projection_hidden_dim: int | None = None
    projection_out_dim: int = 32

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.alpha1_policy not in ("fixed", "ratio_tied"):
            raise ConfigError(f"unknown alpha1_policy {self.alpha1_policy!r}")

    def resolve_alpha1(self, achieved_ratio: Fraction | float) -> float:
        if self.alpha1_policy == "fixed":
            return float(self.alpha1)
        return min(1.0, max(0.0, float(achieved_ratio)))


class ProjectionHead(nn.Module):
    """Two-layer MLP onto the unit hypersphere.

    Feature maps are global-average-pooled over space, passed through
    Linear -> ReLU -> Linear, and L2-normalized (epsilon-guarded, so an
    exactly zero projection cannot divide by zero).
    """

    def __init__(self, in_channels: int, hidden_dim: int | None = None, out_dim: int = 32):
        super().__init__()
        hidden = hidden_dim if hidden_dim is not None else in_channels
        self.in_channels = in_channels
        self.out_dim = out_dim
        self.fc1 = nn.Linear(in_channels, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() == 4:
            pooled = features.mean(dim=(2, 3))
        elif features.dim() == 2:
            pooled = features
        else:
            raise ShapeError(f"expected (B, C, H, W) or (B, C) features, got {tuple(features.shape)}")
        if pooled.shape[1] != self.in_channels:
            raise ConfigError(
                f"projection head built for {self.in_channels} feature channels, got {pooled.shape[1]}"
            )
        z = self.fc2(F.relu(self.fc1(pooled)))
        return z / torch.linalg.vector_norm(z, dim=1, keepdim=True).clamp_min(_NORM_EPS)


def semantic_contrastive_loss(
    anchors: torch.Tensor,
    positives: torch.Tensor,
    tau: float,
    include_positive_in_denominator: bool = False,
) -> torch.Tensor:
    """InfoNCE over the semantic hypersphere.

    Per anchor i: -log[ exp(a_i . p_i / tau) / sum_{m != i} exp(a_i . a_m / tau) ],
    averaged over the batch. The negatives for anchor i are the anchors of
    the other batch members (projections of the other originals); the
    positive pair is absent from the denominator unless the switch says
    otherwise.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if anchors.shape != positives.shape or anchors.dim() != 2:
        raise ShapeError(
            f"anchors/positives must be matching (B, d) tensors, got "
            f"{tuple(anchors.shape)} and {tuple(positives.shape)}"
        )
    b = anchors.shape[0]
    if b < 2:
        raise DegenerateInputError("contrastive loss needs a batch of at least 2 (no negatives exist)")

    pos = (anchors * positives).sum(dim=1) / tau
    sim = anchors @ anchors.T / tau
    sim = sim.masked_fill(torch.eye(b, dtype=torch.bool, device=anchors.device), float("-inf"))
    if include_positive_in_denominator:
        sim = torch.cat([sim, pos.unsqueeze(1)], dim=1)
    return (torch.logsumexp(sim, dim=1) - pos).mean()


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of (1/n) * ||x - x_hat||^2 (plain per-element MSE)."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).square().mean()


def task_loss(y_true: torch.Tensor, y_pred: torch.Tensor) -> torch.Tensor:
    """Cross-entropy with the 1/N_cls scale, from one-hot targets.

    Mean over the batch of -(1/N_cls) * sum_i y_i * log(y_hat_i); the log is
    epsilon-guarded. y_pred must already be a probability vector.
    """
    if y_true.shape != y_pred.shape or y_true.dim() != 2:
        raise ShapeError(
            f"targets/predictions must be matching (B, N_cls) tensors, got "
            f"{tuple(y_true.shape)} and {tuple(y_pred.shape)}"
        )
    n_cls = y_true.shape[1]
    if n_cls < 2:
        raise ConfigError(f"need at least 2 classes, got {n_cls}")
    per_sample = -(y_true * torch.log(y_pred + _LOG_EPS)).sum(dim=1) / n_cls
    return per_sample.mean()


def stage1_loss(l_rec, l_sem, cfg: LossConfig, achieved_ratio: Fraction | float):
    """L1 = alpha1 * L_rec + (1 - alpha1) * L_sem, alpha1 resolved per policy."""
    a1 = cfg.resolve_alpha1(achieved_ratio)
    return a1 * l_rec + (1.0 - a1) * l_sem


def stage2_loss(l_rec, l_task, cfg: LossConfig):
    """L2 = alpha2 * L_rec + (1 - alpha2) * L_Task."""
    return cfg.alpha2 * l_rec + (1.0 - cfg.alpha2) * l_task
