"""Prediction head, training losses and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


class PredictionHead(nn.Module):
    """P_hat = softplus(MLP([Y0, h_to])), a 2-layer MLP."""

    def __init__(self, in_dim: int, width: int = 64):
        super().__init__()
        self.hidden = nn.Linear(in_dim, width)
        self.out = nn.Linear(width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.out(torch.relu(self.hidden(x)))).squeeze(-1)


def predict(y0: torch.Tensor, h_to: torch.Tensor, head: PredictionHead) -> torch.Tensor:
    return head(torch.cat([y0, h_to], dim=-1))


def _checked(p, p_hat) -> tuple[torch.Tensor, torch.Tensor]:
    p = torch.as_tensor(p, dtype=torch.float64).reshape(-1)
    p_hat = torch.as_tensor(p_hat).to(torch.float64).reshape(-1)
    if p.shape != p_hat.shape:
        raise ValueError(f"length mismatch: {p.numel()} vs {p_hat.numel()}")
    if p.numel() == 0:
        raise ValueError("empty input")
    if bool((p < 0).any()) or bool((p_hat.detach() < 0).any()):
        raise ValueError("popularity values must be non-negative")
    return p, p_hat


def _exact_mean(terms: torch.Tensor) -> float:
    # fsum is exactly rounded, hence independent of element order
    return math.fsum(terms.detach().tolist()) / terms.numel()


def _squared_log_errors(p, p_hat):
    return (torch.log2(p + 1.0) - torch.log2(p_hat + 1.0)) ** 2


def regression_loss(p, p_hat) -> torch.Tensor:
    """Mean squared log2 error, differentiable in ``p_hat``.

    The returned value is the exactly rounded mean, so it equals :func:`msle`
    bit for bit on the same inputs.
    """
    p, p_hat = _checked(p, p_hat)
    terms = _squared_log_errors(p, p_hat)
    mean = terms.mean()
    # value: the exact mean; gradient: that of terms.mean()
    return (mean - mean.detach()) + _exact_mean(terms)


def msle(p, p_hat) -> float:
    return float(regression_loss(p, p_hat))


def mape(p, p_hat) -> float:
    p, p_hat = _checked(p, p_hat)
    denom = torch.log2(p + 2.0)
    return _exact_mean(torch.abs(denom - torch.log2(p_hat + 2.0)) / denom)


@dataclass
class LossBreakdown:
    regression: torch.Tensor
    generative: torch.Tensor
    gamma: float
    total: torch.Tensor


def total_loss(l1, l2, gamma: float):
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return l1 + gamma * l2
