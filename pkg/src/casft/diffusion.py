"""Conditional denoising diffusion over segmented future popularity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass
class NoiseSchedule:
    betas: np.ndarray  # (K,), beta_1..beta_K

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        # alpha_bar[0] = 1 so that alpha_bar[k] matches step k directly
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(self.alphas)])

    @property
    def K(self) -> int:
        return len(self.betas)

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["betas"]))

    def sqrt_ab(self, k: torch.Tensor, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        ab = torch.as_tensor(self.alpha_bar, dtype=like.dtype, device=like.device)[k]
        return ab.sqrt(), (1.0 - ab).sqrt()


def make_schedule(K: int, kind: str = "linear", beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if K < 2:
        raise ValueError("need at least 2 diffusion steps")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, K)
    elif kind == "cosine":
        s = 0.008
        x = np.arange(K + 1) / K
        f = np.cos((x + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1 - f[1:] / f[:-1], beta_min, beta_max)
    else:
        raise ValueError(f"unknown schedule {kind!r}")
    return NoiseSchedule(betas)


def forward_diffuse(y0: torch.Tensor, k, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form marginal Y^k = sqrt(ab_k) Y^0 + sqrt(1 - ab_k) eps."""
    k = torch.as_tensor(k, dtype=torch.long)
    if torch.any(k < 1) or torch.any(k > schedule.K):
        raise ValueError("diffusion step out of range")
    a, b = schedule.sqrt_ab(k, y0)
    if a.dim() == 1:
        a, b = a[:, None], b[:, None]
    return a * y0 + b * eps


class Normalizer:
    """log2(y + 1), then per-coordinate standardization with training statistics."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, y: np.ndarray) -> "Normalizer":
        z = np.log2(np.asarray(y, dtype=np.float64) + 1.0)
        std = z.std(axis=0)
        return cls(z.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    def normalize(self, y):
        if isinstance(y, torch.Tensor):
            m, s = (torch.as_tensor(v, dtype=y.dtype) for v in (self.mean, self.std))
            return (torch.log2(y + 1.0) - m) / s
        return (np.log2(np.asarray(y, dtype=np.float64) + 1.0) - self.mean) / self.std

    def denormalize(self, z):
        if isinstance(z, torch.Tensor):
            m, s = (torch.as_tensor(v, dtype=z.dtype) for v in (self.mean, self.std))
            return torch.exp2(z * s + m) - 1.0
        return np.exp2(np.asarray(z) * self.std + self.mean) - 1.0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["mean"], d["std"])


def step_embedding(k: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    arg = k.to(dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


class Denoiser(nn.Module):
    """epsilon-prediction MLP; the condition is fed to every layer."""

    def __init__(self, l: int, c_dim: int, width: int = 128, n_layers: int = 3, step_dim: int = 32):
        super().__init__()
        self.step_dim = step_dim
        dims = [l + step_dim] + [width] * (n_layers - 1)
        outs = [width] * (n_layers - 1) + [l]
        self.layers = nn.ModuleList(nn.Linear(d + c_dim, o) for d, o in zip(dims, outs))

    def forward(self, y_k: torch.Tensor, k: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = torch.cat([y_k, step_embedding(k, self.step_dim, y_k.dtype)], dim=-1)
        for i, layer in enumerate(self.layers):
            x = layer(torch.cat([x, c], dim=-1))
            if i < len(self.layers) - 1:
                x = F.silu(x)
        return x


def train_step_loss(denoiser, y0: torch.Tensor, c: torch.Tensor, schedule: NoiseSchedule,
                    generator: torch.Generator | None = None, reduce: bool = True) -> torch.Tensor:
    """Simplified ELBO surrogate: ||eps - eps_hat(Y^k, k, c)||^2 with k ~ U{1..K}.

    ``y0`` is already normalized.  Returns the batch mean (or per-sample
    values with ``reduce=False``).
    """
    batch = y0.shape[0]
    k = torch.randint(1, schedule.K + 1, (batch,), generator=generator)
    eps = torch.randn(y0.shape, generator=generator, dtype=y0.dtype)
    y_k = forward_diffuse(y0, k, eps, schedule)
    per_sample = ((eps - denoiser(y_k, k, c)) ** 2).sum(-1)
    return per_sample.mean() if reduce else per_sample


def ddim_timesteps(K: int, S: int) -> np.ndarray:
    if S > K:
        raise ValueError(f"DDIM steps S={S} exceed training steps K={K}")
    if S < 1:
        raise ValueError("need at least one DDIM step")
    return np.unique(np.round(np.linspace(1, K, S)).astype(int))


def ddim_sample(denoiser, c: torch.Tensor, schedule: NoiseSchedule, num_steps: int, seed: int | None = 0,
                eta: float = 0.0, generator: torch.Generator | None = None, y_T: torch.Tensor | None = None,
                normalizer: Normalizer | None = None, l: int | None = None, trace: list | None = None) -> torch.Tensor:
    """DDIM reverse pass over an ``num_steps`` sub-schedule of 1..K.

    Noise comes from ``generator`` if given, else from a fresh generator
    seeded with ``seed``.  With ``eta=0`` the pass is deterministic given the
    starting noise.  ``trace`` (if a list) receives x0-predictions per step.
    Returns normalized samples unless ``normalizer`` is given.
    """
    steps = ddim_timesteps(schedule.K, num_steps)
    if generator is None:
        generator = torch.Generator().manual_seed(0 if seed is None else seed)
    batch = c.shape[0]
    if y_T is None:
        if l is None:
            l = denoiser.layers[-1].out_features
        y_T = torch.randn((batch, l), generator=generator, dtype=c.dtype)
    y = y_T
    ab = schedule.alpha_bar
    prev = np.concatenate([[0], steps[:-1]])
    for k, k_prev in zip(steps[::-1], prev[::-1]):
        a_k, a_p = float(ab[k]), float(ab[k_prev])
        eps = denoiser(y, torch.full((batch,), int(k), dtype=torch.long), c)
        x0 = (y - math.sqrt(1.0 - a_k) * eps) / math.sqrt(a_k)
        if trace is not None:
            trace.append(x0)
        sigma = eta * math.sqrt((1 - a_p) / (1 - a_k) * (1 - a_k / a_p)) if eta > 0 else 0.0
        y = math.sqrt(a_p) * x0 + math.sqrt(max(1.0 - a_p - sigma**2, 0.0)) * eps
        if sigma > 0:
            y = y + sigma * torch.randn(y.shape, generator=generator, dtype=y.dtype)
    return normalizer.denormalize(y) if normalizer is not None else y
