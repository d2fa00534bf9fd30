"""The end-to-end popularity model and its ablation variants.

Variants:
    full          attention features -> jump ODE (h_to, cues) -> DDIM trend -> head([Y0, h_to])
    no_ft         head(s_N): no future-trend branch at all
    no_ode        diffusion conditioned on s_N; head([Y0, s_N])
    no_diffusion  head(c) with c = [h_to, cues]
    fm            an MLP predicts the segments from s_N; head([Y_hat, s_N])
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .attention import DualViewEncoder
from .config import ExperimentConfig
from .dataset import noise_seed
from .diffusion import Denoiser, NoiseSchedule, Normalizer, ddim_sample, make_schedule, train_step_loss
from .dynamics import DynamicsEncoder
from .predictor import PredictionHead


class CasFT(nn.Module):
    def __init__(self, cfg: ExperimentConfig, normalizer: Normalizer | None = None,
                 schedule: NoiseSchedule | None = None):
        super().__init__()
        m, l = cfg.model, cfg.data.intervals
        self.variant = m.variant
        self.l = l
        self.d_h = m.d_h
        self.num_steps = cfg.diff.ddim_steps
        self.eta = cfg.diff.eta
        self.num_samples = cfg.diff.num_samples
        self.seed = cfg.train.seed
        self.normalizer = normalizer or Normalizer(np.zeros(l), np.ones(l))
        self.schedule = schedule or make_schedule(cfg.diff.K, cfg.diff.schedule, cfg.diff.beta_min, cfg.diff.beta_max)
        self.features = DualViewEncoder(cfg.B, cfg.embed.d_g, m.d_attn, pooling=m.pooling)
        f_dim = self.features.out_dim
        self.ddim_calls = 0

        if self.uses_ode:
            self.dynamics = DynamicsEncoder(f_dim, m.d_h, cfg.ode.spec(), m.cue_mode, m.time_input)
            state_dim, cond_dim = m.d_h, m.d_h + l
        else:
            state_dim = cond_dim = f_dim
        if self.uses_diffusion:
            self.denoiser = Denoiser(l, cond_dim, cfg.diff.width, cfg.diff.layers)
        if self.variant == "fm":
            self.segments = nn.Sequential(nn.Linear(f_dim, m.head_width), nn.ReLU(), nn.Linear(m.head_width, l))
        head_in = {"no_ft": f_dim, "no_diffusion": cond_dim}.get(self.variant, l + state_dim)
        self.head = PredictionHead(head_in, m.head_width)

    @property
    def uses_ode(self) -> bool:
        return self.variant in ("full", "no_diffusion")

    @property
    def uses_diffusion(self) -> bool:
        return self.variant in ("full", "no_ode")

    def init_output_bias(self, p_train) -> None:
        """Start the head at the training set's geometric-mean popularity."""
        target = float(np.exp2(np.mean(np.log2(np.asarray(p_train, dtype=float) + 1.0))) - 1.0)
        target = max(target, 1e-3)
        with torch.no_grad():
            self.head.out.bias.fill_(target + math.log(-math.expm1(-target)))  # softplus^-1

    # ------------------------------------------------------------------

    def encode(self, batch: dict) -> dict:
        s = self.features(batch["times"], batch["e_local"], batch["e_global"])
        idx = (batch["lengths"] - 1).clamp(min=0)
        s_last = s[torch.arange(s.shape[0]), idx]
        out = {"s": s, "s_last": s_last}
        if self.uses_ode:
            h_to, cues = self.dynamics(s, batch["ode_times"], batch["lengths"], batch["t_obs"], batch["bounds"])
            out.update(h_to=h_to, cues=cues, state=h_to, cond=torch.cat([h_to, cues], dim=-1))
        else:
            out.update(state=s_last, cond=s_last)
        return out

    def _start_noise(self, ids, dtype, generator):
        if generator is not None:
            return torch.randn((len(ids), self.l), generator=generator, dtype=dtype)
        rows = [torch.randn(self.l, generator=torch.Generator().manual_seed(noise_seed(i, self.seed)), dtype=dtype)
                for i in ids]
        return torch.stack(rows)

    def sample_trend(self, cond: torch.Tensor, ids, generator: torch.Generator | None = None) -> torch.Tensor:
        """Normalized Y0 from DDIM; without ``generator`` the noise is keyed by cascade id."""
        self.ddim_calls += 1
        draws = []
        for r in range(self.num_samples if generator is None else 1):
            y_T = self._start_noise([f"{i}#{r}" if r else i for i in ids], cond.dtype, generator)
            draws.append(ddim_sample(self.denoiser, cond, self.schedule, self.num_steps, eta=self.eta,
                                     generator=generator or torch.Generator().manual_seed(self.seed), y_T=y_T))
        return torch.stack(draws).mean(0)

    def forward(self, batch: dict, generator: torch.Generator | None = None) -> dict:
        """Predictions plus the generative loss term.

        Pass a ``generator`` during training (random diffusion steps, noise and
        DDIM starts); leave it ``None`` at inference for id-keyed
        deterministic sampling.
        """
        enc = self.encode(batch)
        zero = enc["state"].new_zeros(())
        l2 = zero
        y_norm = self.normalizer.normalize(batch["y"]) if "y" in batch else None
        if self.variant == "no_ft":
            p_hat = self.head(enc["s_last"])
            trend = None
        elif self.variant == "no_diffusion":
            p_hat = self.head(enc["cond"])
            trend = None
        elif self.variant == "fm":
            trend = self.segments(enc["s_last"])
            if y_norm is not None:
                l2 = ((trend - y_norm) ** 2).sum(-1).mean()
            p_hat = self.head(torch.cat([trend, enc["state"]], dim=-1))
        else:
            if y_norm is not None and generator is not None:
                l2 = train_step_loss(self.denoiser, y_norm, enc["cond"], self.schedule, generator)
            trend = self.sample_trend(enc["cond"], batch["ids"], generator)
            p_hat = self.head(torch.cat([trend, enc["state"]], dim=-1))
        return {"p_hat": p_hat, "l2": l2, "trend": trend, "state": enc["state"], **enc}

    def trend_counts(self, trend: torch.Tensor) -> torch.Tensor:
        return self.normalizer.denormalize(trend)
