"""Continuous-time growth-rate dynamics: ODE flow between events, GRU jumps at events.

The state integrated by the solver is ``[h, Lambda]`` with

    dh/dt      = f2(t, h)
    dLambda/dt = lambda(h) = softplus(w . h + b)

so the cumulative popularity Lambda is produced by the same solver call as
the hidden state.  Jumps only touch ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .solvers import SolverSpec, integrate


class VectorField(nn.Module):
    """f2(t, h): tanh MLP on ``[h, t]`` returning dh/dt."""

    def __init__(self, d_h: int, n_hidden: int = 2, width: int | None = None, time_input: bool = True):
        super().__init__()
        width = width or d_h
        self.time_input = time_input
        layers, d = [], d_h + int(time_input)
        for _ in range(n_hidden):
            layers += [nn.Linear(d, width), nn.Tanh()]
            d = width
        layers.append(nn.Linear(d, d_h))
        self.net = nn.Sequential(*layers)

    def forward(self, t: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if self.time_input:
            h = torch.cat([h, t.to(h.dtype)[:, None]], dim=-1)
        return self.net(h)


class JumpGRU(nn.Module):
    """Gated jump h = (1 - z) * h' + z * n, with n = tanh(W s + U (r * h') + b)."""

    def __init__(self, d_in: int, d_h: int):
        super().__init__()
        self.x2zrn = nn.Linear(d_in, 3 * d_h)
        self.h2zr = nn.Linear(d_h, 2 * d_h, bias=False)
        self.h2n = nn.Linear(d_h, d_h, bias=False)

    def forward(self, h_prime: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        xz, xr, xn = self.x2zrn(s).chunk(3, dim=-1)
        hz, hr = self.h2zr(h_prime).chunk(2, dim=-1)
        z = torch.sigmoid(xz + hz)
        r = torch.sigmoid(xr + hr)
        n = torch.tanh(xn + self.h2n(r * h_prime))
        return (1 - z) * h_prime + z * n


class GrowthRate(nn.Module):
    """lambda*(t) = softplus(w . h_t + b) > 0."""

    def __init__(self, d_h: int):
        super().__init__()
        self.linear = nn.Linear(d_h, 1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.linear(h)).squeeze(-1)


@dataclass
class DynamicsTrajectory:
    times: list = field(default_factory=list)       # each (B,)
    hidden: list = field(default_factory=list)      # each (B, d_h)
    rate: list = field(default_factory=list)        # each (B,)
    cumulative: list = field(default_factory=list)  # each (B,)

    def record(self, t, state, rate_fn):
        h = state[:, :-1]
        self.times.append(t.detach().clone())
        self.hidden.append(h.detach().clone())
        self.rate.append(rate_fn(h).detach().clone())
        self.cumulative.append(state[:, -1].detach().clone())

    def stacked(self) -> dict[str, torch.Tensor]:
        return {k: torch.stack(getattr(self, k), dim=1) for k in ("times", "hidden", "rate", "cumulative")}


class DynamicsEncoder(nn.Module):
    """Hidden state at t_o plus Lambda cues at the future segment bounds."""

    def __init__(self, d_in: int, d_h: int, spec: SolverSpec = SolverSpec(), cue_mode: str = "absolute",
                 time_input: bool = True):
        super().__init__()
        if cue_mode not in ("absolute", "increment"):
            raise ValueError(f"unknown cue mode {cue_mode!r}")
        self.d_h = d_h
        self.spec = spec
        self.cue_mode = cue_mode
        self.h0 = nn.Parameter(torch.zeros(d_h))
        self.field = VectorField(d_h, time_input=time_input)
        self.jump = JumpGRU(d_in, d_h)
        self.rate = GrowthRate(d_h)

    def augmented(self, t: torch.Tensor, state: torch.Tensor) -> torch.Tensor:
        h = state[:, :-1]
        return torch.cat([self.field(t, h), self.rate(h)[:, None]], dim=-1)

    def evolve(self, h: torch.Tensor, t_from, t_to) -> torch.Tensor:
        """Flow the hidden state alone from ``t_from`` to ``t_to``."""
        return integrate(self.field, h, t_from, t_to, self.spec)

    def _flow(self, state, t_from, t_to):
        return integrate(self.augmented, state, t_from, t_to, self.spec)

    def forward(self, features: torch.Tensor, times: torch.Tensor, lengths: torch.Tensor, t_obs: torch.Tensor,
                bounds: torch.Tensor, trajectory: DynamicsTrajectory | None = None):
        """Run the jump-ODE over observed events, then extrapolate through ``bounds``.

        features: (B, n, F) event features s_i, right-padded.
        times:    (B, n) event times; padding repeats the last valid time.
        lengths:  (B,) number of valid events.
        t_obs:    (B,) observation times (>= last event time).
        bounds:   (B, l) segment end points t_s1..t_sl, increasing, > t_obs.
        Returns ``(h_to, cues)`` of shapes (B, d_h) and (B, l).
        """
        batch, n = times.shape
        dtype = self.h0.dtype
        state = torch.cat([self.h0.expand(batch, -1), torch.zeros(batch, 1, dtype=dtype)], dim=-1)
        t_prev = torch.zeros(batch, dtype=times.dtype)
        if trajectory is not None:
            trajectory.record(t_prev, state, self.rate)
        for i in range(n):
            valid = lengths > i
            t_cur = torch.where(valid, times[:, i], t_prev)
            state = self._flow(state, t_prev, t_cur)
            h_new = self.jump(state[:, :-1], features[:, i])
            h = torch.where(valid[:, None], h_new, state[:, :-1])
            state = torch.cat([h, state[:, -1:]], dim=-1)
            t_prev = t_cur
            if trajectory is not None:
                trajectory.record(t_prev, state, self.rate)
        t_obs = torch.as_tensor(t_obs, dtype=times.dtype).expand(batch)
        state = self._flow(state, t_prev, t_obs)
        h_to, lam_to = state[:, :-1], state[:, -1]
        if trajectory is not None:
            trajectory.record(t_obs, state, self.rate)
        cues, t_prev = [], t_obs
        for j in range(bounds.shape[1]):
            state = self._flow(state, t_prev, bounds[:, j])
            t_prev = bounds[:, j]
            cues.append(state[:, -1])
            if trajectory is not None:
                trajectory.record(t_prev, state, self.rate)
        cues = torch.stack(cues, dim=-1)
        if self.cue_mode == "increment":
            cues = cues - lam_to[:, None]
        return h_to, cues
