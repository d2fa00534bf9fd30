"""Time encodings, prefix sub-sequences and dual-view self-attention."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import CascadeSequence
from .embed import lookup


def temporal_encode(t, B: int) -> np.ndarray:
    """Trigonometric encoding of event time(s).

    Entry j (1-based) is cos(t / 10000**((j-1)/B)) for odd j and
    sin(t / 10000**(j/B)) for even j.  ``t`` may be a scalar or an array;
    the encoding is appended as a trailing axis.
    """
    if B <= 0 or B % 2:
        raise ValueError(f"encoding dimension must be a positive even integer, got {B}")
    t = np.asarray(t, dtype=float)
    j = np.arange(1, B + 1)
    odd = j % 2 == 1
    exponent = np.where(odd, j - 1, j) / B
    arg = t[..., None] / 10000.0 ** exponent
    return np.where(odd, np.cos(arg), np.sin(arg))


def temporal_encode_torch(t: torch.Tensor, B: int) -> torch.Tensor:
    if B <= 0 or B % 2:
        raise ValueError(f"encoding dimension must be a positive even integer, got {B}")
    j = torch.arange(1, B + 1, dtype=t.dtype, device=t.device)
    odd = (j % 2) == 1
    exponent = torch.where(odd, j - 1, j) / B
    arg = t[..., None] / 10000.0 ** exponent
    return torch.where(odd, torch.cos(arg), torch.sin(arg))


@dataclass
class SubSequenceBatch:
    local_inputs: list[np.ndarray]   # sub-sequence j: (j+1, B)
    global_inputs: list[np.ndarray]  # sub-sequence j: (j+1, d_g)
    lengths: list[int]


def build_subsequences(seq: CascadeSequence, local: dict, global_: dict, B: int, d_g: int | None = None) -> SubSequenceBatch:
    """Chronological prefixes S_0..S_N with local inputs z(t_i) + E_c(u_i) and raw E_g(u_i).

    Users missing from either table get zero vectors.
    """
    if d_g is None:
        d_g = len(next(iter(global_.values()))) if global_ else B
    z = temporal_encode(np.asarray(seq.times), B)
    ec = lookup(local, seq.users, B)
    if ec.shape[1] != B:
        raise ValueError(f"local embedding dim {ec.shape[1]} != encoding dim {B}")
    x = z + ec
    eg = lookup(global_, seq.users, d_g)
    n = len(seq)
    return SubSequenceBatch([x[: j + 1] for j in range(n)], [eg[: j + 1] for j in range(n)], [j + 1 for j in range(n)])


class SelfAttention(nn.Module):
    """Single-head scaled dot-product self-attention with separate Q/K/V maps."""

    def __init__(self, d_in: int, d_attn: int, d_value: int | None = None):
        super().__init__()
        self.d_attn = d_attn
        self.q = nn.Linear(d_in, d_attn, bias=False)
        self.k = nn.Linear(d_in, d_attn, bias=False)
        self.v = nn.Linear(d_in, d_value or d_attn, bias=False)

    def weights(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        scores = self.q(x) @ self.k(x).transpose(-1, -2) / math.sqrt(self.d_attn)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Token outputs and the attention matrix; ``mask[..., i, j]`` allows query i to see key j."""
        w = self.weights(x, mask)
        return w @ self.v(x), w

    def prefix_outputs(self, x: torch.Tensor, pooling: str = "last") -> torch.Tensor:
        """One vector per prefix sub-sequence S_j = x[..., :j+1, :].

        ``last`` pools the newest token, which is a single causally masked
        pass.  ``mean`` averages every token's output within each prefix and
        costs O(n^3).
        """
        n = x.shape[-2]
        causal = torch.ones(n, n, dtype=torch.bool, device=x.device).tril()
        if pooling == "last":
            out, _ = self(x, causal)
            return out
        if pooling != "mean":
            raise ValueError(f"unknown pooling {pooling!r}")
        scores = self.q(x) @ self.k(x).transpose(-1, -2) / math.sqrt(self.d_attn)
        v = self.v(x)
        # prefix j: queries i <= j attend keys k <= j
        keys_ok = causal[:, None, :]  # (j, 1, k)
        s = scores.unsqueeze(-3).masked_fill(~keys_ok, float("-inf"))
        s = torch.where(causal[:, :, None], s, torch.zeros_like(s))  # rows of absent queries: harmless finite values
        w = torch.softmax(s, dim=-1) * causal[:, :, None]
        tok = w @ v.unsqueeze(-3)  # (..., j, i, d)
        return tok.sum(-2) / causal.sum(-1, keepdim=True).to(x.dtype)


def fuse_views(s_c: Sequence, s_g: Sequence):
    """Concatenate local and global sub-sequence representations pairwise."""
    if len(s_c) != len(s_g):
        raise ValueError(f"view length mismatch: {len(s_c)} vs {len(s_g)}")
    if isinstance(s_c, torch.Tensor):
        return torch.cat([s_c, s_g], dim=-1)
    return [np.concatenate([a, b]) for a, b in zip(s_c, s_g)]


class DualViewEncoder(nn.Module):
    """Spatiotemporal features s_0..s_N from padded per-event inputs.

    Inputs are right-padded; causal masking means padding never leaks into
    valid positions.
    """

    def __init__(self, B: int, d_g: int, d_attn: int = 64, d_value: int | None = None, pooling: str = "last"):
        super().__init__()
        self.B = B
        self.pooling = pooling
        self.local_attn = SelfAttention(B, d_attn, d_value)
        self.global_attn = SelfAttention(d_g, d_attn, d_value)
        self.out_dim = 2 * (d_value or d_attn)

    def forward(self, times: torch.Tensor, e_local: torch.Tensor, e_global: torch.Tensor) -> torch.Tensor:
        x = temporal_encode_torch(times, self.B) + e_local
        s_c = self.local_attn.prefix_outputs(x, self.pooling)
        s_g = self.global_attn.prefix_outputs(e_global, self.pooling)
        return fuse_views(s_c, s_g)
