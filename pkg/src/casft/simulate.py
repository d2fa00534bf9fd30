"""Synthetic retweet cascades from an exponential-kernel Hawkes process.

Each cascade's event stream has intensity

    lambda(t) = mu * exp(-kappa * t) + sum_{t_i < t} alpha * delta * exp(-delta * (t - t_i))

where the sum includes the root post at t=0, so ``alpha`` is the expected
number of direct retweets triggered by any one event.  ``kappa`` (the
``mu_decay`` argument) defaults to 0, a constant background rate.  Every retweet is
attributed to the event that triggered it (or to the root for background
arrivals), which gives the cascade its tree shape.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .data import Cascade, RetweetEvent


def _draw(rng: np.random.Generator, value) -> float:
    """Scalar parameters pass through; (low, high) pairs are drawn uniformly per cascade."""
    if isinstance(value, (tuple, list)):
        low, high = value
        return float(rng.uniform(low, high))
    return float(value)


def _upper(value) -> float:
    return float(max(value)) if isinstance(value, (tuple, list)) else float(value)


def expected_event_count(mu: float, alpha: float, delta: float, horizon: float, root_excites: bool = True) -> float:
    """Mean number of retweets in [0, horizon] (root post excluded)."""
    decay = delta * (1.0 - alpha)
    ramp = (1.0 - math.exp(-decay * horizon)) / decay
    background = mu * horizon / (1.0 - alpha) - mu * alpha / (1.0 - alpha) * ramp
    from_root = alpha * delta * ramp if root_excites else 0.0
    return background + from_root


class UserPool:
    """Zipf-weighted user identities shared across cascades."""

    def __init__(self, n_users: int, zipf_a: float, rng: np.random.Generator):
        w = 1.0 / np.arange(1, n_users + 1) ** zipf_a
        self.cdf = np.cumsum(w / w.sum())
        self.rng = rng
        self.n_users = n_users
        self._fresh = 0

    def draw(self, exclude: set) -> str:
        for _ in range(64):
            i = int(np.searchsorted(self.cdf, self.rng.random(), side="right"))
            name = f"u{min(i, self.n_users - 1)}"
            if name not in exclude:
                return name
        self._fresh += 1
        return f"x{self._fresh}"


def _simulate_one(cid: str, mu: float, alpha: float, delta: float, kappa: float, horizon: float,
                  pool: UserPool, rng: np.random.Generator, max_events: int) -> Cascade:
    root = pool.draw(set())
    users = [root]
    present = {root}
    times = [0.0]
    edges = []
    excitation = alpha * delta  # kernel mass contributed by the root at t=0+
    t = 0.0
    while len(edges) < max_events:
        # both terms only decay between events, so the current intensity bounds the future
        bound = mu * math.exp(-kappa * t) + excitation
        if bound <= 0.0:
            break
        wait = rng.exponential(1.0 / bound)
        t += wait
        if t > horizon:
            break
        excitation *= math.exp(-delta * wait)
        background = mu * math.exp(-kappa * t)
        if rng.random() * bound > background + excitation:
            continue
        # attribute the arrival to the background or to one past event
        if rng.random() * (background + excitation) < background:
            parent = 0
        else:
            w = np.exp(-delta * (t - np.asarray(times)))
            parent = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
            parent = min(parent, len(times) - 1)
        user = pool.draw(present)
        present.add(user)
        edges.append(RetweetEvent(users[parent], user, t))
        users.append(user)
        times.append(t)
        excitation += alpha * delta
    return Cascade(cid, root, (RetweetEvent(root, root, 0.0), *edges))


def simulate_hawkes_cascades(n: int, mu=0.5, alpha=0.8, delta=1.0, horizon: float = 100.0,
                             n_users: int = 5000, zipf_a: float = 1.0, seed: int = 0,
                             max_events: int = 100_000, mu_decay=0.0) -> list[Cascade]:
    """Simulate ``n`` cascades by Ogata thinning.

    ``mu``, ``alpha``, ``delta`` and ``mu_decay`` may each be a scalar or a ``(low, high)``
    range sampled uniformly per cascade.  ``n_users``/``zipf_a`` control the
    shared user pool from which participants are drawn (no repeats inside a
    cascade).
    """
    if _upper(alpha) >= 1.0:
        raise ValueError(f"supercritical branching ratio alpha={alpha}: need alpha < 1")
    lows = [min(v) if isinstance(v, (tuple, list)) else v for v in (mu, alpha, delta, mu_decay)]
    if lows[0] < 0 or lows[1] < 0 or lows[2] <= 0 or lows[3] < 0:
        raise ValueError("need mu >= 0, alpha >= 0, delta > 0, mu_decay >= 0")
    rng = np.random.default_rng(seed)
    pool = UserPool(n_users, zipf_a, rng)
    width = len(str(max(n - 1, 0)))
    out = []
    for i in range(n):
        params = [_draw(rng, v) for v in (mu, alpha, delta, mu_decay)]
        out.append(_simulate_one(f"c{i:0{width}d}", *params, horizon, pool, rng, max_events))
    return out


def heterogeneous_preset(**overrides) -> dict:
    """Default simulation parameters for the desk-scale training corpora."""
    params = dict(mu=(0.5, 3.0), alpha=(0.2, 0.8), delta=(0.5, 3.0), mu_decay=(0.0, 0.15), horizon=36.0,
                  n_users=3000, zipf_a=1.1)
    params.update(overrides)
    return params


def interevent_gaps(cascades: Sequence[Cascade]) -> np.ndarray:
    return np.concatenate([np.diff(c.times) for c in cascades if len(c.events) > 1])
