"""Batched ODE integrators with per-sample intervals.

Every sample b integrates dy/dt = f(t, y) over its own interval
[t0_b, t1_b].  Internally time is rescaled to s in [0, 1] with
dy/ds = (t1_b - t0_b) * f(t0_b + s (t1_b - t0_b), y), and adaptive methods
keep a separate step size per sample, so a sample's result does not depend
on what else is in the batch.  Step-size control runs on detached error
estimates; the returned state is differentiable with respect to ``y0`` and
the parameters of ``f`` (discretize-then-optimize).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

SOLVERS = ("bosh3", "adaptive_heun", "euler", "rk4", "implicit_adams", "midpoint", "dopri5")
ADAPTIVE = ("bosh3", "adaptive_heun", "dopri5")


class StepSizeUnderflow(RuntimeError):
    def __init__(self, t0: float, t1: float, step: float):
        super().__init__(f"step size underflow ({step:.3g}) while integrating over [{t0}, {t1}]")
        self.interval = (t0, t1)


@dataclass(frozen=True)
class SolverSpec:
    method: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-5
    step: float = 0.05  # fixed-step methods, in ODE time units
    max_steps: int = 10_000

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise ValueError(f"unknown ODE solver {self.method!r}; choose one of {', '.join(SOLVERS)}")
        if self.rtol <= 0 or self.atol <= 0 or self.step <= 0:
            raise ValueError("solver tolerances and step must be positive")


@dataclass(frozen=True)
class Tableau:
    c: tuple
    a: tuple
    b: tuple
    b_err: tuple | None = None  # embedded lower-order weights
    order: int = 1
    fsal: bool = False


_TABLEAUS = {
    "euler": Tableau((0.0,), ((),), (1.0,)),
    "midpoint": Tableau((0.0, 0.5), ((), (0.5,)), (0.0, 1.0), order=2),
    "rk4": Tableau((0.0, 0.5, 0.5, 1.0), ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
                   (1 / 6, 1 / 3, 1 / 3, 1 / 6), order=4),
    "adaptive_heun": Tableau((0.0, 1.0), ((), (1.0,)), (0.5, 0.5), (1.0, 0.0), order=2),
    "bosh3": Tableau((0.0, 0.5, 0.75, 1.0), ((), (0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9)),
                     (2 / 9, 1 / 3, 4 / 9, 0.0), (7 / 24, 1 / 4, 1 / 3, 1 / 8), order=3, fsal=True),
    "dopri5": Tableau(
        (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
        ((),
         (1 / 5,),
         (3 / 40, 9 / 40),
         (44 / 45, -56 / 15, 32 / 9),
         (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
         (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
         (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
        (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40),
        order=5, fsal=True),
}


def _as_batch(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    return t.expand(like.shape[0]) if t.dim() == 0 else t


def _rk_stages(rhs, s, h, y, tab: Tableau, k1=None):
    ks = [rhs(s, y) if k1 is None else k1]
    for c, row in zip(tab.c[1:], tab.a[1:]):
        incr = sum(a * k for a, k in zip(row, ks) if a != 0.0)
        ks.append(rhs(s + c * h, y + h[:, None] * incr))
    return ks


def _combine(ks, weights):
    return sum(w * k for w, k in zip(weights, ks) if w != 0.0)


def integrate(func: Callable, y0: torch.Tensor, t0, t1, spec: SolverSpec = SolverSpec()) -> torch.Tensor:
    """State at ``t1`` starting from ``y0`` at ``t0`` (all per sample).

    ``func(t, y)`` receives ``t`` of shape (B,) and ``y`` of shape (B, D).
    Samples with ``t1 == t0`` are returned unchanged.
    """
    squeeze = y0.dim() == 1
    y = y0.unsqueeze(0) if squeeze else y0
    t0 = _as_batch(t0, y).detach()
    t1 = _as_batch(t1, y).detach()
    if torch.any(t1 < t0):
        raise ValueError("integration must run forward in time (t1 >= t0)")
    span = t1 - t0
    if not bool((span > 0).any()):
        return y0

    def rhs(s, z):
        return span[:, None] * func(t0 + s.to(z.dtype) * span, z)

    if spec.method in ADAPTIVE:
        out = _adaptive(rhs, y, span, t0, t1, spec)
    elif spec.method == "implicit_adams":
        out = _adams(rhs, y, span, spec)
    else:
        out = _fixed(rhs, y, span, spec)
    return out.squeeze(0) if squeeze else out


def _n_steps(span: torch.Tensor, step: float) -> torch.Tensor:
    n = torch.ceil(span.detach().double() / step - 1e-9).clamp(min=1)
    return torch.where(span > 0, n, torch.zeros_like(n))


def _fixed(rhs, y, span, spec):
    tab = _TABLEAUS[spec.method]
    n = _n_steps(span, spec.step)
    h = torch.where(n > 0, 1.0 / n.clamp(min=1), torch.zeros_like(n))
    for i in range(int(n.max().item()) if n.numel() else 0):
        live = n > i
        s = i * h
        ks = _rk_stages(rhs, s, h.to(y.dtype), y, tab)
        y_new = y + h.to(y.dtype)[:, None] * _combine(ks, tab.b)
        y = torch.where(live[:, None], y_new, y)
    return y


_AB = (55 / 24, -59 / 24, 37 / 24, -9 / 24)
_AM = (9 / 24, 19 / 24, -5 / 24, 1 / 24)


def _adams(rhs, y, span, spec, corrector_iters: int = 3):
    """Fourth-order Adams-Bashforth predictor with iterated Adams-Moulton corrector.

    The first three steps of each interval are bootstrapped with classical RK4.
    """
    rk4 = _TABLEAUS["rk4"]
    n = _n_steps(span, spec.step)
    h = torch.where(n > 0, 1.0 / n.clamp(min=1), torch.zeros_like(n))
    hy = h.to(y.dtype)[:, None]
    history = []  # derivatives at previous grid points, newest last
    for i in range(int(n.max().item()) if n.numel() else 0):
        live = n > i
        s = i * h
        f_now = rhs(s, y)
        history = (history + [f_now])[-4:]
        if len(history) < 4:
            ks = _rk_stages(rhs, s, h.to(y.dtype), y, rk4, k1=f_now)
            y_new = y + hy * _combine(ks, rk4.b)
        else:
            f3, f2, f1, f0 = history  # f0 newest
            y_new = y + hy * (_AB[0] * f0 + _AB[1] * f1 + _AB[2] * f2 + _AB[3] * f3)
            s_next = s + h
            for _ in range(corrector_iters):
                f_new = rhs(s_next, y_new)
                y_new = y + hy * (_AM[0] * f_new + _AM[1] * f0 + _AM[2] * f1 + _AM[3] * f2)
        y = torch.where(live[:, None], y_new, y)
    return y


def _adaptive(rhs, y, span, t0, t1, spec):
    tab = _TABLEAUS[spec.method]
    batch = y.shape[0]
    s = torch.where(span > 0, torch.zeros(batch, dtype=torch.float64), torch.ones(batch, dtype=torch.float64))
    k1 = rhs(s, y)
    dt = _initial_step(rhs, s, y, k1, tab.order, spec)
    exponent = -1.0 / tab.order
    for _ in range(spec.max_steps):
        active = s < 1.0
        if not bool(active.any()):
            return y
        remaining = 1.0 - s
        h = torch.where(active, torch.minimum(dt, remaining), torch.zeros_like(dt))
        hy = h.to(y.dtype)
        ks = _rk_stages(rhs, s, hy, y, tab, k1)
        y_new = y + hy[:, None] * _combine(ks, tab.b)
        err = hy[:, None] * _combine(ks, [b - e for b, e in zip(tab.b, tab.b_err)])
        with torch.no_grad():
            scale = spec.atol + spec.rtol * torch.maximum(y.abs(), y_new.abs())
            norm = torch.sqrt(torch.mean((err / scale) ** 2, dim=1)).double()
            accept = active & (norm <= 1.0)
            factor = torch.where(norm > 0, 0.9 * norm.clamp(min=1e-300) ** exponent, torch.full_like(norm, 10.0))
            factor = factor.clamp(0.2, 10.0)
        y = torch.where(accept[:, None], y_new, y)
        if tab.fsal:
            k1 = torch.where(accept[:, None], ks[-1], ks[0])
        else:
            k1 = None
        s = torch.where(accept, torch.where(h >= remaining, torch.ones_like(s), s + h), s)
        dt = torch.where(active, h * factor, dt)
        tiny = active & ~accept & (dt < 1e-12)
        if bool(tiny.any()):
            b = int(tiny.nonzero()[0, 0])
            raise StepSizeUnderflow(float(t0[b]), float(t1[b]), float(dt[b] * span[b]))
    raise StepSizeUnderflow(float(t0[0]), float(t1[0]), float("nan"))


@torch.no_grad()
def _initial_step(rhs, s, y0, f0, order, spec):
    """Per-sample starting step (Hairer, Norsett & Wanner, II.4) in rescaled time."""
    scale = spec.atol + spec.rtol * y0.abs()

    def rms(v):
        return torch.sqrt(torch.mean((v / scale) ** 2, dim=1)).double()

    d0, d1 = rms(y0), rms(f0)
    h0 = torch.where((d0 < 1e-5) | (d1 < 1e-5), torch.full_like(d0, 1e-6), 0.01 * d0 / d1.clamp(min=1e-300))
    h0 = h0.clamp(max=1.0)
    f1 = rhs(s + h0, y0 + h0.to(y0.dtype)[:, None] * f0)
    d2 = rms(f1 - f0) / h0
    dmax = torch.maximum(d1, d2)
    h1 = torch.where(dmax <= 1e-15, torch.maximum(torch.full_like(h0, 1e-6), h0 * 1e-3),
                     (0.01 / dmax.clamp(min=1e-300)) ** (1.0 / (order + 1)))
    return torch.minimum(100 * h0, h1).clamp(max=1.0)


def odeint(func: Callable, y0: torch.Tensor, times, spec: SolverSpec = SolverSpec()) -> torch.Tensor:
    """Trajectory at each of ``times`` (shared by the batch); returns (len(times), *y0.shape)."""
    out = [y0]
    for a, b in zip(times[:-1], times[1:]):
        out.append(integrate(func, out[-1], float(a), float(b), spec))
    return torch.stack(out)
