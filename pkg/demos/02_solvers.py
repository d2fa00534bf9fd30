"""Compare the bundled ODE solvers on a damped oscillator.

Fixed-step methods trade accuracy for a predictable cost; the adaptive ones
shrink their steps until the local error estimate fits the tolerance.
"""
import math
import time

import torch

from casft.solvers import SOLVERS, SolverSpec, integrate

torch.set_default_dtype(torch.float64)


def oscillator(t, y):
    # x'' + 0.3 x' + 4 x = 0, written as a first-order system
    x, v = y[:, :1], y[:, 1:]
    return torch.cat([v, -4.0 * x - 0.3 * v], dim=1)


def exact(t):
    w = math.sqrt(4.0 - 0.0225)
    c1, c2 = 1.0, 0.15 / w
    return math.exp(-0.15 * t) * (c1 * math.cos(w * t) + c2 * math.sin(w * t))


calls = 0


def counted(t, y):
    global calls
    calls += 1
    return oscillator(t, y)


y0 = torch.tensor([[1.0, 0.0]])
print(f"{'solver':>14}  {'|error|':>10}  {'f evals':>8}  {'ms':>6}")
for name in SOLVERS:
    calls = 0
    start = time.perf_counter()
    y = integrate(counted, y0, 0.0, 5.0, SolverSpec(name, rtol=1e-6, atol=1e-8, step=0.01))
    ms = 1e3 * (time.perf_counter() - start)
    print(f"{name:>14}  {abs(y[0, 0].item() - exact(5.0)):10.2e}  {calls:8d}  {ms:6.1f}")
