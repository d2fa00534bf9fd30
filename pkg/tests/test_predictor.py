import math
import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from casft.predictor import LossBreakdown, PredictionHead, mape, msle, predict, regression_loss, total_loss


def _zero_head(bias):
    head = PredictionHead(8, 16).double()
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
        head.out.bias.fill_(bias)
    return head


def test_zero_head_gives_ln2():
    p = predict(torch.zeros(1, 4, dtype=torch.float64), torch.zeros(1, 4, dtype=torch.float64), _zero_head(0.0))
    assert p.item() == pytest.approx(math.log(2), abs=1e-15)


def test_head_bias_asymptote():
    p = predict(torch.randn(1, 4, dtype=torch.float64), torch.randn(1, 4, dtype=torch.float64), _zero_head(10.0))
    assert p.item() == pytest.approx(10.0, abs=1e-4)


def test_head_matches_matrix_oracle():
    torch.manual_seed(0)
    head = PredictionHead(8, 16).double()
    y0, h = np.random.default_rng(1).standard_normal((2, 5, 4))
    out = predict(torch.as_tensor(y0), torch.as_tensor(h), head).detach().numpy()
    W1, b1 = head.hidden.weight.detach().numpy(), head.hidden.bias.detach().numpy()
    W2, b2 = head.out.weight.detach().numpy(), head.out.bias.detach().numpy()
    x = np.concatenate([y0, h], axis=1)
    z = np.maximum(x @ W1.T + b1, 0) @ W2.T + b2
    ref = np.log1p(np.exp(z[:, 0]))
    assert np.allclose(out, ref, atol=1e-6)
    assert np.all(out > 0)


def test_head_monotone_in_bias():
    x = torch.randn(3, 4, dtype=torch.float64)
    torch.manual_seed(0)
    head = PredictionHead(8, 8).double()
    vals = []
    for b in (-3.0, 0.0, 2.0, 7.0):
        with torch.no_grad():
            head.out.bias.fill_(b)
        vals.append(predict(x, x, head).detach())
    assert all(bool((a < b).all()) for a, b in zip(vals, vals[1:]))


def test_metric_examples():
    assert abs(msle([3], [1]) - 1.0) < 1e-12
    assert abs(mape([6], [2]) - 1 / 3) < 1e-12
    assert msle([0], [0]) == 0.0 and mape([0], [0]) == 0.0
    p = [0, 4, 17, 300]
    assert msle(p, p) == 0.0 and mape(p, p) == 0.0


def test_regression_loss_examples():
    assert regression_loss([5.0, 7.0], [5.0, 7.0]).item() == 0.0
    assert regression_loss([3.0], [1.0]).item() == 1.0
    p, q = [1.0, 9.0, 30.0], [2.0, 4.0, 33.0]
    assert regression_loss(p * 2, q * 2).item() == regression_loss(p, q).item()


def test_regression_loss_is_differentiable():
    q = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    regression_loss([3.0, 2.0], q).backward()
    # d/dq of (log2 4 - log2(q+1))^2 / 2 at q=1
    assert q.grad[0].item() == pytest.approx(-(2 - 1) / (math.log(2) * 2), rel=1e-12)
    assert q.grad[1].item() == 0.0


def test_metric_errors():
    with pytest.raises(ValueError):
        msle([-1], [1])
    with pytest.raises(ValueError):
        mape([1], [-0.5])
    with pytest.raises(ValueError):
        msle([1, 2], [1])
    with pytest.raises(ValueError):
        msle([], [])


def test_symmetry():
    assert msle([3, 10], [1, 40]) == msle([1, 40], [3, 10])
    assert mape([6], [2]) != mape([2], [6])


pops = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=80, deadline=None)
@given(pops, st.randoms(use_true_random=False))
def test_permutation_invariance_and_agreement(p, rnd):
    q = [x * 1.3 + 0.7 for x in p]
    order = list(range(len(p)))
    rnd.shuffle(order)
    ps, qs = [p[i] for i in order], [q[i] for i in order]
    assert msle(p, q) == msle(ps, qs)
    assert mape(p, q) == mape(ps, qs)
    assert regression_loss(p, q).item() == msle(p, q)


def test_total_loss():
    assert total_loss(1.5, 2.0, 0.0) == 1.5
    assert total_loss(1.5, 2.0, 0.5) == 2.5
    vals = [total_loss(1.5, 2.0, g) for g in (0.0, 0.25, 0.5)]
    assert vals[1] - vals[0] == pytest.approx(vals[2] - vals[1])
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.1)
    b = LossBreakdown(torch.tensor(1.0), torch.tensor(2.0), 0.5, total_loss(torch.tensor(1.0), torch.tensor(2.0), 0.5))
    assert b.total.item() == 2.0
