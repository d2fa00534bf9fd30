import math

import numpy as np
import pytest
import torch

from casft.attention import (DualViewEncoder, SelfAttention, build_subsequences, fuse_views, temporal_encode,
                             temporal_encode_torch)
from casft.data import CascadeSequence


def test_encoding_at_zero():
    assert temporal_encode(0.0, 4).tolist() == [1.0, 0.0, 1.0, 0.0]


def test_encoding_high_precision_values():
    z = temporal_encode(10000.0, 2)
    assert z[0] == pytest.approx(-0.952155368259014851240386760663, abs=1e-12)
    assert z[1] == pytest.approx(0.84147098480789650665250232163, abs=1e-12)


def test_encoding_exponents_by_entry():
    t, B = 123.4, 6
    z = temporal_encode(t, B)
    assert z[2] == pytest.approx(math.cos(t / 10000 ** (2 / 6)))
    assert z[3] == pytest.approx(math.sin(t / 10000 ** (4 / 6)))
    assert z[5] == pytest.approx(math.sin(t / 10000 ** (6 / 6)))


def test_encoding_bounded_and_torch_agrees():
    t = np.random.default_rng(0).uniform(0, 1e6, 1000)
    z = temporal_encode(t, 64)
    assert z.shape == (1000, 64) and np.all(np.abs(z) <= 1.0)
    zt = temporal_encode_torch(torch.as_tensor(t), 64).numpy()
    assert np.allclose(z, zt, atol=1e-9)


@pytest.mark.parametrize("B", [0, 3, 7])
def test_odd_dimension_rejected(B):
    with pytest.raises(ValueError):
        temporal_encode(1.0, B)
    with pytest.raises(ValueError):
        temporal_encode_torch(torch.zeros(1), B)


def seq3():
    return CascadeSequence(("a", "b", "c"), (0.0, 1.0, 2.5))


def test_subsequence_lengths():
    sub = build_subsequences(seq3(), {}, {}, 4, 3)
    assert sub.lengths == [1, 2, 3]
    assert [x.shape for x in sub.local_inputs] == [(1, 4), (2, 4), (3, 4)]


def test_zero_local_embeddings_give_pure_encodings():
    sub = build_subsequences(seq3(), {}, {}, 4, 3)
    assert np.array_equal(sub.local_inputs[-1], temporal_encode(np.array([0.0, 1.0, 2.5]), 4))


def test_local_input_is_sum():
    seq = CascadeSequence(("a",), (0.0,))
    sub = build_subsequences(seq, {"a": np.ones(4)}, {"a": np.full(3, 7.0)}, 4)
    assert sub.local_inputs[0][0].tolist() == [2.0, 1.0, 2.0, 1.0]
    assert sub.global_inputs[0][0].tolist() == [7.0, 7.0, 7.0]


def test_subsequence_dimension_mismatch():
    with pytest.raises(ValueError):
        build_subsequences(seq3(), {"a": np.ones(5)}, {}, 4, 3)


def _attn(d_in, d, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return SelfAttention(d_in, d).to(dtype)


def test_singleton_attention():
    a = _attn(3, 2)
    x = torch.randn(1, 3, dtype=torch.float64)
    out, w = a(x)
    assert w.tolist() == [[1.0]]
    assert torch.allclose(out, a.v(x))


def test_identical_tokens_uniform_weights():
    a = _attn(3, 4)
    x = torch.randn(1, 3, dtype=torch.float64).repeat(5, 1)
    _, w = a(x)
    assert torch.allclose(w, torch.full((5, 5), 0.2, dtype=torch.float64), atol=1e-12)


def test_two_token_hand_computation():
    a = SelfAttention(2, 2).double()
    with torch.no_grad():
        a.q.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0]]))
        a.k.weight.copy_(torch.tensor([[2.0, 0.0], [0.0, 1.0]]))
        a.v.weight.copy_(torch.tensor([[1.0, 2.0], [3.0, 4.0]]))
    x = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    out, w = a(x)
    # Q = I, K = [[2,0],[0,1]], scores / sqrt(2); V rows: [1,3] and [2,4]
    p = math.exp(math.sqrt(2)) / (math.exp(math.sqrt(2)) + 1)
    q = 1 / (1 + math.exp(1 / math.sqrt(2)))
    expected_w = [[p, 1 - p], [q, 1 - q]]
    expected = [[p * 1 + (1 - p) * 2, p * 3 + (1 - p) * 4], [q * 1 + (1 - q) * 2, q * 3 + (1 - q) * 4]]
    assert np.allclose(w.detach().numpy(), expected_w, atol=1e-12)
    assert np.allclose(out.detach().numpy(), expected, atol=1e-12)


def test_rows_sum_to_one():
    a = _attn(5, 4)
    x = torch.randn(3, 7, 5, dtype=torch.float64)
    causal = torch.ones(7, 7, dtype=torch.bool).tril()
    for mask in (None, causal):
        _, w = a(x, mask)
        assert torch.allclose(w.sum(-1), torch.ones(3, 7, dtype=torch.float64), atol=1e-6)


def _prefix_oracle(a, x, pooling):
    rows = []
    for j in range(x.shape[0]):
        out, _ = a(x[: j + 1])
        rows.append(out[-1] if pooling == "last" else out.mean(0))
    return torch.stack(rows)


@pytest.mark.parametrize("pooling", ["last", "mean"])
def test_masked_pass_equals_per_prefix_attention(pooling):
    a = _attn(6, 4, seed=1)
    x = torch.randn(9, 6, dtype=torch.float64)
    fast = a.prefix_outputs(x, pooling)
    assert torch.allclose(fast, _prefix_oracle(a, x, pooling), atol=1e-12)


def test_permutation_equivariance_without_time():
    a = _attn(4, 4, seed=2)
    x = torch.randn(6, 4, dtype=torch.float64)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
    out, _ = a(x)
    out_p, _ = a(x[perm])
    assert torch.allclose(out[perm], out_p, atol=1e-12)


def test_time_encoding_breaks_permutation_symmetry():
    enc = DualViewEncoder(4, 3, d_attn=4).double()
    e_local = torch.randn(1, 5, 4, dtype=torch.float64)
    e_global = torch.randn(1, 5, 3, dtype=torch.float64)
    times = torch.tensor([[0.0, 1.0, 2.0, 3.0, 4.0]], dtype=torch.float64)
    perm = torch.tensor([4, 2, 0, 3, 1])
    base = enc.local_attn(temporal_encode_torch(times, 4) + e_local)[0][0]
    permuted = enc.local_attn(temporal_encode_torch(times, 4) + e_local[:, perm])[0][0]
    assert not torch.allclose(base[perm].sort(0).values, permuted.sort(0).values, atol=1e-6)


def test_causal_prefix_bit_exact():
    torch.manual_seed(3)
    enc = DualViewEncoder(8, 6, d_attn=5)
    times = torch.cumsum(torch.rand(2, 7), dim=1)
    e_local, e_global = torch.randn(2, 7, 8), torch.randn(2, 7, 6)
    s = enc(times, e_local, e_global)
    j = 3
    times2, el2, eg2 = times.clone(), e_local.clone(), e_global.clone()
    times2[:, j + 1] += 0.5
    el2[:, j + 1] += 1.0
    eg2[:, j + 1] -= 2.0
    s2 = enc(times2, el2, eg2)
    assert torch.equal(s[:, : j + 1], s2[:, : j + 1])
    assert not torch.equal(s[:, j + 1], s2[:, j + 1])


def test_attention_gradient_matches_finite_differences():
    a = _attn(6, 5, seed=4)
    x = torch.randn(7, 6, dtype=torch.float64, requires_grad=True)
    proj = torch.randn(7, 5, dtype=torch.float64)

    def f(inp):
        return (a.prefix_outputs(inp) * proj).sum()

    f(x).backward()
    analytic = x.grad.clone()
    h = 1e-6
    numeric = torch.zeros_like(analytic)
    with torch.no_grad():
        for idx in np.ndindex(*x.shape):
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[idx] += h
            xm[idx] -= h
            numeric[idx] = (f(xp) - f(xm)) / (2 * h)
    rel = (analytic - numeric).abs().max() / numeric.abs().max()
    assert rel < 1e-4


def test_fuse_views():
    fused = fuse_views([np.ones(8)] * 5, [np.zeros(8)] * 5)
    assert len(fused) == 5 and fused[0].shape == (16,) and np.all(fused[0][8:] == 0)
    t = fuse_views(torch.ones(2, 5, 8), torch.zeros(2, 5, 8))
    assert t.shape == (2, 5, 16)
    with pytest.raises(ValueError):
        fuse_views([np.ones(2)] * 3, [np.ones(2)] * 2)


def test_encoder_output_shape():
    enc = DualViewEncoder(64, 64, d_attn=32)
    s = enc(torch.rand(3, 11), torch.randn(3, 11, 64), torch.randn(3, 11, 64))
    assert s.shape == (3, 11, 64) and enc.out_dim == 64 and torch.isfinite(s).all()
