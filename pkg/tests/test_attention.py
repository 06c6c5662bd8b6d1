import math

import pytest
import torch

from ssdl.attention import EncoderBlock, FeedForward, FusionBlock, MultiHeadAttention, attention


class TestAttention:
    def test_single_key_returns_value(self):
        q = torch.randn(3, 4)
        k = torch.randn(1, 4)
        v = torch.randn(1, 4)
        out = attention(q, k, v)
        assert torch.allclose(out, v.expand(3, 4), atol=1e-6)

    def test_uniform_when_scores_equal(self):
        q = torch.zeros(2, 4)
        k = torch.randn(5, 4)
        v = torch.randn(5, 4)
        out = attention(q, k, v)
        assert torch.allclose(out, v.mean(0).expand(2, 4), atol=1e-6)

    def test_softmax_oracle_two_keys(self):
        d = 2
        q = torch.tensor([[1.0, 0.0]])
        k = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
        v = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        s = 1.0 / math.sqrt(d)
        w0 = math.exp(s) / (math.exp(s) + math.exp(-s))
        out = attention(q, k, v)
        assert float(out[0, 0]) == pytest.approx(w0, abs=1e-6)
        assert float(out[0, 1]) == pytest.approx(1 - w0, abs=1e-6)

    def test_key_value_permutation_invariance(self):
        gen = torch.Generator().manual_seed(0)
        q = torch.randn(3, 8, generator=gen, dtype=torch.float64)
        k = torch.randn(6, 8, generator=gen, dtype=torch.float64)
        v = torch.randn(6, 8, generator=gen, dtype=torch.float64)
        perm = torch.randperm(6, generator=gen)
        out1 = attention(q, k, v)
        out2 = attention(q, k[perm], v[perm])
        assert (out1 - out2).abs().max() < 1e-6

    def test_rejects_empty_keys(self):
        with pytest.raises(ValueError):
            attention(torch.randn(2, 4), torch.randn(0, 4), torch.randn(0, 4))


class TestMultiHead:
    def test_shapes(self):
        torch.manual_seed(1)
        mha = MultiHeadAttention(16, 4)
        x = torch.randn(2, 5, 16)
        ctx = torch.randn(2, 9, 16)
        assert mha(x, x).shape == (2, 5, 16)
        assert mha(x, ctx).shape == (2, 5, 16)

    def test_rejects_indivisible(self):
        with pytest.raises(ValueError):
            MultiHeadAttention(10, 3)

    def test_context_permutation_invariance(self):
        torch.manual_seed(2)
        mha = MultiHeadAttention(16, 4).double()
        x = torch.randn(1, 3, 16, dtype=torch.float64)
        ctx = torch.randn(1, 7, 16, dtype=torch.float64)
        perm = torch.randperm(7)
        assert (mha(x, ctx) - mha(x, ctx[:, perm])).abs().max() < 1e-6

    def test_single_head_matches_direct(self):
        torch.manual_seed(3)
        mha = MultiHeadAttention(8, 1).double()
        x = torch.randn(1, 4, 8, dtype=torch.float64)
        out = mha(x, x)
        direct = mha.w_o(attention(mha.w_q(x), mha.w_k(x), mha.w_v(x)))
        assert (out - direct).abs().max() < 1e-12


class TestBlocks:
    def test_feedforward_shape(self):
        ff = FeedForward(8, 32)
        assert ff(torch.randn(2, 3, 8)).shape == (2, 3, 8)

    def test_encoder_block_residual_at_zero_weights(self):
        block = EncoderBlock(8, 2, 16)
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        x = torch.randn(1, 4, 8)
        assert torch.equal(block(x), x)

    def test_encoder_block_shape_and_grad(self):
        torch.manual_seed(4)
        block = EncoderBlock(16, 4, 32)
        x = torch.randn(2, 5, 16, requires_grad=True)
        block(x).sum().backward()
        assert x.grad is not None and x.grad.abs().sum() > 0

    def test_fusion_block_uses_context(self):
        torch.manual_seed(5)
        block = FusionBlock(16, 4, 32)
        tokens = torch.randn(1, 3, 16)
        c1 = torch.randn(1, 6, 16)
        c2 = torch.randn(1, 6, 16)
        assert (block(tokens, c1) - block(tokens, c2)).abs().max() > 1e-6

    def test_fusion_block_context_permutation_invariance(self):
        torch.manual_seed(6)
        block = FusionBlock(16, 4, 32).double()
        tokens = torch.randn(1, 3, 16, dtype=torch.float64)
        ctx = torch.randn(1, 6, 16, dtype=torch.float64)
        perm = torch.randperm(6)
        assert (block(tokens, ctx) - block(tokens, ctx[:, perm])).abs().max() < 1e-6
