"""Attention primitives: scaled dot-product attention, multi-head
attention, and pre-norm transformer sub-blocks."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d)) V over the last two axes.

    q: (..., L1, d); k, v: (..., L2, d) -> (..., L1, d)."""
    if k.shape[-2] == 0:
        raise ValueError("empty keys")
    d = q.shape[-1]
    scores = q @ k.transpose(-1, -2) / math.sqrt(d)
    weights = torch.softmax(scores, dim=-1)
    return weights @ v


class MultiHeadAttention(nn.Module):
    """h parallel attentions on projected subspaces, concatenated and
    projected back. Self-attention when queries and keys/values coincide."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("heads must divide dim")
        self.dim = dim
        self.heads = heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, length, _ = x.shape
        return x.view(*lead, length, self.heads, self.dim // self.heads).transpose(-2, -3)

    def forward(self, s1: torch.Tensor, s2: torch.Tensor) -> torch.Tensor:
        q = self._split(self.w_q(s1))
        k = self._split(self.w_k(s2))
        v = self._split(self.w_v(s2))
        out = attention(q, k, v).transpose(-2, -3).flatten(-2)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderBlock(nn.Module):
    """Pre-norm: x + attn(norm(x)); x + mlp(norm(x))."""

    def __init__(self, dim: int, heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.mlp(self.norm2(x))
        return x


class FusionBlock(nn.Module):
    """Decoder-style block without causal masking: self-attention over the
    query tokens, cross-attention into a key/value set, then MLP."""

    def __init__(self, dim: int, heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_hidden)

    def forward(self, tokens: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        h = self.norm1(tokens)
        tokens = tokens + self.self_attn(h, h)
        tokens = tokens + self.cross_attn(self.norm2(tokens), context)
        tokens = tokens + self.mlp(self.norm3(tokens))
        return tokens
