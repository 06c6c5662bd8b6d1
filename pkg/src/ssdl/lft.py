"""Latent fusion transformer: per-layer cross-attention fusion of pooled
latents into trainable tokens, then an encoder classifier over all pools.

Fusion applies one decoder-style block per backbone layer group; the
same weights and the same initial tokens are used for every temporal
pool. Learned positional embeddings exist only in the classification
module, so channel order within a layer group is a symmetry of the
model while pool order is not.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn as nn

from .attention import EncoderBlock, FusionBlock

FUSION_KINDS = ("base", "none", "mean")


@dataclass
class LFTConfig:
    fusion_blocks: int = 20  # must equal the backbone layer count in use
    encoder_blocks: int = 8
    heads: int = 8
    dim: int = 128
    mlp_hidden: int = 512
    n_tokens: int = 16
    num_classes: int = 6
    pools: int = 5
    channels: int = 22
    latent_hidden: int = 128
    fusion: str = "base"

    def __post_init__(self):
        if self.fusion not in FUSION_KINDS:
            raise ValueError(f"fusion must be one of {FUSION_KINDS}")
        if self.dim % self.heads:
            raise ValueError("heads must divide dim")

    @property
    def encoder_seq_len(self) -> int:
        if self.fusion == "base":
            return self.pools * self.n_tokens
        if self.fusion == "mean":
            return self.channels * self.pools
        return self.channels * self.fusion_blocks * self.pools


def _mha_params(d: int) -> int:
    return 4 * (d * d + d)


def _mlp_params(d: int, m: int) -> int:
    return d * m + m + m * d + d


def fusion_block_params(d: int, m: int) -> int:
    return 2 * _mha_params(d) + _mlp_params(d, m) + 3 * 2 * d


def encoder_block_params(d: int, m: int) -> int:
    return _mha_params(d) + _mlp_params(d, m) + 2 * 2 * d


def matched_encoder_depth(cfg: LFTConfig) -> int:
    """Encoder depth for the no/mean fusion variants chosen so total
    trainable parameters are closest to the base configuration; ties go
    to the deeper model."""
    base_total = cfg.fusion_blocks * fusion_block_params(cfg.dim, cfg.mlp_hidden) + (
        cfg.encoder_blocks * encoder_block_params(cfg.dim, cfg.mlp_hidden)
    )
    per = encoder_block_params(cfg.dim, cfg.mlp_hidden)
    best_depth, best_err = 1, float("inf")
    for depth in range(1, cfg.fusion_blocks * 3 + cfg.encoder_blocks + 1):
        err = abs(depth * per - base_total)
        if err < best_err or (err == best_err and depth > best_depth):
            best_depth, best_err = depth, err
    return best_depth


def variant_config(cfg: LFTConfig, fusion: str) -> LFTConfig:
    """Config for a fusion ablation arm, with encoder depth re-matched."""
    if fusion == "base":
        return replace(cfg, fusion="base")
    return replace(cfg, fusion=fusion, encoder_blocks=matched_encoder_depth(cfg))


class LFT(nn.Module):
    """Classifier over pooled latents (batch, C, n, p, H)."""

    def __init__(self, cfg: LFTConfig):
        super().__init__()
        self.cfg = cfg
        self.latent_proj = nn.Linear(cfg.latent_hidden, cfg.dim)
        if cfg.fusion == "base":
            self.fusion_tokens = nn.Parameter(
                torch.empty(cfg.n_tokens, cfg.dim).normal_(0.0, 0.02).clamp_(-0.04, 0.04)
            )
            self.fusion_blocks = nn.ModuleList(
                FusionBlock(cfg.dim, cfg.heads, cfg.mlp_hidden) for _ in range(cfg.fusion_blocks)
            )
        self.pos_embed = nn.Parameter(torch.zeros(cfg.encoder_seq_len, cfg.dim))
        self.encoder = nn.ModuleList(
            EncoderBlock(cfg.dim, cfg.heads, cfg.mlp_hidden) for _ in range(cfg.encoder_blocks)
        )
        self.final_norm = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, cfg.num_classes)
        # per-feature input standardization, fit on training latents via
        # set_input_stats; identity until then. Stored as buffers so the
        # statistics travel with the checkpoint.
        shape = (cfg.channels, cfg.fusion_blocks, cfg.pools, cfg.latent_hidden)
        self.register_buffer("input_mean", torch.zeros(shape))
        self.register_buffer("input_scale", torch.ones(shape))

    @torch.no_grad()
    def set_input_stats(self, pooled: torch.Tensor) -> None:
        """Fit the input normalizer to a (batch, C, n, p, H) latent tensor."""
        if pooled.shape[1:] != self.input_mean.shape:
            raise ValueError(
                f"latent shape {tuple(pooled.shape[1:])} != {tuple(self.input_mean.shape)}"
            )
        self.input_mean.copy_(pooled.mean(dim=0))
        self.input_scale.copy_(pooled.std(dim=0).clamp_min(1e-6))

    def fuse(self, latents: torch.Tensor) -> torch.Tensor:
        """(batch, C, n, p, dim) projected latents -> (batch, p, N, dim).

        Fresh copies of the trainable token table are used for every pool."""
        b, c, n, p, _ = latents.shape
        if n != len(self.fusion_blocks):
            raise ValueError(f"latent layer axis {n} != fusion depth {len(self.fusion_blocks)}")
        tokens = self.fusion_tokens.expand(b, p, -1, -1)
        # context per layer group: (batch, p, C, dim)
        context = latents.permute(0, 3, 2, 1, 4)
        for i, block in enumerate(self.fusion_blocks):
            tokens = block(tokens, context[:, :, i])
        return tokens

    def encode_sequence(self, seq: torch.Tensor) -> torch.Tensor:
        if seq.shape[-2] != self.pos_embed.shape[0]:
            raise ValueError(
                f"sequence length {seq.shape[-2]} != positional table {self.pos_embed.shape[0]}"
            )
        x = seq + self.pos_embed
        for block in self.encoder:
            x = block(x)
        x = self.final_norm(x)
        return self.head(x.mean(dim=-2))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        """Pooled latents (batch, C, n, p, H) -> logits (batch, classes)."""
        if pooled.ndim != 5:
            raise ValueError("pooled latents must be (batch, C, n, p, H)")
        if pooled.shape[2] != self.cfg.fusion_blocks:
            raise ValueError(
                f"latent layer axis {pooled.shape[2]} != fusion depth {self.cfg.fusion_blocks}"
            )
        pooled = (pooled - self.input_mean) / self.input_scale
        latents = self.latent_proj(pooled)
        if self.cfg.fusion == "base":
            fused = self.fuse(latents)
            seq = fused.flatten(1, 2)
        elif self.cfg.fusion == "mean":
            seq = latents.mean(dim=2).flatten(1, 2)
        else:  # no fusion: flatten channel, layer, and pool axes directly
            seq = latents.flatten(1, 3)
        return self.encode_sequence(seq)

    def probabilities(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(pooled), dim=-1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def layer_subset(pooled: torch.Tensor, subset: list[int]) -> torch.Tensor:
    """Restrict the layer axis of (batch, C, n, p, H) latents."""
    if len(subset) == 0:
        raise ValueError("empty layer subset")
    n = pooled.shape[2]
    if any(i < 0 or i >= n for i in subset):
        raise ValueError(f"layer index out of range [0, {n})")
    idx = torch.as_tensor(subset, dtype=torch.long)
    return pooled.index_select(2, idx)


def parse_layer_subset(spec: str, n_layers: int) -> list[int]:
    """Named subsets: all, first-half, second-half, q1..q4."""
    if spec == "all":
        return list(range(n_layers))
    half = n_layers // 2
    quarter = n_layers // 4
    named = {
        "first-half": list(range(half)),
        "second-half": list(range(half, n_layers)),
        "q1": list(range(quarter)),
        "q2": list(range(quarter, 2 * quarter)),
        "q3": list(range(2 * quarter, 3 * quarter)),
        "q4": list(range(3 * quarter, n_layers)),
    }
    if spec in named:
        return named[spec]
    try:
        return [int(s) for s in spec.split(",")]
    except ValueError:
        raise ValueError(f"unknown layer subset {spec!r}") from None
