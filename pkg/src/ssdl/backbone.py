"""Gated residual state-space backbone for diffusion velocity prediction.

DiffWave-style wiring with the dilated convolutions replaced by
per-channel bidirectional diagonal SSM banks. Each signal channel is
processed individually; channel identity and diffusion step enter only
through a summed conditioning embedding injected into every block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .s4d import BidirectionalS4D, gated_pair_apply


@dataclass
class SSMDPConfig:
    n_layers: int = 20
    hidden: int = 128  # gate width == filter width == residual width
    state_dim: int = 128
    embed_dim: int = 128
    step_mlp_hidden: int = 512
    num_signal_channels: int = 22
    T: int = 50
    tap: str = "gate"  # which path feeds latent extraction
    tap_stage: str = "post_cond"  # pre_cond | post_cond (always pre-nonlinearity)

    def __post_init__(self):
        for name in ("n_layers", "hidden", "state_dim", "embed_dim", "num_signal_channels", "T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.tap not in ("gate", "filter"):
            raise ValueError("tap must be 'gate' or 'filter'")
        if self.tap_stage not in ("pre_cond", "post_cond"):
            raise ValueError("tap_stage must be 'pre_cond' or 'post_cond'")


def step_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Interleaved sin/cos of the step against a geometric frequency ladder.

    t: integer tensor (...,); returns (..., dim)."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    t = torch.as_tensor(t, dtype=torch.get_default_dtype())
    exponents = torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
    freqs = torch.exp(-math.log(10000.0) * exponents)
    angles = t.unsqueeze(-1) * freqs
    out = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return out.flatten(-2)


class GatedBlock(nn.Module):
    def __init__(self, cfg: SSMDPConfig):
        super().__init__()
        h = cfg.hidden
        self.gate_ssm = BidirectionalS4D(h, cfg.state_dim)
        self.filter_ssm = BidirectionalS4D(h, cfg.state_dim)
        self.cond_proj = nn.Linear(cfg.embed_dim, 2 * h)
        self.out_proj = nn.Conv1d(h, 2 * h, 1)
        self.tap = cfg.tap
        self.tap_stage = cfg.tap_stage

    def forward(self, u: torch.Tensor, cond: torch.Tensor):
        """u: (rows, H, L); cond: (rows, E). Returns (residual_out, skip, tap)."""
        g, f = gated_pair_apply(self.gate_ssm, self.filter_ssm, u)
        tap = g if self.tap == "gate" else f
        gc, fc = self.cond_proj(cond).unsqueeze(-1).chunk(2, dim=-2)
        g = g + gc
        f = f + fc
        if self.tap_stage == "post_cond":
            tap = g if self.tap == "gate" else f
        z = torch.tanh(f) * torch.sigmoid(g)
        residual, skip = self.out_proj(z).chunk(2, dim=-2)
        out = (u + residual) / math.sqrt(2.0)
        return out, skip, tap


class SSMDP(nn.Module):
    """Velocity predictor over single-channel rows.

    forward(x, t, channel_ids): x (rows, L), t scalar or (rows,) in
    [0, T], channel_ids (rows,) -> predicted velocity (rows, L).
    """

    def __init__(self, cfg: SSMDPConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.input_proj = nn.Conv1d(1, h, 1)
        self.channel_embed = nn.Embedding(cfg.num_signal_channels, cfg.embed_dim)
        self.step_mlp = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.step_mlp_hidden),
            nn.SiLU(),
            nn.Linear(cfg.step_mlp_hidden, cfg.embed_dim),
        )
        self.blocks = nn.ModuleList(GatedBlock(cfg) for _ in range(cfg.n_layers))
        self.head1 = nn.Conv1d(h, h, 1)
        self.head2 = nn.Conv1d(h, 1, 1)

    def conditioning(self, t, channel_ids: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(channel_ids.shape[0])
        if torch.any(t < 0) or torch.any(t > self.cfg.T):
            raise ValueError(f"step must be in [0, {self.cfg.T}]")
        emb = step_embedding(t, self.cfg.embed_dim)
        param = self.input_proj.weight
        return self.channel_embed(channel_ids) + self.step_mlp(emb.to(param.dtype))

    def forward(self, x: torch.Tensor, t, channel_ids: torch.Tensor) -> torch.Tensor:
        out, _ = self._run(x, t, channel_ids, want_taps=False)
        return out

    def _run(self, x: torch.Tensor, t, channel_ids: torch.Tensor, want_taps: bool):
        if x.ndim != 2:
            raise ValueError("x must be (rows, samples)")
        cond = self.conditioning(t, channel_ids)
        u = torch.relu(self.input_proj(x.unsqueeze(1)))
        skips = 0.0
        taps = []
        for block in self.blocks:
            u, skip, tap = block(u, cond)
            skips = skips + skip
            if want_taps:
                taps.append(tap)
        y = torch.relu(skips / math.sqrt(self.cfg.n_layers))
        y = torch.relu(self.head1(y))
        y = self.head2(y).squeeze(1)
        return y, taps

    @torch.no_grad()
    def collect_latents(self, x: torch.Tensor, t, channel_ids: torch.Tensor) -> torch.Tensor:
        """Per-block tap activations for rows of a segment.

        x: (rows, L) -> (rows, n_layers, L, hidden)."""
        _, taps = self._run(x, t, channel_ids, want_taps=True)
        return torch.stack(taps, dim=1).transpose(-1, -2)

    def retarget_rate(self, ratio: float) -> None:
        """Rescale every SSM step size for a new input sampling rate."""
        for block in self.blocks:
            block.gate_ssm.retarget_rate(ratio)
            block.filter_ssm.retarget_rate(ratio)

    def set_tap(self, tap: str | None = None, tap_stage: str | None = None) -> None:
        """Choose which path (gate/filter) and stage feed latent taps."""
        if tap is not None and tap not in ("gate", "filter"):
            raise ValueError("tap must be 'gate' or 'filter'")
        if tap_stage is not None and tap_stage not in ("pre_cond", "post_cond"):
            raise ValueError("tap_stage must be 'pre_cond' or 'post_cond'")
        for block in self.blocks:
            if tap is not None:
                block.tap = tap
            if tap_stage is not None:
                block.tap_stage = tap_stage
        if tap is not None:
            self.cfg.tap = tap
        if tap_stage is not None:
            self.cfg.tap_stage = tap_stage

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def segment_latents(
    model: SSMDP, segment: torch.Tensor, t: int, channel_ids: torch.Tensor | None = None
) -> torch.Tensor:
    """Latent tensor (C, n, L, H) for one (C, L) segment."""
    c = segment.shape[0]
    if channel_ids is None:
        channel_ids = torch.arange(c)
    return model.collect_latents(segment, t, channel_ids)
