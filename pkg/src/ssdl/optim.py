"""Optimization infrastructure: AdamW updates with decoupled decay and
decay exemptions, one-cycle learning-rate schedule, EMA, global-norm
gradient clipping, and the label-smoothed class-weighted cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    schedule: str = "constant"  # constant | one_cycle
    peak_lr: float = 5e-4
    initial_lr: float = 1e-5
    floor_lr: float = 1e-6
    warmup_epochs: int = 5
    epochs: int = 100
    batch_size: int = 108

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


class AdamW:
    """Decoupled-weight-decay Adam with bias correction.

    Parameters whose names are listed in `no_decay` (fusion tokens, bias
    terms, norm scales) are exempt from decay. Aborts the step on any
    non-finite gradient.
    """

    def __init__(self, named_params, cfg: OptimConfig, no_decay: set[str] | None = None):
        self.cfg = cfg
        self.params: list[tuple[str, torch.Tensor]] = [
            (n, p) for n, p in named_params if p.requires_grad
        ]
        self.no_decay = no_decay if no_decay is not None else set()
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params}
        self.v = {n: torch.zeros_like(p) for n, p in self.params}

    @torch.no_grad()
    def step(self, lr: float | None = None) -> None:
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        for name, p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite gradient in {name}; aborting step")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = torch.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
            p.add_(update, alpha=-lr)
            if cfg.weight_decay > 0 and not self._exempt(name, p):
                p.mul_(1.0 - lr * cfg.weight_decay)

    def _exempt(self, name: str, p: torch.Tensor) -> bool:
        return name in self.no_decay or name.endswith("bias")

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def one_cycle_lr(step: int, total_steps: int, cfg: OptimConfig, warmup_steps: int | None = None) -> float:
    """Linear warmup from initial_lr to peak_lr, then cosine decay to floor_lr."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    if warmup_steps is None:
        warmup_steps = max(1, int(total_steps * cfg.warmup_epochs / max(cfg.epochs, 1)))
    warmup_steps = min(warmup_steps, total_steps)
    if step <= warmup_steps:
        frac = step / warmup_steps
        return cfg.initial_lr + frac * (cfg.peak_lr - cfg.initial_lr)
    frac = (step - warmup_steps) / max(total_steps - warmup_steps, 1)
    return cfg.floor_lr + 0.5 * (cfg.peak_lr - cfg.floor_lr) * (1.0 + math.cos(math.pi * frac))


class EMA:
    """Exponential moving average of model parameters."""

    def __init__(self, model: nn.Module, decay: float = 0.999):
        self.decay = decay
        self.shadow = {
            n: p.detach().clone() for n, p in model.state_dict().items() if p.dtype.is_floating_point
        }

    @torch.no_grad()
    def update(self, model: nn.Module) -> None:
        for n, p in model.state_dict().items():
            if n in self.shadow:
                self.shadow[n].mul_(self.decay).add_(p, alpha=1.0 - self.decay)

    def state(self) -> dict[str, torch.Tensor]:
        return self.shadow

    @torch.no_grad()
    def copy_to(self, model: nn.Module) -> None:
        state = dict(model.state_dict())
        for n, v in self.shadow.items():
            state[n] = v.clone()
        model.load_state_dict(state)


def clip_by_global_norm(params, threshold: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `threshold`.

    Returns the pre-clip norm."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    grads = [p.grad for p in params if getattr(p, "grad", None) is not None]
    if not grads:
        return 0.0
    norm = torch.sqrt(sum((g.double() ** 2).sum() for g in grads)).item()
    if norm > threshold:
        scale = threshold / norm
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return norm


def smoothed_weighted_ce(
    logits: torch.Tensor,
    labels: torch.Tensor,
    smoothing: float = 0.0,
    class_weights: torch.Tensor | None = None,
) -> torch.Tensor:
    """Label-smoothed cross-entropy, each sample weighted by the weight of
    its true class; batch mean."""
    if not 0 <= smoothing < 1:
        raise ValueError("smoothing must be in [0, 1)")
    k = logits.shape[-1]
    if torch.any(labels < 0) or torch.any(labels >= k):
        raise ValueError("label out of range")
    logp = torch.log_softmax(logits, dim=-1)
    target = torch.full_like(logp, smoothing / k)
    target.scatter_(-1, labels.unsqueeze(-1), 1.0 - smoothing + smoothing / k)
    loss = -(target * logp).sum(-1)
    if class_weights is not None:
        if torch.any(class_weights <= 0):
            raise ValueError("class weights must be positive")
        loss = loss * class_weights.to(loss.dtype)[labels]
    return loss.mean()


def balanced_class_weights(counts: torch.Tensor) -> torch.Tensor:
    """(total / num_classes) / count_c, normalized to mean 1."""
    counts = counts.double()
    w = counts.sum() / (counts.numel() * counts)
    return (w / w.mean()).float()
