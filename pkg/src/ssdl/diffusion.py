"""Noise schedules, forward diffusion, velocity targets, loss, and sampling.

Steps are 1-based: t runs over [1, T]. The cosine schedule evaluates its
profile on the grid t-1 = 0..T-1 so that the first step is essentially
noise-free (alpha_bar_1 ~ 1) and the last step is deep in the noise
regime, matching a short T=50 budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

COSINE_S = 0.008
ALPHA_BAR_CLIP = 1e-5


@dataclass
class NoiseSchedule:
    """Strictly decreasing alpha_bar sequence with derived per-step quantities.

    All arrays are length T and 1-indexed by convention: entry [t-1]
    belongs to step t. alpha_bar_prev prepends alpha_bar_0 = 1.
    """

    alpha_bar: torch.Tensor
    kind: str = "cosine"

    sqrt_alpha_bar: torch.Tensor = field(init=False)
    sqrt_one_minus: torch.Tensor = field(init=False)
    alpha_bar_prev: torch.Tensor = field(init=False)
    beta: torch.Tensor = field(init=False)
    sigma2: torch.Tensor = field(init=False)

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.ndim != 1 or ab.numel() < 1:
            raise ValueError("alpha_bar must be a non-empty vector")
        if not torch.all((ab > 0) & (ab < 1)):
            raise ValueError("alpha_bar entries must lie in (0, 1)")
        if ab.numel() > 1 and not torch.all(ab[1:] < ab[:-1]):
            raise ValueError("alpha_bar must be strictly decreasing")
        self.sqrt_alpha_bar = torch.sqrt(ab)
        self.sqrt_one_minus = torch.sqrt(1.0 - ab)
        self.alpha_bar_prev = torch.cat([torch.ones(1, dtype=ab.dtype), ab[:-1]])
        alpha = ab / self.alpha_bar_prev
        self.beta = 1.0 - alpha
        # "small" posterior variance beta_tilde
        self.sigma2 = (1.0 - self.alpha_bar_prev) / (1.0 - ab) * self.beta

    @property
    def T(self) -> int:
        return self.alpha_bar.numel()

    def check_step(self, t) -> None:
        t = torch.as_tensor(t)
        if torch.any(t < 1) or torch.any(t > self.T):
            raise ValueError(f"step out of range [1, {self.T}]")

    def gather(self, name: str, t) -> torch.Tensor:
        """Per-step quantity for (possibly batched) 1-based steps t."""
        self.check_step(t)
        idx = torch.as_tensor(t, dtype=torch.long) - 1
        return getattr(self, name)[idx]

    def dump_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "alpha_bar", "sqrt_alpha_bar", "sigma"])
            for t in range(1, self.T + 1):
                writer.writerow(
                    [
                        t,
                        float(self.alpha_bar[t - 1]),
                        float(self.sqrt_alpha_bar[t - 1]),
                        float(self.sigma2[t - 1].sqrt()),
                    ]
                )


def cosine_schedule(T: int, s: float = COSINE_S, dtype=torch.float64) -> NoiseSchedule:
    """Cosine alpha_bar profile, clipped into (1e-5, 1 - 1e-5)."""
    if T < 1:
        raise ValueError("T must be >= 1")

    def f(u: float) -> float:
        return math.cos(((u / T + s) / (1 + s)) * math.pi / 2) ** 2

    f0 = f(0.0)
    ab = torch.tensor([f(t - 1.0) / f0 for t in range(1, T + 1)], dtype=dtype)
    ab = ab.clamp(ALPHA_BAR_CLIP, 1.0 - ALPHA_BAR_CLIP)
    return NoiseSchedule(alpha_bar=ab, kind="cosine")


def linear_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, dtype=torch.float64
) -> NoiseSchedule:
    """alpha_bar from linearly spaced betas."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = torch.linspace(beta_start, beta_end, T, dtype=dtype)
    ab = torch.cumprod(1.0 - beta, dim=0)
    return NoiseSchedule(alpha_bar=ab, kind="linear")


def forward_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; t may be scalar or per-example."""
    sa = _broadcast(sched.gather("sqrt_alpha_bar", t), x0)
    sb = _broadcast(sched.gather("sqrt_one_minus", t), x0)
    return sa * x0 + sb * eps


def velocity_target(x0: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """v_t = sqrt(ab_t) eps - sqrt(1 - ab_t) x0."""
    sa = _broadcast(sched.gather("sqrt_alpha_bar", t), x0)
    sb = _broadcast(sched.gather("sqrt_one_minus", t), x0)
    return sa * eps - sb * x0


def recover_x0(xt: torch.Tensor, v: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """Exact inversion: x0 = sqrt(ab_t) x_t - sqrt(1 - ab_t) v_t."""
    sa = _broadcast(sched.gather("sqrt_alpha_bar", t), xt)
    sb = _broadcast(sched.gather("sqrt_one_minus", t), xt)
    return sa * xt - sb * v


def recover_eps(xt: torch.Tensor, v: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """Exact inversion: eps = sqrt(1 - ab_t) x_t + sqrt(ab_t) v_t."""
    sa = _broadcast(sched.gather("sqrt_alpha_bar", t), xt)
    sb = _broadcast(sched.gather("sqrt_one_minus", t), xt)
    return sb * xt + sa * v


def _broadcast(per_step: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if per_step.ndim == 0:
        return per_step.to(like.dtype)
    shape = [per_step.shape[0]] + [1] * (like.ndim - 1)
    return per_step.view(shape).to(like.dtype)


def diffusion_loss(
    model,
    x0: torch.Tensor,
    channel_ids: torch.Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """MSE between predicted and true velocity, one (t, eps) draw per row.

    x0: (rows, L) where each row is one signal channel treated as an
    independent example; channel_ids: (rows,).
    """
    if x0.numel() == 0:
        raise ValueError("empty batch")
    rows = x0.shape[0]
    t = torch.randint(1, sched.T + 1, (rows,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    xt = forward_sample(x0, t, eps, sched)
    v = velocity_target(x0, eps, t, sched)
    v_hat = model(xt, t, channel_ids)
    return torch.mean((v - v_hat) ** 2)


@torch.no_grad()
def ancestral_sample(
    model,
    sched: NoiseSchedule,
    shape: tuple[int, ...],
    channel_ids: torch.Tensor,
    generator: torch.Generator | None = None,
    dtype=torch.float32,
) -> torch.Tensor:
    """Iterate t = T..1; convert predicted velocity to x0-hat, take the
    posterior mean, and add sigma_t noise except at the final step."""
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in range(sched.T, 0, -1):
        tt = torch.full((shape[0],), t, dtype=torch.long)
        v_hat = model(x, tt, channel_ids)
        x0_hat = recover_x0(x, v_hat, tt, sched)
        ab = sched.alpha_bar[t - 1].to(dtype)
        ab_prev = sched.alpha_bar_prev[t - 1].to(dtype)
        beta = sched.beta[t - 1].to(dtype)
        alpha = 1.0 - beta
        mean = (
            torch.sqrt(ab_prev) * beta * x0_hat + torch.sqrt(alpha) * (1.0 - ab_prev) * x
        ) / (1.0 - ab)
        if t > 1:
            sigma = sched.sigma2[t - 1].sqrt().to(dtype)
            noise = torch.randn(shape, generator=generator, dtype=dtype)
            x = mean + sigma * noise
        else:
            x = mean
    return x


def extraction_input(
    x0: torch.Tensor, mode: str, t: int, sched: NoiseSchedule
) -> tuple[torch.Tensor, int]:
    """Backbone input for latent extraction.

    mode="none": signal untouched, conditioning step 0 (outside the
    training range, flagged deliberately). mode="noiseless": scaled by
    sqrt(alpha_bar_t) with no noise draw, conditioning step t.
    """
    if mode == "none":
        return x0, 0
    if mode == "noiseless":
        sched.check_step(t)
        return sched.sqrt_alpha_bar[t - 1].to(x0.dtype) * x0, t
    raise ValueError(f"unknown extraction mode {mode!r}")
