"""Diagonal state-space layers: parameterization, ZOH discretization,
kernel materialization, recurrent evaluation, and rate retargeting.

An S4DBank holds `channels` independent single-input single-output
diagonal SSMs with a shared state dimension. Stability is enforced by
parameterizing Re(A) = -exp(rho); the imaginary part is fixed at its
diag-lin initialization (pi * k), which keeps the oscillator frequencies
pinned while rho, C, Delta, and D train. B is fixed at 1.
"""

from __future__ import annotations

import math
from fractions import Fraction

import torch
import torch.nn as nn

from .numerics import next_pow2


class S4DBank(nn.Module):
    """channels x state_dim bank of diagonal SSMs evaluated as convolutions.

    Input/output: (..., channels, L).
    """

    def __init__(
        self,
        channels: int,
        state_dim: int = 64,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channels = channels
        self.state_dim = state_dim

        # diag-lin: A_k = -1/2 + i pi k
        self.log_neg_real = nn.Parameter(
            torch.full((channels, state_dim), math.log(0.5))
        )
        a_imag = math.pi * torch.arange(state_dim).float()
        self.register_buffer("a_imag", a_imag.expand(channels, state_dim).clone())

        c = torch.randn(channels, state_dim, 2, generator=generator) / math.sqrt(state_dim)
        self.c = nn.Parameter(c)

        u = torch.rand(channels, generator=generator)
        self.log_dt = nn.Parameter(
            math.log(dt_min) + u * (math.log(dt_max) - math.log(dt_min))
        )
        self.d = nn.Parameter(torch.ones(channels))
        # sampling-rate retarget factor, kept rational so that applying a
        # ratio and then its reciprocal restores the bank exactly
        self.rate_ratio = Fraction(1)

    @property
    def a(self) -> torch.Tensor:
        """Continuous-time diagonal entries, Re < 0 by construction."""
        return torch.complex(-torch.exp(self.log_neg_real), self.a_imag)

    @property
    def dt(self) -> torch.Tensor:
        dt = torch.exp(self.log_dt)
        if self.rate_ratio != 1:
            dt = dt / float(self.rate_ratio)
        return dt

    def discretize_zoh(self) -> tuple[torch.Tensor, torch.Tensor]:
        """ZOH with B = 1: A_bar = exp(dt A), B_bar = (exp(dt A) - 1)/A."""
        a = self.a
        dta = self.dt.unsqueeze(-1).to(a.dtype) * a
        a_bar = torch.exp(dta)
        b_bar = (a_bar - 1.0) / a
        return a_bar, b_bar

    def materialize_kernel(self, length: int) -> torch.Tensor:
        """Real convolution kernel (channels, length) via the log-Vandermonde
        form K[j] = Re(sum_i C_i A_bar_i^j B_bar_i)."""
        if length < 1:
            raise ValueError("length must be >= 1")
        a = self.a
        dta = self.dt.unsqueeze(-1).to(a.dtype) * a  # (channels, N)
        a_bar = torch.exp(dta)
        b_bar = (a_bar - 1.0) / a
        c = torch.complex(self.c[..., 0], self.c[..., 1])
        coeff = c * b_bar  # (channels, N)
        # powers A_bar^0..A_bar^{L-1} by cumulative product; matches the
        # recurrent path's repeated multiply and avoids L complex exps
        if length == 1:
            vandermonde = torch.ones_like(a_bar).unsqueeze(-1)
        else:
            powers = torch.cumprod(a_bar.unsqueeze(-1).expand(*a_bar.shape, length - 1), dim=-1)
            vandermonde = torch.cat([torch.ones_like(a_bar).unsqueeze(-1), powers], dim=-1)
        return torch.einsum("cn,cnl->cl", coeff, vandermonde).real

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.apply_conv(x)

    def apply_conv(self, x: torch.Tensor) -> torch.Tensor:
        """Causal FFT convolution with the materialized kernel plus D skip.

        x: (..., channels, L)."""
        length = x.shape[-1]
        kernel = self.materialize_kernel(length).to(x.dtype)
        n = next_pow2(2 * length)
        kf = torch.fft.rfft(kernel, n=n)
        xf = torch.fft.rfft(x, n=n)
        y = torch.fft.irfft(xf * kf, n=n)[..., :length]
        return y + self.d.unsqueeze(-1) * x

    def apply_recurrent(self, x: torch.Tensor) -> torch.Tensor:
        """Stepwise evaluation h_k = A_bar h_{k-1} + B_bar x_k, y_k = Re(C h_k) + D x_k.

        Reference path for equivalence checks; O(L * state_dim)."""
        a_bar, b_bar = self.discretize_zoh()
        c = torch.complex(self.c[..., 0], self.c[..., 1])
        length = x.shape[-1]
        xc = x.to(a_bar.dtype)
        h = torch.zeros(*x.shape[:-1], self.state_dim, dtype=a_bar.dtype)
        ys = []
        for k in range(length):
            h = a_bar * h + b_bar * xc[..., k].unsqueeze(-1)
            ys.append((c * h).sum(-1).real)
        y = torch.stack(ys, dim=-1)
        return y + self.d.unsqueeze(-1) * x.to(y.dtype)

    def retarget_rate(self, ratio: float) -> None:
        """Adjust the step size for a new sampling rate: dt' = dt / ratio
        with ratio = new_rate / old_rate. A, B, C, D are untouched. The
        ratio is snapped to a nearby rational so inverse retargets cancel
        exactly."""
        if ratio <= 0:
            raise ValueError("ratio must be positive")
        self.rate_ratio *= Fraction(ratio).limit_denominator(10**6)


class BidirectionalS4D(nn.Module):
    """Forward bank on the sequence plus a second bank on its reversal."""

    def __init__(self, channels: int, state_dim: int = 64, generator: torch.Generator | None = None):
        super().__init__()
        self.fwd = S4DBank(channels, state_dim, generator=generator)
        self.bwd = S4DBank(channels, state_dim, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return bidirectional_apply(self.fwd, self.bwd, x)

    def retarget_rate(self, ratio: float) -> None:
        self.fwd.retarget_rate(ratio)
        self.bwd.retarget_rate(ratio)


def bidirectional_apply(fwd: S4DBank, bwd: S4DBank, x: torch.Tensor) -> torch.Tensor:
    if fwd.state_dim != bwd.state_dim:
        raise ValueError("directions must share state_dim")
    return fwd.apply_conv(x) + bwd.apply_conv(x.flip(-1)).flip(-1)


def gated_pair_apply(
    gate: BidirectionalS4D, filt: BidirectionalS4D, x: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate two bidirectional banks on the same input with one FFT.

    flip-conv-flip for the backward direction equals correlation, which
    in the frequency domain is multiplication by the conjugate kernel, so
    all four convolutions share a single forward transform of x. Output
    matches (gate(x), filt(x)) up to rounding.
    """
    length = x.shape[-1]
    n = next_pow2(2 * length)
    xf = torch.fft.rfft(x, n=n)
    banks = (gate.fwd, filt.fwd, gate.bwd, filt.bwd)
    kf = torch.stack([torch.fft.rfft(b.materialize_kernel(length).to(x.dtype), n=n) for b in banks])
    kf = torch.cat([kf[:2], kf[2:].conj()])
    y = torch.fft.irfft(xf.unsqueeze(-3) * kf, n=n)[..., :length]
    g = y[..., 0, :, :] + y[..., 2, :, :] + (gate.fwd.d + gate.bwd.d).unsqueeze(-1) * x
    f = y[..., 1, :, :] + y[..., 3, :, :] + (filt.fwd.d + filt.bwd.d).unsqueeze(-1) * x
    return g, f


def init_diag_lin(
    state_dim: int,
    channels: int = 1,
    generator: torch.Generator | None = None,
) -> S4DBank:
    """Bank with diag-lin poles A_k = -1/2 + i pi k."""
    return S4DBank(channels=channels, state_dim=state_dim, generator=generator)
