"""Numerical substrate: FFT helpers, seeding, and a finite-difference gradient oracle.

Dense arrays and reverse-mode differentiation are delegated to torch;
this module pins down the conventions the rest of the package relies on
(power-of-two FFT lengths, float32 training / float64 checking) and
provides the independent central-difference checker used to validate
every analytic gradient.
"""

from __future__ import annotations

from typing import Callable, Iterable

import torch


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n < 1:
        raise ValueError("n must be positive")
    return 1 << (n - 1).bit_length()


def fft_forward(signal: torch.Tensor, length: int | None = None) -> torch.Tensor:
    """DFT of a complex vector, zero-padded to `length` (a power of two).

    `length` defaults to next_pow2(len(signal)).
    """
    if signal.numel() == 0:
        raise ValueError("zero-length input")
    n = signal.shape[-1]
    if length is None:
        length = next_pow2(n)
    if length < n:
        raise ValueError(f"length {length} < signal length {n}")
    if length & (length - 1):
        raise ValueError(f"length {length} is not a power of two")
    return torch.fft.fft(signal, n=length, dim=-1)


def fft_inverse(spectrum: torch.Tensor) -> torch.Tensor:
    if spectrum.numel() == 0:
        raise ValueError("zero-length input")
    return torch.fft.ifft(spectrum, dim=-1)


def seed_all(seed: int) -> torch.Generator:
    """Seed torch's global RNG and return a dedicated generator."""
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def finite_difference_grad(
    loss_fn: Callable[[], torch.Tensor],
    param: torch.Tensor,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Central-difference gradient of `loss_fn` wrt `param`, one coordinate at a time.

    `loss_fn` must re-evaluate the loss from current parameter values.
    Intended for float64 parameters; the perturbation is applied in place
    under no_grad and restored exactly.
    """
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
        lp = float(loss_fn().detach())
        with torch.no_grad():
            flat[i] = orig - eps
        lm = float(loss_fn().detach())
        with torch.no_grad():
            flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * eps)
    return grad


def check_gradients(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[tuple[str, torch.Tensor]],
    eps: float = 1e-5,
    rtol: float = 1e-3,
    atol: float = 1e-7,
) -> dict[str, float]:
    """Compare autograd gradients with central finite differences.

    Returns per-parameter worst relative error; raises AssertionError on
    the first parameter whose gradient disagrees beyond rtol.
    """
    params = list(params)
    for _, p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    worst: dict[str, float] = {}
    for name, p in params:
        analytic = p.grad.clone() if p.grad is not None else torch.zeros_like(p)
        numeric = finite_difference_grad(loss_fn, p, eps=eps)
        denom = numeric.abs().clamp_min(atol / rtol)
        rel = ((analytic - numeric).abs() / denom).max().item()
        worst[name] = rel
        assert rel < rtol, (
            f"gradient mismatch for {name}: rel err {rel:.3e} "
            f"(analytic vs central differences, eps={eps})"
        )
    return worst
