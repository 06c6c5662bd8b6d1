"""Temporal pooling of latent activities into fusion tokens.

A latent tensor (C, n, L, H) is reduced along time into (C, n, p, H) by
averaging or population standard deviation over p equal windows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

POOL_KINDS = ("average", "std")


def pool(latents: torch.Tensor, p: int, kind: str = "std") -> torch.Tensor:
    """Pool the time axis (second to last) into p windows.

    latents: (..., L, H) -> (..., p, H). Windows are non-overlapping and
    equal sized; L must be divisible by p. Std is the population form
    (divide by window), which is zero for a window of one.
    """
    if kind not in POOL_KINDS:
        raise ValueError(f"kind must be one of {POOL_KINDS}")
    length = latents.shape[-2]
    if p < 1 or length % p:
        raise ValueError(f"time axis {length} not divisible by p={p}")
    window = length // p
    shaped = latents.reshape(*latents.shape[:-2], p, window, latents.shape[-1])
    mean = shaped.mean(dim=-2)
    if kind == "average":
        return mean
    # explicit two-pass population std; unlike torch.std the summation
    # order is fixed, so window-permutation invariance is exact
    var = ((shaped - mean.unsqueeze(-2)) ** 2).mean(dim=-2)
    return torch.sqrt(var)


@dataclass
class LatentCacheMeta:
    channels: int
    layers: int
    pools: int
    hidden: int
    pool_kind: str
    tap: str
    mode: str
    step: int
    num_segments: int = 0
    sample_rate: float = 200.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def save_latent_cache(
    out_dir: Path | str,
    pooled: np.ndarray,
    labels: np.ndarray,
    meta: LatentCacheMeta,
) -> None:
    """Pooled latents (segments, C, n, p, H) as a float32 blob + JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pooled = np.asarray(pooled, dtype=np.float32)
    meta.num_segments = pooled.shape[0]
    (out_dir / "meta.json").write_text(json.dumps(meta.to_json(), indent=1) + "\n")
    with open(out_dir / "latents.bin", "wb") as fh:
        fh.write(pooled.astype("<f4").tobytes())
    np.asarray(labels, dtype=np.int64).tofile(out_dir / "labels.bin")


def load_latent_cache(cache_dir: Path | str) -> tuple[np.ndarray, np.ndarray, LatentCacheMeta]:
    cache_dir = Path(cache_dir)
    meta = LatentCacheMeta(**json.loads((cache_dir / "meta.json").read_text()))
    shape = (meta.num_segments, meta.channels, meta.layers, meta.pools, meta.hidden)
    pooled = np.fromfile(cache_dir / "latents.bin", dtype="<f4").reshape(shape)
    labels = np.fromfile(cache_dir / "labels.bin", dtype=np.int64)
    return pooled, labels, meta
