"""Checkpoint format: JSON manifest (config + tensor index) plus raw
little-endian float32 blobs, one file per tensor. EMA weights are stored
alongside the raw weights under an `ema/` subdirectory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn


def _tensor_path(name: str) -> str:
    return name.replace("/", "_") + ".bin"


def save_state(
    ckpt_dir: Path | str,
    model: nn.Module,
    config: dict,
    ema_state: dict[str, torch.Tensor] | None = None,
    extra: dict | None = None,
) -> Path:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, tensor in model.state_dict().items():
        rel = _tensor_path(name)
        arr = tensor.detach().cpu().numpy().astype("<f4")
        arr.tofile(ckpt_dir / rel)
        index[name] = {"file": rel, "shape": list(tensor.shape), "dtype": "f32le"}
    if ema_state is not None:
        ema_dir = ckpt_dir / "ema"
        ema_dir.mkdir(exist_ok=True)
        for name, tensor in ema_state.items():
            tensor.detach().cpu().numpy().astype("<f4").tofile(ema_dir / _tensor_path(name))
    manifest = {
        "config": config,
        "tensors": index,
        "has_ema": ema_state is not None,
        "extra": extra or {},
    }
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return ckpt_dir


def load_manifest(ckpt_dir: Path | str) -> dict:
    return json.loads((Path(ckpt_dir) / "manifest.json").read_text())


def load_state(ckpt_dir: Path | str, model: nn.Module, use_ema: bool = False) -> dict:
    """Load tensors into `model`; returns the manifest."""
    ckpt_dir = Path(ckpt_dir)
    manifest = load_manifest(ckpt_dir)
    state = {}
    for name, info in manifest["tensors"].items():
        path = ckpt_dir / info["file"]
        if use_ema:
            ema_path = ckpt_dir / "ema" / info["file"]
            if ema_path.exists():
                path = ema_path
        arr = np.fromfile(path, dtype="<f4").reshape(info["shape"])
        state[name] = torch.from_numpy(arr.copy())
    target = {k: v for k, v in model.state_dict().items()}
    for name, tensor in state.items():
        state[name] = tensor.to(target[name].dtype) if name in target else tensor
    model.load_state_dict(state)
    return manifest
