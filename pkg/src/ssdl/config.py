"""Declarative run configuration: flat dotted-key JSON files with
command-line overrides, validated before any compute."""

from __future__ import annotations

import json
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 0,
    "threads": 0,  # 0 = leave torch's default
    "out.dir": "runs/default",
    "data.dir": "data/synth",
    # synthetic dataset
    "synth.n_per_class": 100,
    "synth.channels": 4,
    "synth.samples": 1000,
    "synth.rate": 200.0,
    "synth.test_per_class": 20,
    "synth.imbalance": "",  # e.g. "10:1:1"
    # backbone
    "backbone.n_layers": 4,
    "backbone.hidden": 32,
    "backbone.state_dim": 32,
    "backbone.embed_dim": 32,
    "backbone.step_mlp_hidden": 128,
    "backbone.T": 50,
    # diffusion
    "diffusion.schedule": "cosine",
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
    # pretraining
    "pretrain.lr": 1e-4,
    "pretrain.weight_decay": 0.0,
    "pretrain.beta1": 0.99,
    "pretrain.beta2": 0.999,
    "pretrain.clip_norm": 1.0,
    "pretrain.ema_decay": 0.999,
    "pretrain.epochs": 20,
    "pretrain.batch_size": 16,
    # latent extraction
    "extract.tap": "gate",
    "extract.pool": "std",
    "extract.mode": "noiseless",
    "extract.step": 1,
    "extract.pools": 0,  # 0 = one pool per second of signal
    # classifier
    "lft.encoder_blocks": 2,
    "lft.heads": 4,
    "lft.dim": 32,
    "lft.mlp_hidden": 64,
    "lft.n_tokens": 8,
    "lft.fusion": "base",
    "lft.layers": "all",
    # fine-tuning
    "finetune.peak_lr": 5e-4,
    "finetune.initial_lr": 1e-5,
    "finetune.floor_lr": 1e-6,
    "finetune.weight_decay": 0.05,
    "finetune.beta1": 0.9,
    "finetune.beta2": 0.98,
    "finetune.clip_norm": 3.0,
    "finetune.ema_decay": 0.999,
    "finetune.epochs": 50,
    "finetune.warmup_epochs": 5,
    "finetune.batch_size": 32,
    "finetune.smoothing": 0.1,
    "finetune.class_weights": False,
    "finetune.seeds": 3,
    # evaluation
    "eval.split": "test",
    "eval.resample_rate": 0.0,  # 0 = native rate
    # generation
    "generate.count": 4,
}

_CHOICES = {
    "diffusion.schedule": ("cosine", "linear"),
    "extract.tap": ("gate", "filter"),
    "extract.pool": ("std", "average", "avg"),
    "extract.mode": ("none", "noiseless"),
    "lft.fusion": ("base", "none", "mean"),
}

_POSITIVE = (
    "backbone.n_layers",
    "backbone.hidden",
    "backbone.state_dim",
    "backbone.T",
    "pretrain.epochs",
    "pretrain.batch_size",
    "pretrain.clip_norm",
    "finetune.epochs",
    "finetune.batch_size",
    "finetune.clip_norm",
    "synth.channels",
    "synth.samples",
    "synth.rate",
)


class RunConfig:
    """Flat dotted-key configuration; file values override defaults and
    --set flags override the file."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for key, val in values.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                self.values[key] = val
        self.validate()

    @classmethod
    def from_sources(cls, config_file: str | None, overrides: list[str]) -> "RunConfig":
        merged: dict[str, object] = {}
        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise ConfigError(f"config file {config_file} not found")
            try:
                merged.update(json.loads(path.read_text()))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {config_file}: {exc}") from exc
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must be key=value")
            key, raw = item.split("=", 1)
            merged[key.strip()] = _parse_value(raw.strip())
        return cls(merged)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def validate(self) -> None:
        for key, choices in _CHOICES.items():
            if self.values[key] not in choices:
                raise ConfigError(f"{key} must be one of {choices}, got {self.values[key]!r}")
        for key in _POSITIVE:
            try:
                if float(self.values[key]) <= 0:
                    raise ConfigError(f"{key} must be positive")
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key} must be numeric") from exc
        step = int(self.values["extract.step"])
        if self.values["extract.mode"] == "noiseless" and not (
            1 <= step <= int(self.values["backbone.T"])
        ):
            raise ConfigError("extract.step must lie in [1, backbone.T] for noiseless mode")
        if self.values["extract.pool"] == "avg":
            self.values["extract.pool"] = "average"

    def dump(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.values, indent=1, sort_keys=True) + "\n")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw
