"""Training loops for both stages: diffusion pretraining of the backbone
and supervised fine-tuning of the fusion classifier with a frozen
backbone. Logs JSON-lines records and writes checkpoints with EMA
weights alongside the raw weights."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .diffusion import NoiseSchedule, diffusion_loss
from .metrics import cohen_kappa, confusion_matrix, predict_labels
from .optim import EMA, AdamW, OptimConfig, clip_by_global_norm, one_cycle_lr, smoothed_weighted_ce


@dataclass
class TrainLog:
    path: Path | None = None
    records: list[dict] = field(default_factory=list)

    def append(self, **record) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def _iter_batches(n: int, batch_size: int, generator: torch.Generator | None, shuffle: bool = True):
    order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def rows_from_segments(signals: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(batch, C, L) segments -> (batch*C, L) rows with per-row channel ids."""
    b, c, l = signals.shape
    rows = signals.reshape(b * c, l)
    channel_ids = torch.arange(c).repeat(b)
    return rows, channel_ids


def pretrain(
    model,
    train_signals: torch.Tensor,
    valid_signals: torch.Tensor | None,
    sched: NoiseSchedule,
    cfg: OptimConfig,
    out_dir: Path | str,
    seed: int = 0,
    log: TrainLog | None = None,
    start_step: int = 0,
) -> Path:
    """Velocity-prediction pretraining; runs the full epoch budget and
    keeps the final EMA checkpoint. Returns the checkpoint directory."""
    if train_signals.numel() == 0:
        raise ValueError("empty training split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = log or TrainLog(out_dir / "train_log.jsonl")
    gen = torch.Generator()
    gen.manual_seed(seed)
    opt = AdamW(model.named_parameters(), cfg)
    ema = EMA(model, cfg.ema_decay)
    step = start_step
    n = train_signals.shape[0]
    for epoch in range(cfg.epochs):
        model.train()
        for idx in _iter_batches(n, cfg.batch_size, gen):
            rows, channel_ids = rows_from_segments(train_signals[idx])
            opt.zero_grad()
            loss = diffusion_loss(model, rows, channel_ids, sched, generator=gen)
            if not torch.isfinite(loss):
                raise FloatingPointError("non-finite pretraining loss")
            loss.backward()
            clip_by_global_norm([p for _, p in opt.params], cfg.clip_norm)
            opt.step()
            ema.update(model)
            step += 1
            log.append(epoch=epoch, step=step, lr=cfg.lr, loss=float(loss.detach()))
        val = None
        if valid_signals is not None and valid_signals.numel():
            val = evaluate_diffusion_loss(model, valid_signals, sched, seed=seed)
            log.append(epoch=epoch, step=step, lr=cfg.lr, loss=None, val_metric=val)
    ckpt.save_state(
        out_dir / "checkpoint",
        model,
        config={"stage": "pretrain", "epochs": cfg.epochs},
        ema_state=ema.state(),
        extra={"step": step, "seed": seed},
    )
    return out_dir / "checkpoint"


@torch.no_grad()
def evaluate_diffusion_loss(model, signals: torch.Tensor, sched: NoiseSchedule, seed: int = 0) -> float:
    gen = torch.Generator()
    gen.manual_seed(seed + 9999)
    model.eval()
    losses = []
    for idx in _iter_batches(signals.shape[0], 32, None, shuffle=False):
        rows, channel_ids = rows_from_segments(signals[idx])
        losses.append(float(diffusion_loss(model, rows, channel_ids, sched, generator=gen)))
    return float(np.mean(losses))


@dataclass
class FinetuneResult:
    best_state: dict
    best_ema_state: dict
    best_epoch: int
    best_kappa: float
    history: list[dict]


def finetune(
    model,
    train_latents: torch.Tensor,
    train_labels: torch.Tensor,
    valid_latents: torch.Tensor,
    valid_labels: torch.Tensor,
    cfg: OptimConfig,
    num_classes: int,
    seed: int = 0,
    smoothing: float = 0.1,
    class_weights: torch.Tensor | None = None,
    patience: int = 3,
    min_epochs_before_stop: int = 20,
    log: TrainLog | None = None,
) -> FinetuneResult:
    """Supervised training with one-cycle LR, EMA, early stopping on
    validation kappa after `min_epochs_before_stop`, and best-checkpoint
    selection over recorded validation kappas."""
    if train_latents.shape[0] == 0:
        raise ValueError("empty training split")
    log = log or TrainLog()
    gen = torch.Generator()
    gen.manual_seed(seed)
    no_decay = {n for n, _ in model.named_parameters() if "fusion_tokens" in n}
    opt = AdamW(model.named_parameters(), cfg, no_decay=no_decay)
    ema = EMA(model, cfg.ema_decay)
    n = train_latents.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs

    step = 0
    history: list[dict] = []
    best = FinetuneResult({}, {}, -1, -math.inf, history)
    stale = 0
    for epoch in range(cfg.epochs):
        model.train()
        for idx in _iter_batches(n, cfg.batch_size, gen):
            lr = (
                one_cycle_lr(min(step, total_steps), total_steps, cfg, warmup_steps)
                if cfg.schedule == "one_cycle"
                else cfg.lr
            )
            opt.zero_grad()
            logits = model(train_latents[idx])
            loss = smoothed_weighted_ce(logits, train_labels[idx], smoothing, class_weights)
            if not torch.isfinite(loss):
                raise FloatingPointError("non-finite fine-tuning loss")
            loss.backward()
            clip_by_global_norm([p for _, p in opt.params], cfg.clip_norm)
            opt.step(lr=lr)
            ema.update(model)
            step += 1
            log.append(epoch=epoch, step=step, lr=lr, loss=float(loss.detach()))
        kappa = evaluate_kappa(model, valid_latents, valid_labels, num_classes)
        history.append({"epoch": epoch, "val_kappa": kappa})
        log.append(epoch=epoch, step=step, lr=None, loss=None, val_metric=kappa)
        if kappa > best.best_kappa:
            best.best_kappa = kappa
            best.best_epoch = epoch
            best.best_state = copy.deepcopy(model.state_dict())
            best.best_ema_state = copy.deepcopy(ema.state())
            stale = 0
        else:
            stale += 1
        if epoch + 1 > min_epochs_before_stop and stale >= patience:
            break
    return best


@torch.no_grad()
def evaluate_kappa(model, latents: torch.Tensor, labels: torch.Tensor, num_classes: int) -> float:
    model.eval()
    probs = predict_probabilities(model, latents)
    cm = confusion_matrix(labels.numpy(), predict_labels(probs), num_classes)
    return cohen_kappa(cm)


@torch.no_grad()
def predict_probabilities(model, latents: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    model.eval()
    outs = []
    for start in range(0, latents.shape[0], batch_size):
        outs.append(model.probabilities(latents[start : start + batch_size]).numpy())
    return np.concatenate(outs)
