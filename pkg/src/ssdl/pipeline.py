"""High-level pipeline stages shared by the CLI and the test harness:
dataset synthesis, diffusion pretraining, latent extraction, classifier
fine-tuning, evaluation, and generation."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .backbone import SSMDP, SSMDPConfig
from .config import RunConfig
from .diffusion import NoiseSchedule, ancestral_sample, cosine_schedule, extraction_input, linear_schedule
from .lft import LFT, LFTConfig, layer_subset, parse_layer_subset
from .metrics import metric_report, save_report
from .optim import OptimConfig, balanced_class_weights
from .pooling import LatentCacheMeta, load_latent_cache, pool, save_latent_cache
from .segio import DatasetManifest, SegmentBatch, load_split, write_segment
from .signals import resample_batch
from .synth import ClassRecipe, DEFAULT_RECIPES, synth_dataset
from .trainer import finetune, predict_probabilities, pretrain

SPLITS = ("train", "valid", "test")


def apply_threads(cfg: RunConfig) -> None:
    threads = int(cfg["threads"])
    if threads > 0:
        torch.set_num_threads(threads)


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    T = int(cfg["backbone.T"])
    if cfg["diffusion.schedule"] == "linear":
        return linear_schedule(T, float(cfg["diffusion.beta_start"]), float(cfg["diffusion.beta_end"]))
    return cosine_schedule(T)


def build_backbone(cfg: RunConfig, num_channels: int) -> SSMDP:
    bcfg = SSMDPConfig(
        n_layers=int(cfg["backbone.n_layers"]),
        hidden=int(cfg["backbone.hidden"]),
        state_dim=int(cfg["backbone.state_dim"]),
        embed_dim=int(cfg["backbone.embed_dim"]),
        step_mlp_hidden=int(cfg["backbone.step_mlp_hidden"]),
        num_signal_channels=num_channels,
        T=int(cfg["backbone.T"]),
        tap=str(cfg["extract.tap"]),
    )
    return SSMDP(bcfg)


def run_synth(cfg: RunConfig) -> DatasetManifest:
    counts: int | list[int] = int(cfg["synth.n_per_class"])
    recipes = list(DEFAULT_RECIPES)
    imbalance = str(cfg["synth.imbalance"])
    if imbalance:
        ratios = [float(x) for x in imbalance.split(":")]
        if len(ratios) != len(recipes):
            raise ValueError(f"imbalance needs {len(recipes)} terms")
        base = int(cfg["synth.n_per_class"])
        scale = base / max(ratios)
        counts = [max(1, int(round(r * scale))) for r in ratios]
    return synth_dataset(
        out_dir=cfg["data.dir"],
        recipes=recipes,
        n_per_class=counts,
        channels=int(cfg["synth.channels"]),
        samples=int(cfg["synth.samples"]),
        rate=float(cfg["synth.rate"]),
        seed=int(cfg["seed"]),
        test_per_class=int(cfg["synth.test_per_class"]),
    )


def load_signals(cfg: RunConfig, split: str) -> SegmentBatch:
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    return load_split(manifest, split)


def run_pretrain(cfg: RunConfig, resume: Path | None = None) -> Path:
    apply_threads(cfg)
    seed_everything(int(cfg["seed"]))
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    train = torch.from_numpy(load_split(manifest, "train").signals)
    valid = torch.from_numpy(load_split(manifest, "valid").signals)
    model = build_backbone(cfg, manifest.channels)
    start_step = 0
    if resume is not None:
        manifest_json = ckpt.load_state(resume, model)
        start_step = int(manifest_json.get("extra", {}).get("step", 0))
    sched = build_schedule(cfg)
    ocfg = OptimConfig(
        lr=float(cfg["pretrain.lr"]),
        weight_decay=float(cfg["pretrain.weight_decay"]),
        beta1=float(cfg["pretrain.beta1"]),
        beta2=float(cfg["pretrain.beta2"]),
        clip_norm=float(cfg["pretrain.clip_norm"]),
        ema_decay=float(cfg["pretrain.ema_decay"]),
        epochs=int(cfg["pretrain.epochs"]),
        batch_size=int(cfg["pretrain.batch_size"]),
    )
    out_dir = Path(cfg["out.dir"]) / "pretrain"
    path = pretrain(model, train, valid, sched, ocfg, out_dir, seed=int(cfg["seed"]), start_step=start_step)
    sched.dump_csv(out_dir / "schedule.csv")
    from .plots import plot_schedule, plot_training_log

    plot_schedule(sched, out_dir / "schedule.png")
    log_path = out_dir / "train_log.jsonl"
    if log_path.exists():
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        plot_training_log(records, out_dir / "train_log.png")
    return path


def load_backbone(cfg: RunConfig, checkpoint_dir: Path, num_channels: int, use_ema: bool = True) -> SSMDP:
    model = build_backbone(cfg, num_channels)
    ckpt.load_state(checkpoint_dir, model, use_ema=use_ema)
    model.eval()
    return model


def default_pools(samples: int, rate: float) -> int:
    return max(1, int(round(samples / rate)))


@torch.no_grad()
def extract_pooled(
    model: SSMDP,
    signals: torch.Tensor,
    sched: NoiseSchedule,
    mode: str,
    step: int,
    pool_kind: str,
    pools: int,
    chunk: int = 8,
) -> torch.Tensor:
    """(segments, C, L) -> pooled latents (segments, C, n, p, H)."""
    b, c, length = signals.shape
    if length % pools:
        trimmed = pools * (length // pools)
        signals = signals[..., :trimmed]
        length = trimmed
    channel_ids = torch.arange(c).repeat(chunk)
    outs = []
    for start in range(0, b, chunk):
        batch = signals[start : start + chunk]
        rows = batch.reshape(-1, length)
        ids = channel_ids[: rows.shape[0]]
        x, t = extraction_input(rows, mode, step, sched)
        latents = model.collect_latents(x, t, ids)  # (rows, n, L, H)
        pooled = pool(latents, pools, pool_kind)
        n, p, h = pooled.shape[1:]
        outs.append(pooled.reshape(batch.shape[0], c, n, p, h))
    return torch.cat(outs)


def extract_tag(cfg: RunConfig, rate: float | None = None) -> str:
    tag = f"{cfg['extract.tap']}_{cfg['extract.pool']}_{cfg['extract.mode']}{cfg['extract.step']}"
    if rate:
        tag += f"_r{int(rate)}"
    return tag


def run_extract(cfg: RunConfig, backbone_ckpt: Path | None = None) -> Path:
    """Extract pooled latents for every split; reuses an existing cache
    whose metadata matches."""
    apply_threads(cfg)
    seed_everything(int(cfg["seed"]))
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    backbone_ckpt = backbone_ckpt or Path(cfg["out.dir"]) / "pretrain" / "checkpoint"
    if not Path(backbone_ckpt).exists():
        raise FileNotFoundError(f"backbone checkpoint {backbone_ckpt} not found")
    model = load_backbone(cfg, backbone_ckpt, manifest.channels)
    model.set_tap(str(cfg["extract.tap"]))
    sched = build_schedule(cfg)
    pools = int(cfg["extract.pools"]) or default_pools(manifest.samples, manifest.sample_rate)
    cache_root = Path(cfg["out.dir"]) / "extract" / extract_tag(cfg)
    for split in SPLITS:
        if not manifest.splits.get(split):
            continue
        split_dir = cache_root / split
        if _cache_valid(split_dir, cfg, pools):
            continue
        batch = load_split(manifest, split)
        pooled = extract_pooled(
            model,
            torch.from_numpy(batch.signals),
            sched,
            str(cfg["extract.mode"]),
            int(cfg["extract.step"]),
            str(cfg["extract.pool"]),
            pools,
        )
        meta = LatentCacheMeta(
            channels=batch.num_channels,
            layers=model.cfg.n_layers,
            pools=pools,
            hidden=model.cfg.hidden,
            pool_kind=str(cfg["extract.pool"]),
            tap=str(cfg["extract.tap"]),
            mode=str(cfg["extract.mode"]),
            step=int(cfg["extract.step"]),
            sample_rate=batch.sample_rate,
        )
        save_latent_cache(split_dir, pooled.numpy(), batch.labels, meta)
    return cache_root


def _cache_valid(split_dir: Path, cfg: RunConfig, pools: int) -> bool:
    meta_path = split_dir / "meta.json"
    if not meta_path.exists() or not (split_dir / "latents.bin").exists():
        return False
    meta = json.loads(meta_path.read_text())
    return (
        meta.get("tap") == cfg["extract.tap"]
        and meta.get("pool_kind") == cfg["extract.pool"]
        and meta.get("mode") == cfg["extract.mode"]
        and meta.get("step") == int(cfg["extract.step"])
        and meta.get("pools") == pools
    )


def build_lft(cfg: RunConfig, meta: LatentCacheMeta, num_classes: int, n_layers: int) -> LFT:
    lcfg = LFTConfig(
        fusion_blocks=n_layers,
        encoder_blocks=int(cfg["lft.encoder_blocks"]),
        heads=int(cfg["lft.heads"]),
        dim=int(cfg["lft.dim"]),
        mlp_hidden=int(cfg["lft.mlp_hidden"]),
        n_tokens=int(cfg["lft.n_tokens"]),
        num_classes=num_classes,
        pools=meta.pools,
        channels=meta.channels,
        latent_hidden=meta.hidden,
        fusion=str(cfg["lft.fusion"]),
    )
    if lcfg.fusion != "base":
        from .lft import variant_config

        lcfg = variant_config(lcfg, lcfg.fusion)
    return LFT(lcfg)


def finetune_optim_config(cfg: RunConfig) -> OptimConfig:
    return OptimConfig(
        lr=float(cfg["finetune.peak_lr"]),
        weight_decay=float(cfg["finetune.weight_decay"]),
        beta1=float(cfg["finetune.beta1"]),
        beta2=float(cfg["finetune.beta2"]),
        clip_norm=float(cfg["finetune.clip_norm"]),
        ema_decay=float(cfg["finetune.ema_decay"]),
        schedule="one_cycle",
        peak_lr=float(cfg["finetune.peak_lr"]),
        initial_lr=float(cfg["finetune.initial_lr"]),
        floor_lr=float(cfg["finetune.floor_lr"]),
        warmup_epochs=int(cfg["finetune.warmup_epochs"]),
        epochs=int(cfg["finetune.epochs"]),
        batch_size=int(cfg["finetune.batch_size"]),
    )


def run_finetune(cfg: RunConfig, cache_root: Path | None = None) -> dict:
    """Train the classifier over cached latents for several seeds; report
    mean and std per metric and keep the best seed's weights."""
    apply_threads(cfg)
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    cache_root = cache_root or run_extract(cfg)
    train_lat, train_lab, meta = load_latent_cache(cache_root / "train")
    valid_lat, valid_lab, _ = load_latent_cache(cache_root / "valid")
    subset = parse_layer_subset(str(cfg["lft.layers"]), meta.layers)

    train_t = torch.from_numpy(train_lat)
    valid_t = torch.from_numpy(valid_lat)
    train_t = layer_subset(train_t, subset)
    valid_t = layer_subset(valid_t, subset)
    train_y = torch.from_numpy(train_lab)
    valid_y = torch.from_numpy(valid_lab)

    weights = None
    if bool(cfg["finetune.class_weights"]):
        counts = torch.bincount(train_y, minlength=manifest.num_classes)
        weights = balanced_class_weights(counts.clamp_min(1))

    has_test = bool(manifest.splits.get("test"))
    if has_test:
        test_lat, test_lab, _ = load_latent_cache(cache_root / "test")
        test_t = layer_subset(torch.from_numpy(test_lat), subset)

    ocfg = finetune_optim_config(cfg)
    out_dir = Path(cfg["out.dir"]) / "finetune" / f"{extract_tag(cfg)}_{cfg['lft.fusion']}_{cfg['lft.layers']}"
    out_dir.mkdir(parents=True, exist_ok=True)
    per_seed = []
    best_overall = None
    n_seeds = int(cfg["finetune.seeds"])
    for i in range(n_seeds):
        seed = int(cfg["seed"]) + i
        seed_everything(seed)
        model = build_lft(cfg, meta, manifest.num_classes, len(subset))
        model.set_input_stats(train_t)
        result = finetune(
            model,
            train_t,
            train_y,
            valid_t,
            valid_y,
            ocfg,
            manifest.num_classes,
            seed=seed,
            smoothing=float(cfg["finetune.smoothing"]),
            class_weights=weights,
        )
        model.load_state_dict(result.best_state)
        eval_lat, eval_lab = (test_t, test_lab) if has_test else (valid_t, valid_lab.numpy())
        probs = predict_probabilities(model, eval_lat)
        report = metric_report(np.asarray(eval_lab), probs, manifest.num_classes)
        report["seed"] = seed
        report["val_kappa"] = result.best_kappa
        per_seed.append(report)
        if best_overall is None or report["kappa"] > best_overall[0]:
            best_overall = (report["kappa"], model, result)

    summary = {"seeds": per_seed, "mean": {}, "std": {}}
    for key in ("kappa", "bacc", "wf1"):
        vals = [r[key] for r in per_seed]
        summary["mean"][key] = float(np.mean(vals))
        summary["std"][key] = float(np.std(vals))
    save_report(summary, out_dir / "metrics.json")
    _, best_model, best_result = best_overall
    ckpt.save_state(
        out_dir / "checkpoint",
        best_model,
        config={
            "stage": "finetune",
            "layers": subset,
            "fusion": cfg["lft.fusion"],
            "num_classes": manifest.num_classes,
        },
        ema_state=best_result.best_ema_state,
        extra={"best_epoch": best_result.best_epoch},
    )
    from .plots import plot_confusion

    plot_confusion(np.array(per_seed[0]["confusion"]), out_dir / "confusion.png")
    return summary


def run_eval(cfg: RunConfig, lft_ckpt: Path | None = None, backbone_ckpt: Path | None = None) -> dict:
    """Evaluate a trained classifier, optionally at a different sampling
    rate via step-size retargeting of the backbone."""
    apply_threads(cfg)
    seed_everything(int(cfg["seed"]))
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    backbone_ckpt = backbone_ckpt or Path(cfg["out.dir"]) / "pretrain" / "checkpoint"
    lft_ckpt = lft_ckpt or _latest_finetune_ckpt(cfg)
    model = load_backbone(cfg, backbone_ckpt, manifest.channels)
    model.set_tap(str(cfg["extract.tap"]))
    sched = build_schedule(cfg)

    split = str(cfg["eval.split"])
    batch = load_split(manifest, split)
    rate = float(cfg["eval.resample_rate"]) or batch.sample_rate
    if rate != batch.sample_rate:
        ratio = rate / batch.sample_rate
        batch = resample_batch(batch, rate)
        model.retarget_rate(ratio)
    pools = int(cfg["extract.pools"]) or default_pools(manifest.samples, manifest.sample_rate)
    pooled = extract_pooled(
        model,
        torch.from_numpy(batch.signals),
        sched,
        str(cfg["extract.mode"]),
        int(cfg["extract.step"]),
        str(cfg["extract.pool"]),
        pools,
    )

    lft_manifest = ckpt.load_manifest(lft_ckpt)
    subset = lft_manifest["config"].get("layers", list(range(model.cfg.n_layers)))
    num_classes = lft_manifest["config"].get("num_classes", manifest.num_classes)
    meta = LatentCacheMeta(
        channels=batch.num_channels,
        layers=model.cfg.n_layers,
        pools=pools,
        hidden=model.cfg.hidden,
        pool_kind=str(cfg["extract.pool"]),
        tap=str(cfg["extract.tap"]),
        mode=str(cfg["extract.mode"]),
        step=int(cfg["extract.step"]),
    )
    clf = build_lft(cfg, meta, num_classes, len(subset))
    ckpt.load_state(lft_ckpt, clf)
    pooled = layer_subset(pooled, list(subset))
    probs = predict_probabilities(clf, pooled)
    report = metric_report(batch.labels, probs, num_classes)
    report["split"] = split
    report["sample_rate"] = rate
    out_dir = Path(cfg["out.dir"]) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{split}_r{int(rate)}"
    save_report(report, out_dir / f"metrics_{tag}.json")
    from .plots import plot_confusion

    plot_confusion(np.array(report["confusion"]), out_dir / f"confusion_{tag}.png")
    return report


def _latest_finetune_ckpt(cfg: RunConfig) -> Path:
    root = Path(cfg["out.dir"]) / "finetune"
    candidates = sorted(root.glob("*/checkpoint"), key=lambda p: p.stat().st_mtime)
    if not candidates:
        raise FileNotFoundError(f"no fine-tuned checkpoint under {root}")
    return candidates[-1]


def run_generate(cfg: RunConfig, backbone_ckpt: Path | None = None) -> Path:
    """Ancestral sampling from the pretrained backbone; writes segment
    files, plot-ready CSVs, and figures."""
    apply_threads(cfg)
    gen = seed_everything(int(cfg["seed"]))
    manifest = DatasetManifest.load(Path(cfg["data.dir"]) / "manifest.json")
    backbone_ckpt = backbone_ckpt or Path(cfg["out.dir"]) / "pretrain" / "checkpoint"
    model = load_backbone(cfg, backbone_ckpt, manifest.channels)
    sched = build_schedule(cfg)
    out_dir = Path(cfg["out.dir"]) / "generate"
    out_dir.mkdir(parents=True, exist_ok=True)
    count = int(cfg["generate.count"])
    c, length = manifest.channels, manifest.samples
    samples = []
    for i in range(count):
        rows = ancestral_sample(
            model, sched, (c, length), torch.arange(c), generator=gen
        )
        samples.append(rows.numpy())
        write_segment(out_dir / f"generated_{i:03d}.seg", rows.numpy(), label=-1, rate=manifest.sample_rate)
    stacked = np.stack(samples)
    with open(out_dir / "waveforms.csv", "w") as fh:
        fh.write("sample,channel," + ",".join(f"x{j}" for j in range(length)) + "\n")
        for i in range(count):
            for ch in range(c):
                fh.write(f"{i},{ch}," + ",".join(f"{v:.6g}" for v in stacked[i, ch]) + "\n")
    sched.dump_csv(out_dir / "schedule.csv")
    from .plots import plot_schedule, plot_waveforms

    plot_schedule(sched, out_dir / "schedule.png")
    plot_waveforms(stacked, manifest.sample_rate, out_dir / "waveforms.png", title="generated segments")
    return out_dir
