"""Synthetic multichannel dataset generation.

Classes are defined by recipes with distinguishable spectral structure
(oscillation bands, transient spike trains, broadband noise) so that
band-power features separate them linearly. Generation is deterministic
given a seed and writes segment files plus a manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .segio import DatasetManifest, write_segment
from .signals import mu_law_compand


@dataclass
class ClassRecipe:
    name: str
    # oscillation band in Hz; each segment draws a few tones from it
    band: tuple[float, float] | None = None
    osc_amplitude: float = 80.0  # microvolt-like, pre /100 scaling
    n_tones: int = 2
    # optional transient spike train
    spike_rate_hz: float = 0.0
    spike_amplitude: float = 0.0
    spike_width_s: float = 0.02
    noise_amplitude: float = 10.0


DEFAULT_RECIPES = [
    ClassRecipe("slow", band=(3.0, 6.0)),
    ClassRecipe("mid", band=(9.0, 14.0)),
    ClassRecipe("fast", band=(24.0, 36.0)),
]


def _spike_kernel(width_s: float, rate: float) -> np.ndarray:
    half = max(int(width_s * rate), 2)
    t = np.arange(-half, half + 1) / rate
    return np.exp(-0.5 * (t / (width_s / 2)) ** 2)


def generate_segment(
    recipe: ClassRecipe, channels: int, samples: int, rate: float, rng: np.random.Generator
) -> np.ndarray:
    """One (channels, samples) segment in microvolt-like units."""
    t = np.arange(samples) / rate
    out = rng.normal(0.0, recipe.noise_amplitude, size=(channels, samples))
    if recipe.band is not None:
        lo, hi = recipe.band
        for c in range(channels):
            for _ in range(recipe.n_tones):
                f = rng.uniform(lo, hi)
                phase = rng.uniform(0, 2 * np.pi)
                amp = recipe.osc_amplitude * rng.uniform(0.7, 1.3) / recipe.n_tones
                out[c] += amp * np.sin(2 * np.pi * f * t + phase)
    if recipe.spike_rate_hz > 0 and recipe.spike_amplitude > 0:
        kernel = _spike_kernel(recipe.spike_width_s, rate)
        n_spikes = rng.poisson(recipe.spike_rate_hz * samples / rate)
        for c in range(channels):
            train = np.zeros(samples)
            for _ in range(max(n_spikes, 1)):
                pos = rng.integers(0, samples)
                train[pos] = recipe.spike_amplitude * rng.choice([-1.0, 1.0])
            out[c] += np.convolve(train, kernel, mode="same")
    return out


def synth_dataset(
    out_dir: Path | str,
    recipes: list[ClassRecipe] | None = None,
    n_per_class: int | list[int] = 100,
    channels: int = 4,
    samples: int = 1000,
    rate: float = 200.0,
    seed: int = 0,
    train_fraction: float = 0.8,
    test_per_class: int = 0,
) -> DatasetManifest:
    """Generate a labelled dataset on disk and return its manifest.

    Amplitudes follow the microvolt convention: signals are divided by
    100 and companded before writing, matching the ingestion pipeline.
    n_per_class may be a list for deliberate class imbalance.
    """
    recipes = recipes if recipes is not None else DEFAULT_RECIPES
    if not recipes:
        raise ValueError("empty recipe list")
    if len(recipes) < 2:
        raise ValueError("need at least 2 classes")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = [n_per_class] * len(recipes) if np.isscalar(n_per_class) else list(n_per_class)
    if len(counts) != len(recipes):
        raise ValueError("n_per_class list must match recipe count")

    rng = np.random.default_rng(seed)
    splits: dict[str, list[str]] = {"train": [], "valid": [], "test": []}
    histogram = {s: [0] * len(recipes) for s in splits}
    for label, (recipe, count) in enumerate(zip(recipes, counts)):
        n_train = int(round(count * train_fraction))
        plan = ["train"] * n_train + ["valid"] * (count - n_train) + ["test"] * test_per_class
        for idx, split in enumerate(plan):
            raw = generate_segment(recipe, channels, samples, rate, rng)
            sig = mu_law_compand(raw / 100.0).astype(np.float32)
            fname = f"{recipe.name}_{label}_{split}_{idx:05d}.seg"
            write_segment(out_dir / fname, sig, label, rate)
            splits[split].append(fname)
            histogram[split][label] += 1

    manifest = DatasetManifest(
        root=out_dir,
        splits=splits,
        num_classes=len(recipes),
        class_histogram=histogram,
        sample_rate=rate,
        channels=channels,
        samples=samples,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def band_power_features(signals: np.ndarray, rate: float, bands: list[tuple[float, float]]) -> np.ndarray:
    """Mean periodogram power per band; (batch, C, L) -> (batch, len(bands))."""
    spec = np.abs(np.fft.rfft(signals, axis=-1)) ** 2
    freqs = np.fft.rfftfreq(signals.shape[-1], d=1.0 / rate)
    feats = []
    for lo, hi in bands:
        mask = (freqs >= lo) & (freqs < hi)
        feats.append(spec[..., mask].mean(axis=(-1, -2)))
    return np.stack(feats, axis=-1)
