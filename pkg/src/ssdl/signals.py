"""Signal preprocessing: companding, filtering, resampling, segmentation.

The ingestion order is fixed: band-pass + notch filter at the raw rate,
resample to the target rate, amplitude scaling, windowing into
fixed-length segments, then mu-law companding.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .segio import SegmentBatch

MU = 255.0
TARGET_RATE = 200.0
AMPLITUDE_DIVISOR = 100.0
WINDOW_SECONDS = 5.0
BAND_LOW_HZ = 0.1
BAND_HIGH_HZ = 75.0
NOTCH_HZ = 50.0
NOTCH_Q = 30.0
# Band-pass order: 8 per edge. A 4th-order edge leaves a 100 Hz tone only
# ~10 dB down at the filter itself, which is not enough stop-band margin.
BANDPASS_ORDER = 8


def mu_law_compand(x, mu: float = MU):
    """Compress magnitudes above 1; identity inside [-1, 1].

    Odd, continuous at |x| = 1, monotonically increasing.
    """
    x = np.asarray(x)
    if np.any(np.isnan(x)):
        raise ValueError("NaN input to mu_law_compand")
    ax = np.abs(x)
    compressed = np.sign(x) * np.log1p(mu * ax) / np.log1p(mu)
    return np.where(ax <= 1.0, x, compressed)


def bandpass_notch_sos(rate: float) -> np.ndarray:
    """Cascaded biquads: Butterworth band-pass plus 50 Hz notch."""
    high = min(BAND_HIGH_HZ, 0.49 * rate)
    sos = sps.butter(BANDPASS_ORDER, [BAND_LOW_HZ, high], btype="band", fs=rate, output="sos")
    if NOTCH_HZ < 0.5 * rate:
        b, a = sps.iirnotch(NOTCH_HZ, NOTCH_Q, fs=rate)
        sos = np.vstack([sos, sps.tf2sos(b, a)])
    return sos


def filter_signal(raw: np.ndarray, rate: float) -> np.ndarray:
    """Causal (forward-only) band-pass + notch filtering along the last axis."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    return sps.sosfilt(bandpass_notch_sos(rate), np.asarray(raw, dtype=np.float64), axis=-1)


def resample_signal(x: np.ndarray, old_rate: float, new_rate: float) -> np.ndarray:
    """Polyphase resampling along the last axis."""
    if new_rate <= 0 or old_rate <= 0:
        raise ValueError("rates must be positive")
    if new_rate == old_rate:
        return np.asarray(x)
    from fractions import Fraction

    frac = Fraction(new_rate / old_rate).limit_denominator(1000)
    return sps.resample_poly(np.asarray(x, dtype=np.float64), frac.numerator, frac.denominator, axis=-1)


def segment_signal(x: np.ndarray, rate: float, window_seconds: float = WINDOW_SECONDS) -> np.ndarray:
    """Split (channels, samples) into (segments, channels, window) non-overlapping windows."""
    window = int(round(window_seconds * rate))
    if x.shape[-1] < window:
        raise ValueError(f"signal shorter than one {window}-sample window")
    return _segment(np.asarray(x), window)


def _segment(x: np.ndarray, window: int) -> np.ndarray:
    n = x.shape[-1] // window
    if n < 1:
        raise ValueError("signal shorter than one window")
    trimmed = x[..., : n * window]
    if x.ndim == 1:
        return trimmed.reshape(n, 1, window)
    segs = trimmed.reshape(x.shape[0], n, window)
    return np.ascontiguousarray(segs.transpose(1, 0, 2))


def preprocess(
    raw: np.ndarray,
    raw_rate: float,
    target_rate: float = TARGET_RATE,
    window_seconds: float = WINDOW_SECONDS,
    labels: np.ndarray | int = 0,
) -> SegmentBatch:
    """Filter, resample, scale, segment, and compand a raw recording.

    raw: (channels, samples) in microvolt-like units.
    labels: one label for all produced segments, or one per segment.
    """
    if raw_rate <= 0:
        raise ValueError("raw_rate must be positive")
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    filtered = filter_signal(raw, raw_rate)
    resampled = resample_signal(filtered, raw_rate, target_rate)
    scaled = resampled / AMPLITUDE_DIVISOR
    segments = _segment(scaled, int(round(window_seconds * target_rate)))
    companded = mu_law_compand(segments)
    n = companded.shape[0]
    labels = np.full(n, labels) if np.isscalar(labels) else np.asarray(labels)
    return SegmentBatch(
        signals=companded.astype(np.float32),
        labels=labels,
        sample_rate=target_rate,
        channel_ids=np.arange(raw.shape[0]),
    )


def resample_batch(batch: SegmentBatch, new_rate: float) -> SegmentBatch:
    """Resample every segment in a batch; L scales by new_rate/old_rate."""
    if new_rate <= 0:
        raise ValueError("new_rate must be positive")
    if new_rate == batch.sample_rate:
        return batch
    new_len = int(round(batch.num_samples * new_rate / batch.sample_rate))
    if new_len < 2:
        raise ValueError("resampled segments would be shorter than 2 samples")
    out = resample_signal(batch.signals, batch.sample_rate, new_rate)
    # polyphase output length can differ by one sample from the rounded target
    if out.shape[-1] < new_len:
        out = np.pad(out, [(0, 0)] * (out.ndim - 1) + [(0, new_len - out.shape[-1])])
    out = out[..., :new_len]
    return SegmentBatch(
        signals=out.astype(np.float32),
        labels=batch.labels,
        sample_rate=new_rate,
        channel_ids=batch.channel_ids,
    )
