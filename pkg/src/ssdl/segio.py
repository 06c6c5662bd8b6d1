"""On-disk segment format and dataset manifests.

A segment file is a single UTF-8 JSON header line
``{"channels":C,"samples":L,"rate":Hz,"label":int,"dtype":"f32le"}``
terminated by ``\\n``, followed by C*L little-endian float32 values in
channel-major order. The manifest is a JSON file listing relative
segment paths per split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_DTYPE = "f32le"


@dataclass
class SegmentBatch:
    """Fixed-length multichannel windows sharing geometry and rate.

    signals: float32 array (batch, channels, samples), normalized units.
    """

    signals: np.ndarray
    labels: np.ndarray
    sample_rate: float
    channel_ids: np.ndarray

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.channel_ids = np.asarray(self.channel_ids, dtype=np.int64)
        if self.signals.ndim != 3:
            raise ValueError("signals must be (batch, channels, samples)")
        if self.labels.shape[0] != self.signals.shape[0]:
            raise ValueError("labels/batch mismatch")
        if self.channel_ids.shape[0] != self.signals.shape[1]:
            raise ValueError("channel_ids/channels mismatch")

    @property
    def batch_size(self) -> int:
        return self.signals.shape[0]

    @property
    def num_channels(self) -> int:
        return self.signals.shape[1]

    @property
    def num_samples(self) -> int:
        return self.signals.shape[2]


@dataclass
class DatasetManifest:
    """Relative segment paths per split plus label bookkeeping."""

    root: Path
    splits: dict[str, list[str]]
    num_classes: int
    class_histogram: dict[str, list[int]] = field(default_factory=dict)
    sample_rate: float = 200.0
    channels: int = 0
    samples: int = 0

    def paths(self, split: str) -> list[Path]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}")
        return [self.root / p for p in self.splits[split]]

    def save(self, path: Path | str) -> None:
        path = Path(path)
        payload = {
            "splits": self.splits,
            "num_classes": self.num_classes,
            "class_histogram": self.class_histogram,
            "sample_rate": self.sample_rate,
            "channels": self.channels,
            "samples": self.samples,
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        payload = json.loads(path.read_text())
        return cls(
            root=path.parent,
            splits=payload["splits"],
            num_classes=payload["num_classes"],
            class_histogram=payload.get("class_histogram", {}),
            sample_rate=payload.get("sample_rate", 200.0),
            channels=payload.get("channels", 0),
            samples=payload.get("samples", 0),
        )


def write_segment(path: Path | str, signal: np.ndarray, label: int, rate: float) -> None:
    """Write one (channels, samples) float32 segment."""
    signal = np.asarray(signal, dtype=np.float32)
    if signal.ndim != 2:
        raise ValueError("segment must be (channels, samples)")
    c, l = signal.shape
    header = {
        "channels": c,
        "samples": l,
        "rate": rate,
        "label": int(label),
        "dtype": HEADER_DTYPE,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(signal.astype("<f4").tobytes(order="C"))


def read_segment(path: Path | str) -> tuple[np.ndarray, int, float]:
    """Read a segment file back as (signal (C, L), label, rate)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("dtype") != HEADER_DTYPE:
            raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
        c, l = header["channels"], header["samples"]
        raw = fh.read(4 * c * l)
        if len(raw) != 4 * c * l:
            raise ValueError(f"truncated segment file {path}")
    signal = np.frombuffer(raw, dtype="<f4").reshape(c, l).copy()
    return signal, int(header["label"]), float(header["rate"])


def load_split(manifest: DatasetManifest, split: str) -> SegmentBatch:
    """Load every segment of a split into one batch."""
    paths = manifest.paths(split)
    if not paths:
        raise ValueError(f"split {split!r} is empty")
    signals, labels = [], []
    rate = None
    for p in paths:
        sig, label, r = read_segment(p)
        signals.append(sig)
        labels.append(label)
        if rate is None:
            rate = r
        elif rate != r:
            raise ValueError("mixed sample rates within a split")
    stacked = np.stack(signals)
    return SegmentBatch(
        signals=stacked,
        labels=np.array(labels),
        sample_rate=float(rate),
        channel_ids=np.arange(stacked.shape[1]),
    )
