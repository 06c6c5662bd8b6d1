import json

import numpy as np
import pytest

from ssdl.segio import DatasetManifest, SegmentBatch, load_split, read_segment, write_segment


def test_segment_roundtrip(tmp_path):
    sig = np.random.default_rng(0).normal(size=(3, 50)).astype(np.float32)
    path = tmp_path / "a.seg"
    write_segment(path, sig, label=2, rate=200.0)
    back, label, rate = read_segment(path)
    assert np.array_equal(back, sig)
    assert label == 2
    assert rate == 200.0


def test_header_is_json_line(tmp_path):
    path = tmp_path / "a.seg"
    write_segment(path, np.zeros((2, 4), dtype=np.float32), label=0, rate=100.0)
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
    assert header == {"channels": 2, "samples": 4, "rate": 100.0, "label": 0, "dtype": "f32le"}


def test_payload_is_channel_major_f32le(tmp_path):
    sig = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "a.seg"
    write_segment(path, sig, label=0, rate=1.0)
    raw = path.read_bytes().split(b"\n", 1)[1]
    vals = np.frombuffer(raw, dtype="<f4")
    assert np.array_equal(vals, np.arange(6, dtype=np.float32))


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "a.seg"
    write_segment(path, np.zeros((2, 4), dtype=np.float32), label=0, rate=1.0)
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(ValueError):
        read_segment(path)


def test_manifest_roundtrip(tmp_path):
    m = DatasetManifest(
        root=tmp_path,
        splits={"train": ["a.seg"], "valid": [], "test": []},
        num_classes=3,
        class_histogram={"train": [1, 0, 0]},
        sample_rate=200.0,
        channels=2,
        samples=4,
    )
    m.save(tmp_path / "manifest.json")
    back = DatasetManifest.load(tmp_path / "manifest.json")
    assert back.splits == m.splits
    assert back.num_classes == 3
    assert back.root == tmp_path


def test_load_split(tmp_path):
    for i in range(3):
        write_segment(tmp_path / f"{i}.seg", np.full((2, 4), i, dtype=np.float32), label=i, rate=50.0)
    m = DatasetManifest(
        root=tmp_path,
        splits={"train": [f"{i}.seg" for i in range(3)], "valid": [], "test": []},
        num_classes=3,
    )
    batch = load_split(m, "train")
    assert batch.signals.shape == (3, 2, 4)
    assert list(batch.labels) == [0, 1, 2]
    assert batch.sample_rate == 50.0
    with pytest.raises(ValueError):
        load_split(m, "valid")
    with pytest.raises(KeyError):
        load_split(m, "bogus")


def test_segment_batch_invariants():
    with pytest.raises(ValueError):
        SegmentBatch(np.zeros((2, 3)), np.zeros(2), 200.0, np.zeros(3))
    with pytest.raises(ValueError):
        SegmentBatch(np.zeros((2, 3, 4)), np.zeros(1), 200.0, np.zeros(3))
