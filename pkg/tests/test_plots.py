import numpy as np

from ssdl.diffusion import cosine_schedule
from ssdl.plots import plot_confusion, plot_schedule, plot_training_log, plot_waveforms


def test_plot_schedule(tmp_path):
    out = plot_schedule(cosine_schedule(20), tmp_path / "sched.png")
    assert out.exists() and out.stat().st_size > 0


def test_plot_waveforms_single_and_batch(tmp_path):
    rng = np.random.default_rng(0)
    single = rng.normal(size=(3, 100))
    batch = rng.normal(size=(2, 3, 100))
    assert plot_waveforms(single, 200.0, tmp_path / "one.png").exists()
    assert plot_waveforms(batch, 200.0, tmp_path / "many.png", title="batch").exists()


def test_plot_training_log(tmp_path):
    records = [
        {"epoch": 0, "step": 1, "lr": 1e-4, "loss": 1.0},
        {"epoch": 0, "step": 2, "lr": 1e-4, "loss": 0.8},
        {"epoch": 0, "step": 2, "lr": None, "loss": None, "val_metric": 0.5},
        {"epoch": 1, "step": 3, "lr": 1e-4, "loss": 0.6},
        {"epoch": 1, "step": 3, "lr": None, "loss": None, "val_metric": 0.7},
    ]
    assert plot_training_log(records, tmp_path / "log.png").exists()


def test_plot_confusion(tmp_path):
    cm = np.array([[5, 1], [2, 7]])
    out = plot_confusion(cm, tmp_path / "cm.png", class_names=["a", "b"])
    assert out.exists() and out.stat().st_size > 0
