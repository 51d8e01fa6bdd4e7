"""Figure rendering contracts: files appear, junk inputs are rejected."""

import pytest

from sketchembed.losses import degenerate_batch, saddle_trajectory
from sketchembed.reporting import plot_pr_curve, plot_saddle_trajectories, \
    plot_training_curves

PNG_MAGIC = b"\x89PNG"


def test_pr_curve_single(tmp_path):
    points = [(0.0, 1.0), (0.5, 0.8), (1.0, 0.3)]
    out = plot_pr_curve(points, tmp_path / "pr.png")
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_pr_curve_labelled_dict(tmp_path):
    curves = {
        "half_share": [(0.0, 1.0), (1.0, 0.5)],
        "no_share": [(0.0, 0.9), (1.0, 0.2)],
    }
    out = plot_pr_curve(curves, tmp_path / "pr.png")
    assert out.exists()


def test_pr_curve_rejects_empty(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        plot_pr_curve([], tmp_path / "pr.png")


def test_training_curves_with_phase_change(tmp_path):
    history = [
        {"step": 1, "phase": 1, "loss_total": 1.4, "loss_softmax": 1.4},
        {"step": 2, "phase": 1, "loss_total": 1.1, "loss_softmax": 1.1,
         "val_map": 0.2},
        {"step": 3, "phase": 3, "loss_total": 0.5, "loss_triplet": 0.5},
        {"step": 4, "phase": 3, "loss_total": 0.4, "loss_triplet": 0.4,
         "val_map": 0.3},
    ]
    out = plot_training_curves(history, tmp_path / "curves.png")
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_training_curves_reject_empty(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        plot_training_curves([], tmp_path / "curves.png")


def test_saddle_plot(tmp_path):
    rows = {kind: saddle_trajectory(degenerate_batch([1.0, 0.0]), kind,
                                    steps=20)
            for kind in ("standard", "modified")}
    out = plot_saddle_trajectories(rows, tmp_path / "saddle.png")
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_saddle_plot_rejects_empty(tmp_path):
    with pytest.raises(ValueError, match="no trajectories"):
        plot_saddle_trajectories({}, tmp_path / "saddle.png")
