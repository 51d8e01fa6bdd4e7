"""Figure rendering for the report paths.

Everything draws through the Agg backend straight to files, so reports
come out the same on headless machines.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_pr_curve(curves, path, title="precision vs recall"):
    """Render one or more PR curves.

    ``curves`` is either a list of (recall, precision) pairs or a dict
    mapping a legend label to such a list.
    """
    if not isinstance(curves, dict):
        curves = {None: curves}
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, points in curves.items():
        if not points:
            raise ValueError("empty PR curve")
        recall = [r for r, _ in points]
        precision = [p for _, p in points]
        ax.plot(recall, precision, label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if any(label is not None for label in curves):
        ax.legend()
    return _finish(fig, path)


def plot_training_curves(history, path):
    """Loss per step on top, validation mAP per epoch below.

    ``history`` is a list of step rows as the trainer records them.
    Phase changes are marked with vertical lines.
    """
    if not history:
        raise ValueError("empty training history")
    steps = [row["step"] for row in history]
    fig, (ax_loss, ax_map) = plt.subplots(
        2, 1, figsize=(6, 6), sharex=True,
        gridspec_kw={"height_ratios": [2, 1]})

    ax_loss.plot(steps, [row["loss_total"] for row in history],
                 label="total", color="black", linewidth=1.2)
    for key, label in (("loss_softmax", "softmax"),
                       ("loss_contrastive", "contrastive"),
                       ("loss_triplet", "triplet")):
        pts = [(row["step"], row[key]) for row in history
               if row.get(key) is not None]
        if pts and len(pts) < len(history):
            ax_loss.plot(*zip(*pts), label=label, alpha=0.7, linewidth=0.9)
    for prev, row in zip(history, history[1:]):
        if row["phase"] != prev["phase"]:
            for ax in (ax_loss, ax_map):
                ax.axvline(row["step"], color="gray", linestyle=":",
                           linewidth=0.8)
            ax_loss.text(row["step"], ax_loss.get_ylim()[1],
                         f" phase {row['phase']}", fontsize=8, va="top")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(True, alpha=0.3)
    if len(ax_loss.get_lines()) > 1:
        ax_loss.legend(fontsize=8)

    val = [(row["step"], row["val_map"]) for row in history
           if row.get("val_map") is not None]
    if val:
        ax_map.plot(*zip(*val), marker="o", markersize=3, color="tab:blue")
    ax_map.set_ylabel("validation mAP")
    ax_map.set_xlabel("step")
    ax_map.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_saddle_trajectories(rows_by_kind, path):
    """Loss against descent step for each probed loss kind.

    Started from a degenerate point the standard loss draws a flat line at
    half the margin while the modified loss falls away from it; this is
    the picture the probe CSVs encode.
    """
    if not rows_by_kind:
        raise ValueError("no trajectories to plot")
    fig, (ax_loss, ax_grad) = plt.subplots(1, 2, figsize=(8, 3.5))
    for kind, rows in rows_by_kind.items():
        steps = [row["step"] for row in rows]
        ax_loss.plot(steps, [row["loss"] for row in rows], label=kind)
        ax_grad.plot(steps, [row["grad_norm_p"] for row in rows],
                     label=kind)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(True, alpha=0.3)
    ax_loss.legend()
    ax_grad.set_xlabel("step")
    ax_grad.set_ylabel("positive-branch gradient norm")
    ax_grad.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)
