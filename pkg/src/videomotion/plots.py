"""Report figures: every CLI report path drops a PNG next to its CSV/JSONL."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .body import StubBody, joints_from_motion


def save_loss_curve(records: list[dict], path: str | Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in records]
    ax.plot(steps, [r["loss"] for r in records], label="total")
    for key, style in (("rec", "--"), ("loss_v2m", "--"), ("loss_i2vm", ":")):
        if records and key in records[0]:
            vals = [r.get(key) for r in records]
            if all(v == v for v in vals if v is not None):  # skip NaN-only
                ax.plot(steps, vals, style, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(metrics: dict[str, float], path: str | Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = list(metrics)
    values = [metrics[k] for k in names]
    ax.bar(range(len(names)), values, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    for i, v in enumerate(values):
        ax.annotate(f"{v:.3g}", (i, v), ha="center", va="bottom", fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], path: str | Path) -> None:
    """MPJPE and codebook utilization against the temporal expansion factor."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    codebooks = sorted({r["codebook_size"] for r in rows})
    for size in codebooks:
        cell = sorted((r for r in rows if r["codebook_size"] == size),
                      key=lambda r: r["expansion"])
        xs = [r["expansion"] for r in cell]
        ax1.plot(xs, [r["mpjpe_mm"] for r in cell], "o-", label=f"codebook {size}")
        ax2.plot(xs, [r["utilization"] for r in cell], "o-", label=f"codebook {size}")
    for ax, label in ((ax1, "held-out MPJPE (mm)"), (ax2, "codebook utilization")):
        ax.set_xscale("log")
        ax.set_xlabel("tokens per frame (expansion)")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
    ax1.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_motion_overview(motion, body: StubBody, path: str | Path, title: str) -> None:
    """Joint-height traces plus the top-down root trajectory."""
    joints = joints_from_motion(body, motion)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    t = np.arange(joints.shape[0]) / motion.fps
    for j, name in ((0, "pelvis"), (15, "head"), (20, "l_wrist"), (7, "l_ankle")):
        ax1.plot(t, joints[:, j, 1], label=name)
    ax1.set_xlabel("seconds")
    ax1.set_ylabel("height (m)")
    ax1.legend(fontsize=8)
    ax2.plot(joints[:, 0, 0], joints[:, 0, 2], "o-", markersize=2)
    ax2.set_xlabel("x (m)")
    ax2.set_ylabel("z (m)")
    ax2.set_title("root path (top-down)")
    ax2.axis("equal")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_clip_mosaic(clip, path: str | Path, title: str, max_frames: int = 8) -> None:
    count = min(max_frames, clip.frame_count)
    picks = np.linspace(0, clip.frame_count - 1, count).astype(int)
    fig, axes = plt.subplots(1, count, figsize=(1.3 * count, 1.7))
    if count == 1:
        axes = [axes]
    for ax, idx in zip(axes, picks):
        ax.imshow(np.clip(clip.frames[idx], 0, 1))
        ax.set_title(f"t={idx}", fontsize=7)
        ax.axis("off")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
