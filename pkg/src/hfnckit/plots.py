"""Matplotlib rendering of the report artifacts (time-to-failure
distribution, AUROC sweeps, and ROC curves)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_time_to_failure(ttf_stats: dict, path: str) -> None:
    """Histogram of failure times with the cumulative density overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    bins = [b / 60.0 for b in ttf_stats["bins"]]
    ax.bar(bins, ttf_stats["counts"], width=0.9, color="c", align="edge",
           label="failures per hour")
    ax.set_xlabel("Hours from HFNC period start")
    ax.set_ylabel("Failures")
    ax2 = ax.twinx()
    ax2.plot(
        [b + 1.0 for b in bins], ttf_stats["cdf"], color="orange",
        label="cumulative density",
    )
    ax2.set_ylabel("Cumulative density")
    ax2.set_ylim(0, 1.05)
    ax.set_title(f"Time to HFNC failure (n={ttf_stats['n_failures']})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_auroc_sweep(sweeps: dict[str, list], path: str) -> None:
    """AUROC vs anchor time, one line per model."""
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, rows in sweeps.items():
        xs = [r.t_min / 60.0 for r in rows if r.auroc is not None]
        ys = [r.auroc for r in rows if r.auroc is not None]
        ax.plot(xs, ys, marker=".", markersize=3, label=name)
    ax.set_xlabel("Hours into HFNC period")
    ax.set_ylabel("AUROC")
    ax.set_ylim(0.0, 1.0)
    ax.axhline(0.5, color="gray", linewidth=0.5, linestyle="--")
    ax.legend(fontsize=8)
    ax.set_title("Time-anchored AUROC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_roc(curves: dict[str, list], path: str, anchor_label: str = "") -> None:
    """ROC curves, one per model, with diagonal reference."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for name, points in curves.items():
        fpr = [p[1] for p in points]
        tpr = [p[2] for p in points]
        ax.plot(fpr, tpr, label=name)
    ax.plot([0, 1], [0, 1], color="gray", linewidth=0.5, linestyle="--")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    title = "ROC"
    if anchor_label:
        title += f" at {anchor_label}"
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
