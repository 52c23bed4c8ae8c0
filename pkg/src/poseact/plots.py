"""Figure rendering for ranking reports.

Everything draws through the Agg backend straight to files; no display
is ever opened.
"""

import os
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from poseact.evaluate import RankDiffReport


def save_report_figures(report: RankDiffReport, out_dir: str, prefix: str = "report") -> List[str]:
    """Render rank-movement and per-class accuracy figures as PNGs."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.3 * len(report.video_rows))))
    ids = [row[0] for row in report.video_rows]
    deltas = [row[4] for row in report.video_rows]
    colors = ["#2a7" if d > 0 else ("#c44" if d < 0 else "#888") for d in deltas]
    ax.barh(range(len(ids)), deltas, color=colors)
    ax.set_yticks(range(len(ids)))
    ax.set_yticklabels(ids, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("rank improvement (scorer A rank - scorer B rank)")
    ax.set_title("Per-video rank movement within the true class")
    ax.axvline(0, color="black", linewidth=0.8)
    fig.tight_layout()
    rank_path = os.path.join(out_dir, f"{prefix}_rank_moves.png")
    fig.savefig(rank_path, dpi=120)
    plt.close(fig)
    paths.append(rank_path)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(report.class_rows)), 4))
    classes = [row[0] for row in report.class_rows]
    acc_a = [row[1] for row in report.class_rows]
    acc_b = [row[2] for row in report.class_rows]
    xs = range(len(classes))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], acc_a, width, label="scorer A", color="#778")
    ax.bar([x + width / 2 for x in xs], acc_b, width, label="scorer B", color="#2a7")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(classes, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("per-class accuracy")
    ax.set_title("Per-class accuracy by scorer")
    ax.legend()
    fig.tight_layout()
    acc_path = os.path.join(out_dir, f"{prefix}_class_accuracy.png")
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    paths.append(acc_path)
    return paths
