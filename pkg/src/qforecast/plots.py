"""Report figures rendered to files next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_evaluation(report: dict, path: str) -> str:
    """Overall scores plus per-template recall bars."""
    fig, (ax_left, ax_right) = plt.subplots(1, 2, figsize=(10, 4))
    names = ["recall", "precision", "f1"]
    ax_left.bar(names, [report[n] for n in names], color="#4878a8")
    ax_left.set_ylim(0, 1.05)
    ax_left.set_title("containment scores")
    for i, name in enumerate(names):
        ax_left.text(i, report[name] + 0.02, f"{report[name]:.2f}", ha="center")

    per_template = report.get("per_template", {})
    if per_template:
        tids = sorted(per_template, key=str)
        recalls = [per_template[t]["recall"] for t in tids]
        ax_right.bar([str(t) for t in tids], recalls, color="#6aa66a")
        ax_right.set_ylim(0, 1.05)
        ax_right.set_xlabel("template id")
        ax_right.set_title("per-template recall")
        if len(tids) > 12:
            ax_right.tick_params(axis="x", labelrotation=90, labelsize=6)
    else:
        ax_right.axis("off")
    fig.suptitle(f"avg cnt-diff = {report.get('avg_cnt_diff', 0.0):.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_apen_histogram(rows: list, path: str) -> str:
    """Histogram of per-parameter approximate entropy, colored by label."""
    fig, ax = plt.subplots(figsize=(7, 4))
    by_label: dict = {}
    for row in rows:
        by_label.setdefault(row["label"], []).append(row["ap_en"])
    colors = {"trivial_to_predict": "#e8a33d", "predictable_by_model": "#4878a8",
              "unpredictable": "#3d8b3d"}
    values = [v for vs in by_label.values() for v in vs]
    bins = np.linspace(0.0, max(values + [1.0]), 24)
    bottom = np.zeros(bins.size - 1)
    for label in ("trivial_to_predict", "predictable_by_model", "unpredictable"):
        if label not in by_label:
            continue
        counts, _ = np.histogram(by_label[label], bins=bins)
        ax.bar(bins[:-1], counts, width=np.diff(bins), align="edge",
               bottom=bottom, label=label, color=colors[label])
        bottom += counts
    ax.set_xlabel("approximate entropy")
    ax.set_ylabel("parameters")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_accuracy_rounds(rounds: list, alpha: float, path: str) -> str:
    """Per-model accuracy over monitoring rounds with the trigger threshold."""
    fig, ax = plt.subplots(figsize=(8, 4))
    by_model: dict = {}
    for row in rounds:
        by_model.setdefault(row["model_id"], []).append((row["round"], row["accuracy"]))
    for model_id, points in sorted(by_model.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", markersize=3, label=model_id)
    ax.axhline(alpha, color="red", linestyle="--", linewidth=1,
               label=f"threshold {alpha:.2f}")
    ax.set_xlabel("round")
    ax.set_ylabel("containment recall")
    ax.set_ylim(-0.05, 1.05)
    if len(by_model) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
