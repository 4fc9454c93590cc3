"""Flat metric rows and figures for run reports."""

import csv
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["metric_rows", "write_metric_csv", "plot_loss", "plot_ablation", "render_figures"]


def metric_rows(report: dict) -> List[dict]:
    """One ``{section, key, value}`` row per scalar in the report."""
    rows = []
    for key in ("n_observations", "n_sequences", "graph_edges", "n_triplets", "skipped_anchors",
                "confidence_constant", "confidence_mean"):
        rows.append({"section": "run", "key": key, "value": report[key]})
    for key, value in sorted((report.get("metrics") or {}).items()):
        rows.append({"section": "metrics", "key": key, "value": value})
    for method, res in sorted((report.get("f_beta_table") or {}).items()):
        for key, value in sorted(res.items()):
            rows.append({"section": f"ablation.{method}", "key": key, "value": value})
    for epoch, loss in enumerate(report.get("loss_history", [])):
        rows.append({"section": "loss", "key": epoch, "value": loss})
    return rows


def write_metric_csv(report: dict, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["section", "key", "value"], lineterminator="\n")
        w.writeheader()
        for row in metric_rows(report):
            v = row["value"]
            w.writerow({**row, "value": f"{v:.17g}" if isinstance(v, float) else v})


def plot_loss(history, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(history) + 1), history, marker="o", ms=3, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean soft triplet loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(table: dict, path) -> None:
    methods = list(table)
    values = [table[m]["f_beta"] for m in methods]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(methods, values, color=["C0" if m == "viewpoint" else "C7" for m in methods])
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel(r"best $f_{0.5}$")
    ax.tick_params(axis="x", labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(report: dict, out) -> List[Path]:
    """Write whichever figures the report has data for; returns their paths."""
    out = Path(out)
    written = []
    if report.get("loss_history"):
        p = out / "loss.png"
        plot_loss(report["loss_history"], p)
        written.append(p)
    if report.get("f_beta_table"):
        p = out / "ablation.png"
        plot_ablation(report["f_beta_table"], p)
        written.append(p)
    return written
