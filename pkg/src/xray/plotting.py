"""Figure rendering for prune reports.

Uses the non-interactive Agg backend so figures render to files in
headless environments; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .model import PruneReport  # noqa: E402
from .report import _rule_order  # noqa: E402


def save_rule_summary_figure(
    report: PruneReport,
    path: str | Path,
    title: str = "Nodes selected per rule",
) -> Path:
    """Bar chart of nodes selected by each rule, annotated with percentages.

    The leftmost bar is the unpruned tree (100%); returns the path written.
    """
    labels = ["original"] + _rule_order(report.counts)
    values = [report.original_count] + [report.counts[r] for r in labels[1:]]
    notes = ["100.00%"] + [report.percentages[r] for r in labels[1:]]

    fig, ax = plt.subplots(figsize=(max(6.0, 1.5 * len(labels)), 4.0))
    bars = ax.bar(labels, values, color=["#888888"] + ["#4878cf"] * (len(labels) - 1))
    for bar, note in zip(bars, notes):
        ax.annotate(
            note,
            xy=(bar.get_x() + bar.get_width() / 2, bar.get_height()),
            xytext=(0, 3),
            textcoords="offset points",
            ha="center",
            fontsize=9,
        )
    ax.set_ylabel("selected nodes")
    ax.set_title(title)
    ax.margins(y=0.15)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out)
    plt.close(fig)
    return out
