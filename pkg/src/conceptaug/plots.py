"""Static figures: F1 by label-frequency bucket, and phrases per concept."""

from __future__ import annotations

import os
import tempfile
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BUCKETS = [("rare", "rare (<=50)"), ("semi_rare", "semi-rare (51-1000)"), ("common", "common (>1000)")]


class PlotError(ValueError):
    pass


def _save(fig, path):
    # render to a temp file first so a failure never leaves a partial image
    path = Path(path)
    fd, tmp = tempfile.mkstemp(suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def bucket_chart(runs: dict[str, dict], path, title="F1 by training frequency of codes") -> None:
    """Grouped bars: one group per bucket, one bar per run (name -> metrics dict)."""
    runs = {name: m for name, m in runs.items() if m}
    present = [(k, lbl) for k, lbl in BUCKETS if any(m.get(f"f1_{k}") is not None for m in runs.values())]
    if not present:
        raise PlotError("no bucketed F1 values in the metrics")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(runs)
    for i, (name, m) in enumerate(runs.items()):
        vals = [m.get(f"f1_{k}") or 0.0 for k, _ in present]
        ax.bar([j + i * width for j in range(len(present))], vals, width, label=name)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(present))])
    ax.set_xticklabels([lbl for _, lbl in present])
    ax.set_ylabel("micro F1")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def phrases_histogram(counts: dict[str, int], path, title="Distinct phrases per concept") -> None:
    if not counts:
        raise PlotError("no phrase counts in the stats")
    hist = Counter(counts.values())
    xs = sorted(hist)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(xs, [hist[x] for x in xs])
    ax.set_xlabel("distinct phrases mapped to a concept")
    ax.set_ylabel("concepts")
    ax.set_title(title)
    _save(fig, path)
