"""Score-curve figures: one PNG per clip plus a CSV of the plotted values."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from dcmd.errors import DataError  # noqa: E402
from evals.scorers import ScoreSeries  # noqa: E402


def label_spans(labels: np.ndarray) -> list[tuple[int, int]]:
    """``[start, end)`` runs of label 1."""
    padded = np.concatenate([[0], np.asarray(labels, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def emit_plot(series: ScoreSeries, path) -> tuple[Path, Path]:
    """Write ``path`` (PNG) and ``path`` with a .csv suffix; returns both paths."""
    if len(series) == 0:
        raise DataError(f"clip {series.clip_id}: nothing to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = np.arange(len(series))

    fig, ax = plt.subplots(figsize=(10, 3))
    try:
        if series.labels is not None:
            for start, end in label_spans(series.labels):
                ax.axvspan(start - 0.5, end - 0.5, color="tab:red", alpha=0.2, lw=0)
        ax.plot(frames, series.scores, color="tab:blue", lw=1.2)
        ax.set_xlim(-0.5, len(series) - 0.5)
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        ax.set_title(series.clip_id)
        fig.tight_layout()
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)

    sidecar = path.with_suffix(".csv")
    with sidecar.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_idx", "score", "label"])
        for i, score in enumerate(series.scores):
            label = "" if series.labels is None else int(series.labels[i])
            writer.writerow([i, repr(float(score)), label])
    return path, sidecar


def emit_plots(series: dict[str, ScoreSeries], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [emit_plot(series[clip_id], out_dir / f"{clip_id}.png")[0] for clip_id in sorted(series)]
