"""SVG figure rendering for series, reconstructions, and score traces.

Figures are plain SVG files written through the Agg backend. Every
semantically meaningful artist carries a gid, which matplotlib writes out
as an XML id, so tests (and downstream tooling) can locate the threshold
line or the shaded truth segments without rasterizing anything. Output is
byte-stable: the SVG hash salt is pinned and the date metadata dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg", force=True)
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .detection import segments  # noqa: E402
from .errors import DataError  # noqa: E402

__all__ = ["plot_series", "plot_scores"]

plt.rcParams["svg.hashsalt"] = "tsinr"

_SHADE = dict(color="tab:red", alpha=0.18, linewidth=0)


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(path)


def _shade_truth(ax, truth) -> None:
    for start, end in segments(truth):
        ax.axvspan(start, end, gid=f"truth-seg-{start}-{end}", **_SHADE)


def plot_series(path, series: np.ndarray, *, recon: np.ndarray | None = None,
                truth: np.ndarray | None = None,
                channel_names: list[str] | None = None,
                title: str | None = None) -> str:
    """Line plot of raw channels, optional reconstruction overlay, truth shading."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise DataError(f"series must be (d, T), got shape {series.shape}")
    d, length = series.shape
    if recon is not None:
        recon = np.asarray(recon, dtype=np.float64)
        if recon.shape != series.shape:
            raise DataError(f"recon shape {recon.shape} does not match series {series.shape}")
    if truth is not None and len(truth) != length:
        raise DataError(f"truth length {len(truth)} does not match series length {length}")
    if channel_names is not None and len(channel_names) != d:
        raise DataError(f"{len(channel_names)} names for {d} channels")

    fig, axes = plt.subplots(d, 1, figsize=(10, 1.6 * d + 1.2), sharex=True, squeeze=False)
    t = np.arange(length)
    for c in range(d):
        ax = axes[c, 0]
        name = channel_names[c] if channel_names else f"ch{c}"
        ax.plot(t, series[c], gid=f"channel-{c}", linewidth=0.8, label=name)
        if recon is not None:
            ax.plot(t, recon[c], gid=f"recon-{c}", linewidth=0.8,
                    color="tab:orange", label=f"{name} recon")
        if truth is not None:
            _shade_truth(ax, truth)
        ax.legend(loc="upper right", fontsize="x-small")
    axes[-1, 0].set_xlabel("t")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_scores(path, scores: np.ndarray, *, delta: float | None = None,
                truth: np.ndarray | None = None, title: str | None = None) -> str:
    """Anomaly score trace with optional threshold line and truth shading."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise DataError(f"scores must be 1-d, got shape {scores.shape}")
    if truth is not None and len(truth) != scores.size:
        raise DataError(f"truth length {len(truth)} does not match scores {scores.size}")

    fig, ax = plt.subplots(figsize=(10, 2.8))
    ax.plot(np.arange(scores.size), scores, gid="score-trace", linewidth=0.8,
            color="tab:blue", label="anomaly score")
    if delta is not None:
        ax.axhline(float(delta), gid="threshold-line", color="tab:red",
                   linestyle="--", linewidth=1.0, label="threshold")
    if truth is not None:
        _shade_truth(ax, truth)
    ax.set_xlabel("t")
    ax.set_ylabel("score")
    ax.legend(loc="upper right", fontsize="x-small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
