"""Anomaly scoring, proportion thresholding, point adjustment, and metrics.

Scores are per-timestamp channel-mean squared reconstruction errors. The
threshold delta labels the top gamma percent of test points; ties at delta
are all labeled anomalous. Point adjustment is a flag, never silent: both
raw and adjusted precision/recall/F1 always appear in the report.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "MetricBundle",
    "DetectionReport",
    "anomaly_score",
    "threshold_by_proportion",
    "labels_at",
    "segments",
    "point_adjust",
    "f1_score",
    "prf1",
    "roc_auc",
    "soften_labels",
    "vus_roc",
    "default_gamma",
    "evaluate",
    "render_report",
    "write_scores_csv",
    "read_scores_csv",
]

DEFAULT_VUS_BUFFER = 25


def anomaly_score(x: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-timestamp score: mean over channels of squared difference."""
    x = np.asarray(x, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if x.shape != recon.shape:
        raise DataError(f"score inputs differ in shape: {x.shape} vs {recon.shape}")
    diff = x - recon
    return np.mean(diff * diff, axis=0)


def threshold_by_proportion(scores: np.ndarray, gamma: float) -> float:
    """Smallest delta labeling at most a gamma/100 fraction, ties included.

    delta is the n-th largest score with n = floor(gamma/100 * T). When n
    is zero the threshold sits just above the maximum so nothing is
    labeled.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DataError("cannot threshold an empty score series")
    if not 0.0 < gamma <= 100.0:
        raise DataError(f"gamma must lie in (0, 100], got {gamma}")
    n_target = int(np.floor(gamma / 100.0 * scores.size))
    if n_target == 0:
        return float(np.nextafter(scores.max(), np.inf))
    return float(np.partition(scores, scores.size - n_target)[scores.size - n_target])


def labels_at(scores: np.ndarray, delta: float) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= delta).astype(np.int8)


def segments(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) runs of ones."""
    labels = np.asarray(labels).astype(np.int8)
    edges = np.diff(np.r_[0, labels, 0])
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def point_adjust(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark whole true segments as detected when any of their points is."""
    pred = np.asarray(pred).astype(np.int8)
    truth = np.asarray(truth).astype(np.int8)
    if pred.shape != truth.shape:
        raise DataError(f"label lengths differ: {pred.shape} vs {truth.shape}")
    adjusted = pred.copy()
    for start, end in segments(truth):
        if adjusted[start:end].any():
            adjusted[start:end] = 1
    return adjusted


@dataclass(frozen=True)
class MetricBundle:
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (percent in, percent out)."""
    total = precision + recall
    return 2.0 * precision * recall / total if total else 0.0


def prf1(pred: np.ndarray, truth: np.ndarray) -> MetricBundle:
    """Precision, recall, F1 in percent; F1 is 0 when P + R = 0."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DataError(f"label lengths differ: {pred.shape} vs {truth.shape}")
    tp = float(np.sum(pred & truth))
    pred_pos = float(pred.sum())
    truth_pos = float(truth.sum())
    if truth_pos == 0.0:
        warnings.warn("truth contains no positives; recall reported as 0", stacklevel=2)
    precision = 100.0 * tp / pred_pos if pred_pos else 0.0
    recall = 100.0 * tp / truth_pos if truth_pos else 0.0
    return MetricBundle(precision, recall, f1_score(precision, recall))


def _weighted_auc(scores: np.ndarray, soft: np.ndarray) -> float:
    """Pairwise AUC with fractional labels; ties split the pair weight."""
    pos = soft
    neg = 1.0 - soft
    pos_mass = float(pos.sum())
    neg_mass = float(neg.sum())
    if pos_mass == 0.0 or neg_mass == 0.0:
        raise DataError("roc_auc/vus_roc need both classes present")
    _, inverse = np.unique(scores, return_inverse=True)
    pos_grouped = np.bincount(inverse, weights=pos)
    neg_grouped = np.bincount(inverse, weights=neg)
    neg_below = np.concatenate([[0.0], np.cumsum(neg_grouped)[:-1]])
    wins = float(np.sum(pos_grouped * (neg_below + 0.5 * neg_grouped)))
    return wins / (pos_mass * neg_mass)


def roc_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Probability a random positive outscores a random negative; ties 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int8)
    if scores.shape != truth.shape:
        raise DataError(f"score/label lengths differ: {scores.shape} vs {truth.shape}")
    return _weighted_auc(scores, truth.astype(np.float64))


def soften_labels(truth: np.ndarray, buffer: int) -> np.ndarray:
    """Extend each true segment with linear ramps of the given width.

    Offset j outside a segment edge gets 1 - j/(buffer+1); overlapping
    contributions keep the maximum.
    """
    truth = np.asarray(truth).astype(np.int8)
    soft = truth.astype(np.float64)
    n = soft.size
    for start, end in segments(truth):
        for j in range(1, buffer + 1):
            value = 1.0 - j / (buffer + 1.0)
            left, right = start - j, end - 1 + j
            if left >= 0 and soft[left] < value:
                soft[left] = value
            if right < n and soft[right] < value:
                soft[right] = value
    return soft


def vus_roc(scores: np.ndarray, truth: np.ndarray, max_buffer: int = DEFAULT_VUS_BUFFER) -> float:
    """Mean ramp-weighted AUC over buffer widths 0..max_buffer."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int8)
    if scores.shape != truth.shape:
        raise DataError(f"score/label lengths differ: {scores.shape} vs {truth.shape}")
    if max_buffer < 0:
        raise DataError(f"max_buffer must be >= 0, got {max_buffer}")
    values = [
        _weighted_auc(scores, soften_labels(truth, ell)) for ell in range(max_buffer + 1)
    ]
    return float(np.mean(values))


def default_gamma(name: str | None) -> float:
    """Per-dataset anomaly proportion defaults (percent)."""
    lowered = (name or "").lower()
    if "smd" in lowered:
        return 0.5
    if "ucr" in lowered:
        return 0.1
    if "skab" in lowered:
        return 10.0
    return 1.0


@dataclass
class DetectionReport:
    gamma: float
    delta: float
    scores: np.ndarray
    labels: np.ndarray
    truth: np.ndarray | None = None
    raw: MetricBundle | None = None
    adjusted: MetricBundle | None = None
    auc: float | None = None
    vus: float | None = None
    vus_buffer: int = DEFAULT_VUS_BUFFER
    point_adjust_enabled: bool = True

    @property
    def headline(self) -> MetricBundle | None:
        return self.adjusted if self.point_adjust_enabled else self.raw


def evaluate(scores: np.ndarray, truth: np.ndarray | None, gamma: float,
             point_adjust_enabled: bool = True,
             vus_buffer: int = DEFAULT_VUS_BUFFER) -> DetectionReport:
    """Threshold scores and, when truth is known, attach every metric."""
    scores = np.asarray(scores, dtype=np.float64)
    delta = threshold_by_proportion(scores, gamma)
    labels = labels_at(scores, delta)
    report = DetectionReport(gamma=gamma, delta=delta, scores=scores, labels=labels,
                             truth=truth, vus_buffer=vus_buffer,
                             point_adjust_enabled=point_adjust_enabled)
    if truth is not None:
        truth = np.asarray(truth).astype(np.int8)
        report.truth = truth
        report.raw = prf1(labels, truth)
        report.adjusted = prf1(point_adjust(labels, truth), truth)
        try:
            report.auc = roc_auc(scores, truth)
            report.vus = vus_roc(scores, truth, vus_buffer)
        except DataError as exc:
            warnings.warn(f"threshold-free metrics unavailable: {exc}", stacklevel=2)
    return report


def _fmt(value: float) -> str:
    return repr(float(value))


def render_report(report: DetectionReport) -> str:
    """Stable key: value document; floats via repr so reruns diff clean."""
    lines = [
        f"points: {report.scores.size}",
        f"gamma: {_fmt(report.gamma)}",
        f"delta: {_fmt(report.delta)}",
        f"flagged: {int(report.labels.sum())}",
        f"point_adjust: {'on' if report.point_adjust_enabled else 'off'}",
    ]
    if report.raw is not None:
        lines += [
            f"precision_raw: {_fmt(report.raw.precision)}",
            f"recall_raw: {_fmt(report.raw.recall)}",
            f"f1_raw: {_fmt(report.raw.f1)}",
        ]
    if report.adjusted is not None:
        lines += [
            f"precision_adjusted: {_fmt(report.adjusted.precision)}",
            f"recall_adjusted: {_fmt(report.adjusted.recall)}",
            f"f1_adjusted: {_fmt(report.adjusted.f1)}",
        ]
    if report.auc is not None:
        lines.append(f"auc: {_fmt(report.auc)}")
    if report.vus is not None:
        lines.append(f"vus: {_fmt(report.vus)}")
        lines.append(f"vus_buffer: {report.vus_buffer}")
    return "\n".join(lines) + "\n"


def write_scores_csv(path, scores: np.ndarray, labels: np.ndarray,
                     truth: np.ndarray | None = None) -> None:
    """Delimited per-timestamp output with the fixed header t,score,label,truth."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "score", "label", "truth"])
        for t in range(len(scores)):
            truth_cell = "" if truth is None else int(truth[t])
            writer.writerow([t, repr(float(scores[t])), int(labels[t]), truth_cell])


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Inverse of write_scores_csv; truth is None when its column is blank."""
    path = Path(path)
    with path.open(newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != ["t", "score", "label", "truth"]:
        raise DataError(f"{path}: expected header t,score,label,truth")
    scores, labels, truth = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected 4")
        scores.append(float(row[1]))
        labels.append(int(row[2]))
        truth.append(None if row[3] == "" else int(row[3]))
    has_truth = any(v is not None for v in truth)
    if has_truth and any(v is None for v in truth):
        raise DataError(f"{path}: truth column is partially filled")
    return (
        np.array(scores, dtype=np.float64),
        np.array(labels, dtype=np.int8),
        np.array(truth, dtype=np.int8) if has_truth else None,
    )
