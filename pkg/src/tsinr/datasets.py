"""CSV ingestion, windowing, and synthetic benchmarks with labeled injections.

On-disk layout: one row per timestamp, one column per channel; labels are one
0/1 per line. In memory everything is channels-first (d, T) float64. The
synthetic generator covers five anomaly kinds: global points, contextual
points, and shapelet/seasonal/trend segments.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "SeriesBundle",
    "SynthSpec",
    "Window",
    "ANOMALY_KINDS",
    "load_csv",
    "load_series_csv",
    "load_labels",
    "write_series_csv",
    "write_labels",
    "windows",
    "synthesize",
    "base_signal",
    "write_bundle",
]

ANOMALY_KINDS = ("global_point", "contextual_point", "shapelet", "seasonal", "trend")

# context half-width for contextual point statistics
LOCAL_WINDOW = 20


@dataclass
class SeriesBundle:
    name: str
    train: np.ndarray | None
    test: np.ndarray | None
    test_labels: np.ndarray | None = None
    channel_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.train is None and self.test is None:
            raise DataError("bundle needs at least one of train or test")
        if self.train is not None and self.test is not None:
            if self.train.shape[0] != self.test.shape[0]:
                raise DataError(
                    f"channel mismatch: train has {self.train.shape[0]}, "
                    f"test has {self.test.shape[0]}"
                )
        if self.test_labels is not None:
            if self.test is None:
                raise DataError("labels supplied without a test split")
            if self.test_labels.shape[0] != self.test.shape[1]:
                raise DataError(
                    f"label length {self.test_labels.shape[0]} does not match "
                    f"test length {self.test.shape[1]}"
                )

    @property
    def channels(self) -> int:
        src = self.train if self.train is not None else self.test
        return src.shape[0]


@dataclass(frozen=True)
class Window:
    start: int
    values: np.ndarray  # (d, T)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic bundle; every field is deterministic given seed."""

    kind: str = "global_point"
    channels: int = 1
    train_len: int = 2000
    test_len: int = 2000
    period: float = 50.0
    amplitude: float = 1.0
    slope: float = 0.0
    noise_std: float = 0.01
    count: int = 10
    segment_len: int = 20
    magnitude: float | None = None
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"anomaly kind must be one of {ANOMALY_KINDS}, got {self.kind!r}")
        if self.channels < 1 or self.train_len < 2 or self.test_len < 2:
            raise ConfigError("channels and split lengths must be positive")
        if self.period <= 0 or self.amplitude < 0 or self.noise_std < 0:
            raise ConfigError("period must be positive, amplitude and noise_std non-negative")
        if self.count < 0 or self.segment_len < 1:
            raise ConfigError("count must be >= 0 and segment_len >= 1")
        anomalous = self.count * (self.segment_len if self.is_segmental else 1)
        if anomalous >= 0.2 * self.test_len:
            raise ConfigError(
                f"anomaly fraction {anomalous}/{self.test_len} violates the <20% budget"
            )

    @property
    def is_segmental(self) -> bool:
        return self.kind in ("shapelet", "seasonal", "trend")


def base_signal(spec: SynthSpec, start: int, length: int) -> np.ndarray:
    """Clean deterministic signal (no noise) on global indices [start, start+length)."""
    idx = np.arange(start, start + length, dtype=np.float64)
    out = np.empty((spec.channels, length))
    for c in range(spec.channels):
        phase = 2.0 * np.pi * c / spec.channels
        out[c] = spec.amplitude * np.sin(2.0 * np.pi * idx / spec.period + phase) + spec.slope * idx
    return out


def _place_segments(rng: np.random.Generator, spec: SynthSpec) -> list[int]:
    """Non-overlapping segment starts with a 1-gap, by bounded rejection."""
    starts: list[int] = []
    limit = spec.test_len - spec.segment_len
    if limit < 0:
        raise ConfigError("segment_len exceeds test length")
    for _ in range(10000):
        if len(starts) == spec.count:
            break
        cand = int(rng.integers(0, limit + 1))
        if all(cand + spec.segment_len < s or cand > s + spec.segment_len for s in starts):
            starts.append(cand)
    else:
        raise ConfigError("could not place non-overlapping anomaly segments")
    return sorted(starts)


def synthesize(spec: SynthSpec) -> SeriesBundle:
    """Clean train split plus a test split with injected, exactly labeled anomalies.

    Noise is drawn before injection positions so that two specs differing
    only in `count` share the identical clean realization. Injections touch
    every channel at the chosen timestamps; the injection log in meta
    records each labeled range and, for trend anomalies, how far the
    carried offset reaches.
    """
    rng = np.random.default_rng(spec.seed)
    noise_train = rng.normal(scale=spec.noise_std, size=(spec.channels, spec.train_len))
    noise_test = rng.normal(scale=spec.noise_std, size=(spec.channels, spec.test_len))

    train = base_signal(spec, 0, spec.train_len) + noise_train
    clean_test = base_signal(spec, spec.train_len, spec.test_len) + noise_test
    test = clean_test.copy()
    labels = np.zeros(spec.test_len, dtype=np.int8)
    injections: list[dict] = []

    if spec.count > 0 and spec.kind in ("global_point", "contextual_point"):
        lam = spec.magnitude if spec.magnitude is not None else (
            6.0 if spec.kind == "global_point" else 3.0
        )
        margin = LOCAL_WINDOW if spec.kind == "contextual_point" else 0
        room = spec.test_len - 2 * margin
        if room < spec.count:
            raise ConfigError("test split too short for the requested point count")
        positions = np.sort(rng.choice(room, size=spec.count, replace=False)) + margin
        signs = np.where(rng.random(spec.count) < 0.5, -1.0, 1.0)
        mean = clean_test.mean(axis=1)
        std = clean_test.std(axis=1)
        for t, sign in zip(positions, signs):
            for c in range(spec.channels):
                if spec.kind == "global_point":
                    test[c, t] = mean[c] + sign * lam * std[c]
                else:
                    ctx = clean_test[c, t - LOCAL_WINDOW:t + LOCAL_WINDOW + 1]
                    test[c, t] = ctx.mean() + sign * lam * ctx.std()
            labels[t] = 1
            injections.append({"kind": spec.kind, "start": int(t), "end": int(t) + 1,
                               "affected_end": int(t) + 1})

    elif spec.count > 0 and spec.is_segmental:
        starts = _place_segments(rng, spec)
        for a in starts:
            b = a + spec.segment_len
            idx = np.arange(spec.train_len + a, spec.train_len + b, dtype=np.float64)
            affected_end = b
            for c in range(spec.channels):
                phase = 2.0 * np.pi * c / spec.channels
                angle = 2.0 * np.pi * idx / spec.period + phase
                if spec.kind == "shapelet":
                    # same amplitude and period, different waveform
                    wave = spec.amplitude * np.sign(np.sin(angle))
                    test[c, a:b] = wave + spec.slope * idx + noise_test[c, a:b]
                elif spec.kind == "seasonal":
                    factor = int(spec.magnitude) if spec.magnitude is not None else 3
                    wave = spec.amplitude * np.sin(factor * (2.0 * np.pi * idx / spec.period) + phase)
                    test[c, a:b] = wave + spec.slope * idx + noise_test[c, a:b]
                else:  # trend: slope offset inside the segment, carried forward after it
                    scale = spec.magnitude if spec.magnitude is not None else 2.0
                    drift = scale * spec.amplitude / spec.segment_len
                    ramp = drift * np.arange(1, spec.segment_len + 1)
                    test[c, a:b] += ramp
                    test[c, b:] += ramp[-1]
                    affected_end = spec.test_len
            labels[a:b] = 1
            injections.append({"kind": spec.kind, "start": int(a), "end": int(b),
                               "affected_end": int(affected_end)})

    meta = {"spec": asdict(spec), "injections": injections}
    names = [f"ch{c}" for c in range(spec.channels)]
    return SeriesBundle(name=spec.name, train=train, test=test, test_labels=labels,
                        channel_names=names, meta=meta)


def _parse_cell(cell: str, row: int, col: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell at row {row}, column {col}: {cell!r}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value at row {row}, column {col}: {cell!r}")
    return value


def load_series_csv(path) -> tuple[np.ndarray, list[str] | None]:
    """Parse a series CSV into ((d, T) values, header names if present)."""
    path = Path(path)
    with path.open(newline="") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = None
    start = 0
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        start = 1
    body = rows[start:]
    if not body:
        raise DataError(f"{path}: header but no data rows")
    width = len(body[0])
    values = np.empty((len(body), width))
    for r, row in enumerate(body):
        if len(row) != width:
            raise DataError(
                f"{path}: ragged row {r + start + 1} has {len(row)} cells, expected {width}"
            )
        for c, cell in enumerate(row):
            values[r, c] = _parse_cell(cell, r + start + 1, c + 1)
    if header is not None and len(header) != width:
        raise DataError(f"{path}: header names {len(header)} columns, data has {width}")
    return values.T.copy(), header


def load_labels(path) -> np.ndarray:
    path = Path(path)
    out = []
    with path.open() as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            value = _parse_cell(text, lineno, 1)
            if value not in (0.0, 1.0):
                raise DataError(f"{path}: label at line {lineno} must be 0 or 1, got {text!r}")
            out.append(int(value))
    if not out:
        raise DataError(f"{path}: no labels found")
    return np.array(out, dtype=np.int8)


def write_series_csv(path, values: np.ndarray, channel_names: list[str] | None = None) -> None:
    """One row per timestamp; floats written as repr for exact round trips."""
    values = np.asarray(values, dtype=np.float64)
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        if channel_names is not None:
            writer.writerow(channel_names)
        for row in values.T:
            writer.writerow([repr(float(v)) for v in row])


def write_labels(path, labels: np.ndarray) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def load_csv(train_path=None, test_path=None, labels_path=None, name: str | None = None) -> SeriesBundle:
    """Assemble a bundle from whichever CSV pieces exist."""
    if train_path is None and test_path is None:
        raise DataError("load_csv needs a train path, a test path, or both")
    train = test = labels = None
    names = None
    if train_path is not None:
        train, names = load_series_csv(train_path)
    if test_path is not None:
        test, test_names = load_series_csv(test_path)
        names = names or test_names
    if labels_path is not None:
        labels = load_labels(labels_path)
    stem = Path(train_path or test_path).stem
    return SeriesBundle(name=name or stem, train=train, test=test,
                        test_labels=labels, channel_names=names)


def windows(series: np.ndarray, window: int, stride: int) -> list[Window]:
    """Starts 0, stride, 2*stride, ...; a final partial window is dropped."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise DataError(f"series must be (d, T), got shape {series.shape}")
    if window < 1 or stride < 1:
        raise ConfigError("window and stride must be >= 1")
    length = series.shape[1]
    if length < window:
        raise DataError(f"series length {length} is shorter than window {window}")
    return [
        Window(start=s, values=series[:, s:s + window].copy())
        for s in range(0, length - window + 1, stride)
    ]


def write_bundle(bundle: SeriesBundle, out_dir) -> dict[str, str]:
    """Write train/test/labels CSVs plus a JSON sidecar; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}
    if bundle.train is not None:
        paths["train"] = str(out_dir / "train.csv")
        write_series_csv(paths["train"], bundle.train, bundle.channel_names)
    if bundle.test is not None:
        paths["test"] = str(out_dir / "test.csv")
        write_series_csv(paths["test"], bundle.test, bundle.channel_names)
    if bundle.test_labels is not None:
        paths["labels"] = str(out_dir / "test_labels.csv")
        write_labels(paths["labels"], bundle.test_labels)
    sidecar = {"name": bundle.name, **bundle.meta}
    paths["sidecar"] = str(out_dir / "spec.json")
    Path(paths["sidecar"]).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return paths
