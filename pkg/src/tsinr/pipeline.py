"""Training loop, normalization, checkpointing, and series reconstruction.

The model trains on non-overlapping windows of the training split: each
window is encoded, normalized with statistics fitted on the training
windows only, pushed through the hypernetwork in one forward pass, and
the emitted INR is scored against the normalized raw window with plain
MSE. Adam with bias correction does the updates. Checkpoints are a small
self-describing binary of named float64 arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .datasets import windows
from .detection import anomaly_score
from .encoder import make_encoder
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .hypernet import HyperNetConfig, HyperNetState, forward, init_state
from .inr import InrConfig, eval_inr
from .tensor import Tensor, backward, no_grad

__all__ = [
    "TrainConfig",
    "NormStats",
    "Adam",
    "EpochStats",
    "TrainedModel",
    "resolve_encoder_kind",
    "inr_config_for",
    "hypernet_config_for",
    "train_step",
    "train",
    "reconstruct",
    "score_series",
    "save_checkpoint",
    "load_checkpoint",
]

STD_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"TSNR"
CHECKPOINT_VERSION = 1

# encoder kinds get small integer codes inside checkpoints
_ENCODER_CODES = {"identity": 0, "random": 1, "external": 2, "auto": 3}
_ENCODER_NAMES = {v: k for k, v in _ENCODER_CODES.items()}

_GAMMA_UNSET = -1.0  # gamma=None sentinel; real gammas are positive


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; field names double as the config-file keys."""

    window: int = 100
    patch: int = 10
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    gamma: float | None = None  # None: resolve per dataset name at detect time
    trend_degree: int = 3
    global_layers: int = 3
    group_layers: int = 2
    groups: int = 1
    global_dim: int = 64
    group_dim: int = 32
    model_dim: int = 128
    heads: int = 4
    blocks: int = 6
    ff_mult: int = 4
    decomposition: bool = True
    group_based: bool = True
    encoder: str = "auto"
    point_adjust: bool = True
    vus_buffer: int = 25

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.patch < 1 or self.window % self.patch:
            raise ConfigError(
                f"window {self.window} must be a positive multiple of patch {self.patch}"
            )
        if not self.lr > 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.gamma is not None and not 0.0 < self.gamma <= 100.0:
            raise ConfigError(f"gamma must lie in (0, 100], got {self.gamma}")
        if self.vus_buffer < 0:
            raise ConfigError(f"vus_buffer must be >= 0, got {self.vus_buffer}")
        if self.encoder not in _ENCODER_CODES:
            raise ConfigError(
                f"unknown encoder {self.encoder!r}; choose from "
                f"{sorted(_ENCODER_CODES)}"
            )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        """Build from a config-file dict; unknown keys are an error."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce_field(known[key], value)
        return cls(**kwargs)

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        """Apply non-None overrides (CLI flags beat config-file values)."""
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                clean[key] = _coerce_field(known[key], value)
        return replace(self, **clean) if clean else self

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce_field(field_def, value):
    kind = field_def.type
    try:
        if kind == "int":
            if isinstance(value, bool) or isinstance(value, float) and value != int(value):
                raise ValueError(value)
            return int(value)
        if kind == "float" or kind == "float | None":
            return None if value is None else float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            raise ValueError(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(
            f"config key {field_def.name!r} expects {kind}, got {value!r}"
        ) from None


def resolve_encoder_kind(kind: str, channels: int) -> str:
    """'auto' means identity for univariate series, random features otherwise."""
    if kind == "auto":
        return "identity" if channels == 1 else "random"
    return kind


def inr_config_for(config: TrainConfig, channels: int) -> InrConfig:
    return InrConfig(
        channels=channels,
        window=config.window,
        trend_degree=config.trend_degree,
        global_layers=config.global_layers,
        group_layers=config.group_layers,
        groups=config.groups if config.group_based else 1,
        global_dim=config.global_dim,
        group_dim=config.group_dim,
        use_trend=config.decomposition,
        use_seasonal=config.decomposition,
    )


def hypernet_config_for(config: TrainConfig) -> HyperNetConfig:
    return HyperNetConfig(
        patch_len=config.patch,
        model_dim=config.model_dim,
        heads=config.heads,
        blocks=config.blocks,
        ff_mult=config.ff_mult,
    )


# ----------------------------------------------------------- normalization

@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics, fitted on the training split only."""

    mean: np.ndarray  # (d, 1)
    std: np.ndarray   # (d, 1), floored at STD_FLOOR

    @classmethod
    def fit(cls, series: np.ndarray) -> "NormStats":
        series = np.asarray(series, dtype=np.float64)
        if series.ndim != 2:
            raise DataError(f"stats need a (d, T) series, got shape {series.shape}")
        mean = series.mean(axis=1, keepdims=True)
        std = np.maximum(series.std(axis=1, keepdims=True), STD_FLOOR)
        return cls(mean=mean, std=std)

    def normalize(self, series: np.ndarray) -> np.ndarray:
        return (np.asarray(series, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, series: np.ndarray) -> np.ndarray:
        return np.asarray(series, dtype=np.float64) * self.std + self.mean


# ------------------------------------------------------------------- Adam

class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Slot arrays are keyed by parameter name so the update order is the
    parameter dict's insertion order, which keeps trajectories
    reproducible.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        """Apply one update from the accumulated grads, then clear them."""
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = 0.0  # parameter absent from this step's graph
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.grad = None


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    steps: int


@dataclass
class TrainedModel:
    """A trained hypernetwork plus everything needed to score new data."""

    config: TrainConfig
    state: HyperNetState
    input_stats: NormStats
    target_stats: NormStats
    encoder_kind: str  # resolved, never "auto"
    history: list[EpochStats] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return self.state.inr_config.channels


def train_step(state: HyperNetState, optimizer: Adam,
               inputs: np.ndarray, targets: np.ndarray, step: int) -> float:
    """One batched forward/backward/update; returns the scalar loss."""
    weights = forward(state, inputs)
    recon = eval_inr(weights)
    diff = recon - Tensor(targets)
    loss = T.tmean(T.square(diff))
    loss_value = float(loss.data)
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite loss at step {step}", step=step)
    backward(loss)
    optimizer.step()
    return loss_value


def _stack_windows(series: np.ndarray, window: int) -> np.ndarray:
    wins = windows(series, window, stride=window)
    return np.stack([w.values for w in wins])


def train(train_series: np.ndarray, config: TrainConfig, *,
          encoder=None, log=None) -> TrainedModel:
    """Fit the hypernetwork on non-overlapping training windows.

    `encoder` overrides the config's encoder (tests inject fakes); `log`
    is called with each EpochStats as it completes.
    """
    train_series = np.asarray(train_series, dtype=np.float64)
    if train_series.ndim != 2:
        raise DataError(f"training series must be (d, T), got {train_series.shape}")
    d = train_series.shape[0]

    inr_cfg = inr_config_for(config, d)
    state = init_state(hypernet_config_for(config), inr_cfg, seed=config.seed)
    encoder_kind = resolve_encoder_kind(config.encoder, d)
    own_encoder = encoder is None
    if own_encoder:
        encoder = make_encoder(encoder_kind)
    try:
        raw = _stack_windows(train_series, config.window)  # (n, d, T)
        encoded = np.stack([encoder.encode(w) for w in raw])
    finally:
        if own_encoder:
            encoder.close()

    # stats come from exactly the arrays training will see
    target_stats = NormStats.fit(np.concatenate(list(raw), axis=1))
    input_stats = NormStats.fit(np.concatenate(list(encoded), axis=1))
    inputs = (encoded - input_stats.mean) / input_stats.std
    targets = (raw - target_stats.mean) / target_stats.std

    optimizer = Adam(state.params, lr=config.lr)
    shuffle_rng = np.random.default_rng(config.seed)
    n = raw.shape[0]
    history: list[EpochStats] = []
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            step += 1
            losses.append(train_step(state, optimizer, inputs[batch], targets[batch], step))
        stats = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), steps=len(losses))
        history.append(stats)
        if log is not None:
            log(stats)

    return TrainedModel(config=config, state=state, input_stats=input_stats,
                        target_stats=target_stats, encoder_kind=encoder_kind,
                        history=history)


# ------------------------------------------------------------- inference

def _owned_spans(length: int, window: int) -> list[tuple[int, int, int]]:
    """(start, own_lo, own_hi) triples covering [0, length) without overlap.

    Full-stride windows own themselves; when the tail does not divide
    evenly, one extra window anchored at length - window owns only the
    leftover timestamps.
    """
    if length < window:
        raise DataError(f"series length {length} is shorter than window {window}")
    spans = []
    full = length // window
    for i in range(full):
        spans.append((i * window, i * window, (i + 1) * window))
    if full * window < length:
        spans.append((length - window, full * window, length))
    return spans


def reconstruct(model: TrainedModel, series: np.ndarray, *,
                encoder=None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized reconstruction and normalized target for a full series.

    Returns (recon, target), both (d, T') in the normalized space the
    model was trained in.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[0] != model.channels:
        raise DataError(
            f"series shape {series.shape} does not match model with "
            f"{model.channels} channels"
        )
    length = series.shape[1]
    window = model.config.window
    own_encoder = encoder is None
    if own_encoder:
        encoder = make_encoder(model.encoder_kind)
    recon = np.empty_like(series)
    try:
        with no_grad():
            for start, own_lo, own_hi in _owned_spans(length, window):
                values = series[:, start:start + window]
                normed = model.input_stats.normalize(encoder.encode(values))
                out = eval_inr(forward(model.state, normed)).data
                recon[:, own_lo:own_hi] = out[:, own_lo - start:own_hi - start]
    finally:
        if own_encoder:
            encoder.close()
    return recon, model.target_stats.normalize(series)


def score_series(model: TrainedModel, series: np.ndarray, *,
                 encoder=None) -> np.ndarray:
    """Per-timestamp anomaly scores (channel-mean squared error)."""
    recon, target = reconstruct(model, series, encoder=encoder)
    return anomaly_score(target, recon)


# ------------------------------------------------------------ checkpoints

def _pack_array(name: str, arr: np.ndarray) -> bytes:
    # ascontiguousarray promotes 0-d to 1-d, so scalars take the asarray path
    data = np.asarray(arr, dtype="<f8")
    if data.ndim:
        data = np.ascontiguousarray(data)
    name_bytes = name.encode("utf-8")
    head = struct.pack("<I", len(name_bytes)) + name_bytes
    head += struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape) if data.ndim else b""
    return head + data.tobytes()


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _checkpoint_arrays(model: TrainedModel) -> dict[str, np.ndarray]:
    """Canonical name -> array layout; the order here is the file order."""
    config = model.config
    gamma = _GAMMA_UNSET if config.gamma is None else config.gamma
    arrays: dict[str, np.ndarray] = {
        "config.window": np.float64(config.window),
        "config.patch": np.float64(config.patch),
        "config.lr": np.float64(config.lr),
        "config.epochs": np.float64(config.epochs),
        "config.batch_size": np.float64(config.batch_size),
        "config.seed": np.float64(config.seed),
        "config.gamma": np.float64(gamma),
        "config.trend_degree": np.float64(config.trend_degree),
        "config.global_layers": np.float64(config.global_layers),
        "config.group_layers": np.float64(config.group_layers),
        "config.groups": np.float64(config.groups),
        "config.global_dim": np.float64(config.global_dim),
        "config.group_dim": np.float64(config.group_dim),
        "config.model_dim": np.float64(config.model_dim),
        "config.heads": np.float64(config.heads),
        "config.blocks": np.float64(config.blocks),
        "config.ff_mult": np.float64(config.ff_mult),
        "config.decomposition": np.float64(config.decomposition),
        "config.group_based": np.float64(config.group_based),
        "config.encoder": np.float64(_ENCODER_CODES[config.encoder]),
        "config.point_adjust": np.float64(config.point_adjust),
        "config.vus_buffer": np.float64(config.vus_buffer),
        "model.channels": np.float64(model.channels),
        "model.encoder_kind": np.float64(_ENCODER_CODES[model.encoder_kind]),
        "norm.input.mean": model.input_stats.mean,
        "norm.input.std": model.input_stats.std,
        "norm.target.mean": model.target_stats.mean,
        "norm.target.std": model.target_stats.std,
    }
    for name, p in model.state.params.items():
        arrays[f"param.{name}"] = p.data
    return arrays


def save_checkpoint(model: TrainedModel, path) -> None:
    arrays = _checkpoint_arrays(model)
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(arrays))]
    parts += [_pack_array(name, arr) for name, arr in arrays.items()]
    Path(path).write_bytes(b"".join(parts))


def _read_arrays(path) -> dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version}, this build reads "
            f"{CHECKPOINT_VERSION}"
        )
    count = reader.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        numel = int(np.prod(shape)) if rank else 1
        payload = reader.take(8 * numel)
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path}: {len(reader.blob) - reader.pos} trailing bytes")
    return arrays


def _scalar(arrays: dict[str, np.ndarray], name: str, path) -> float:
    if name not in arrays:
        raise CheckpointError(f"{path}: missing field {name}")
    arr = arrays[name]
    if arr.size != 1:
        raise CheckpointError(f"{path}: field {name} should be a scalar, has shape {arr.shape}")
    return float(arr.reshape(()))


def load_checkpoint(path) -> TrainedModel:
    arrays = _read_arrays(path)
    gamma = _scalar(arrays, "config.gamma", path)
    encoder_code = int(_scalar(arrays, "config.encoder", path))
    if encoder_code not in _ENCODER_NAMES:
        raise CheckpointError(f"{path}: unknown encoder code {encoder_code}")
    config = TrainConfig(
        window=int(_scalar(arrays, "config.window", path)),
        patch=int(_scalar(arrays, "config.patch", path)),
        lr=_scalar(arrays, "config.lr", path),
        epochs=int(_scalar(arrays, "config.epochs", path)),
        batch_size=int(_scalar(arrays, "config.batch_size", path)),
        seed=int(_scalar(arrays, "config.seed", path)),
        gamma=None if gamma == _GAMMA_UNSET else gamma,
        trend_degree=int(_scalar(arrays, "config.trend_degree", path)),
        global_layers=int(_scalar(arrays, "config.global_layers", path)),
        group_layers=int(_scalar(arrays, "config.group_layers", path)),
        groups=int(_scalar(arrays, "config.groups", path)),
        global_dim=int(_scalar(arrays, "config.global_dim", path)),
        group_dim=int(_scalar(arrays, "config.group_dim", path)),
        model_dim=int(_scalar(arrays, "config.model_dim", path)),
        heads=int(_scalar(arrays, "config.heads", path)),
        blocks=int(_scalar(arrays, "config.blocks", path)),
        ff_mult=int(_scalar(arrays, "config.ff_mult", path)),
        decomposition=bool(_scalar(arrays, "config.decomposition", path)),
        group_based=bool(_scalar(arrays, "config.group_based", path)),
        encoder=_ENCODER_NAMES[encoder_code],
        point_adjust=bool(_scalar(arrays, "config.point_adjust", path)),
        vus_buffer=int(_scalar(arrays, "config.vus_buffer", path)),
    )
    channels = int(_scalar(arrays, "model.channels", path))
    resolved_code = int(_scalar(arrays, "model.encoder_kind", path))
    if resolved_code not in _ENCODER_NAMES:
        raise CheckpointError(f"{path}: unknown encoder code {resolved_code}")

    state = init_state(hypernet_config_for(config), inr_config_for(config, channels),
                       seed=config.seed)
    for name, p in state.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        stored = arrays[key]
        if stored.shape != p.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {stored.shape}, "
                f"expected {p.data.shape}"
            )
        p.data = stored
    extra = {k for k in arrays if k.startswith("param.")} - {
        f"param.{n}" for n in state.params
    }
    if extra:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)}")

    def _stats(prefix: str) -> NormStats:
        for suffix in ("mean", "std"):
            if f"{prefix}.{suffix}" not in arrays:
                raise CheckpointError(f"{path}: missing field {prefix}.{suffix}")
        return NormStats(mean=arrays[f"{prefix}.mean"], std=arrays[f"{prefix}.std"])

    return TrainedModel(config=config, state=state,
                        input_stats=_stats("norm.input"),
                        target_stats=_stats("norm.target"),
                        encoder_kind=_ENCODER_NAMES[resolved_code])
