"""Decomposed implicit neural representation of one window.

The represented function is f(t) = trend + seasonal + residual: a low-degree
polynomial, a Fourier pair ladder whose frequency count is tied to the window
length, and a small MLP whose trunk is shared across channels and whose head
splits into independent per-group stacks that concatenate back to d channels.
Evaluation is differentiable with respect to every weight block, which is what
lets a hypernetwork be trained through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

__all__ = [
    "InrConfig",
    "InrWeights",
    "timestamp_grid",
    "block_specs",
    "parameter_count",
    "eval_trend",
    "eval_seasonal",
    "eval_residual",
    "eval_inr",
    "ablate",
]


@dataclass(frozen=True)
class InrConfig:
    """Architecture of one INR weight set.

    channels: d, output width. window: T, sets the seasonal ladder to
    floor(T/2) cosine/sine pairs. trend_degree: p. global_layers: M shared
    trunk layers. group_layers: N per-group layers. groups: k.
    """

    channels: int
    window: int
    trend_degree: int = 3
    global_layers: int = 3
    group_layers: int = 2
    groups: int = 1
    global_dim: int = 64
    group_dim: int = 32
    use_trend: bool = True
    use_seasonal: bool = True

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.trend_degree < 0:
            raise ConfigError(f"trend_degree must be >= 0, got {self.trend_degree}")
        if self.global_layers < 1 or self.group_layers < 1:
            raise ConfigError("global_layers and group_layers must be >= 1")
        if self.global_dim < 1 or self.group_dim < 1:
            raise ConfigError("hidden dims must be >= 1")
        if not 1 <= self.groups <= self.channels:
            raise ConfigError(
                f"groups must lie in [1, channels]={self.channels}, got {self.groups}"
            )
        if (self.groups - 1) * self._chunk > self.channels - 1:
            raise ConfigError(
                f"groups={self.groups} cannot split channels={self.channels} into "
                f"contiguous blocks of {self._chunk} with a non-empty final block"
            )

    @property
    def _chunk(self) -> int:
        return math.ceil(self.channels / self.groups)

    @property
    def freq_count(self) -> int:
        return self.window // 2

    @property
    def group_sizes(self) -> tuple[int, ...]:
        """Contiguous channel counts per group; only the last may be smaller."""
        chunk = self._chunk
        sizes = [chunk] * (self.groups - 1)
        sizes.append(self.channels - chunk * (self.groups - 1))
        return tuple(sizes)


def block_specs(config: InrConfig) -> tuple[tuple[str, tuple[int, ...]], ...]:
    """Stable enumeration of weight block names and shapes.

    The order here is load-bearing: hypernetwork tokens, weight heads, and
    checkpoint layout all index blocks by this enumeration.
    """
    specs: list[tuple[str, tuple[int, ...]]] = []
    if config.use_trend:
        specs.append(("trend", (config.trend_degree + 1, config.channels)))
    if config.use_seasonal:
        specs.append(("seasonal", (2 * config.freq_count, config.channels)))
    specs.append(("input_proj", (config.global_dim, 1)))
    for m in range(config.global_layers):
        specs.append((f"global{m}.w", (config.global_dim, config.global_dim)))
        specs.append((f"global{m}.b", (config.global_dim, 1)))
    for g, size in enumerate(config.group_sizes):
        for layer in range(config.group_layers):
            w_in = config.global_dim if layer == 0 else config.group_dim
            w_out = size if layer == config.group_layers - 1 else config.group_dim
            specs.append((f"group{g}.layer{layer}.w", (w_out, w_in)))
            specs.append((f"group{g}.layer{layer}.b", (w_out, 1)))
    return tuple(specs)


def parameter_count(config: InrConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in block_specs(config))


@dataclass
class InrWeights:
    """One weight set, or a batch of them sharing a leading extent.

    Every block is either exactly its spec shape or that shape behind one
    uniform batch dimension. Shape problems surface here, at construction,
    never during evaluation.
    """

    config: InrConfig
    blocks: dict[str, Tensor] = field(repr=False)

    def __post_init__(self):
        specs = dict(block_specs(self.config))
        missing = specs.keys() - self.blocks.keys()
        surplus = self.blocks.keys() - specs.keys()
        if missing or surplus:
            raise ConfigError(
                f"weight blocks do not match architecture: missing={sorted(missing)}, "
                f"unexpected={sorted(surplus)}"
            )
        batches = set()
        for name, spec in specs.items():
            got = self.blocks[name].shape
            if got == spec:
                batches.add(None)
            elif len(got) == len(spec) + 1 and got[1:] == spec:
                batches.add(got[0])
            else:
                raise ConfigError(f"block {name} has shape {got}, expected {spec}")
        if len(batches) != 1:
            raise ConfigError(f"inconsistent batch extents across blocks: {batches}")
        self._batch = batches.pop()

    @property
    def batch(self) -> int | None:
        return self._batch

    @classmethod
    def zeros(cls, config: InrConfig, batch: int | None = None) -> "InrWeights":
        prefix = () if batch is None else (batch,)
        return cls(config, {
            name: Tensor(np.zeros(prefix + shape)) for name, shape in block_specs(config)
        })

    @classmethod
    def random(cls, config: InrConfig, rng: np.random.Generator,
               scale: float = 0.1, batch: int | None = None) -> "InrWeights":
        prefix = () if batch is None else (batch,)
        return cls(config, {
            name: Tensor(rng.normal(scale=scale, size=prefix + shape))
            for name, shape in block_specs(config)
        })


def timestamp_grid(window: int) -> np.ndarray:
    """Window-relative coordinates t_i = i/T in [0, 1)."""
    return np.arange(window, dtype=np.float64) / float(window)


def _zeros_like_output(w: InrWeights, grid: np.ndarray) -> Tensor:
    prefix = () if w.batch is None else (w.batch,)
    return Tensor(np.zeros(prefix + (w.config.channels, grid.size)))


def _swap_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return T.transpose(t, axes)


def trend_basis(config: InrConfig, grid: np.ndarray) -> np.ndarray:
    """Row i holds t**i over the grid, degrees 0..p."""
    return np.vstack([grid**i for i in range(config.trend_degree + 1)])


def seasonal_basis(config: InrConfig, grid: np.ndarray) -> np.ndarray:
    """Rows 0..F-1 are cos(2*pi*i*t), rows F..2F-1 are sin(2*pi*i*t)."""
    freqs = np.arange(config.freq_count, dtype=np.float64)
    angles = 2.0 * np.pi * np.outer(freqs, grid)
    return np.vstack([np.cos(angles), np.sin(angles)])


def eval_trend(w: InrWeights, grid: np.ndarray | None = None) -> Tensor:
    """Polynomial component: output[c, j] = sum_i trend[i, c] * t_j**i."""
    grid = timestamp_grid(w.config.window) if grid is None else np.asarray(grid, dtype=np.float64)
    if w.config.use_trend:
        basis = Tensor(trend_basis(w.config, grid))
        return T.matmul(_swap_last(w.blocks["trend"]), basis)
    return _zeros_like_output(w, grid)


def eval_seasonal(w: InrWeights, grid: np.ndarray | None = None) -> Tensor:
    """Fourier component over frequencies 0..floor(T/2)-1, cosines then sines."""
    grid = timestamp_grid(w.config.window) if grid is None else np.asarray(grid, dtype=np.float64)
    if w.config.use_seasonal:
        basis = Tensor(seasonal_basis(w.config, grid))
        return T.matmul(_swap_last(w.blocks["seasonal"]), basis)
    return _zeros_like_output(w, grid)


def eval_residual(w: InrWeights, grid: np.ndarray | None = None) -> Tensor:
    """Group-based MLP component.

    The scalar coordinate is lifted to the trunk width, run through M shared
    ReLU layers, cloned into k group stacks, and concatenated in group order.
    The final layer of each group is affine so reconstructions can be signed;
    every hidden layer is ReLU.
    """
    cfg = w.config
    grid = timestamp_grid(cfg.window) if grid is None else np.asarray(grid, dtype=np.float64)
    t_row = Tensor(grid.reshape(1, -1))

    q = T.matmul(w.blocks["input_proj"], t_row)
    for m in range(cfg.global_layers):
        q = T.relu(T.matmul(w.blocks[f"global{m}.w"], q) + w.blocks[f"global{m}.b"])

    outputs = []
    for g in range(cfg.groups):
        qg = q
        for layer in range(cfg.group_layers):
            z = T.matmul(w.blocks[f"group{g}.layer{layer}.w"], qg) + w.blocks[f"group{g}.layer{layer}.b"]
            qg = T.relu(z) if layer < cfg.group_layers - 1 else z
        outputs.append(qg)
    return outputs[0] if len(outputs) == 1 else T.concat(outputs, axis=-2)


def eval_inr(w: InrWeights, grid: np.ndarray | None = None) -> Tensor:
    """f(t) as the literal sum of the three components, in this order."""
    return eval_trend(w, grid) + eval_seasonal(w, grid) + eval_residual(w, grid)


def ablate(w: InrWeights, trend: bool = True, seasonal: bool = True,
           group_based: bool = True) -> InrWeights:
    """Structural ablations used by the component studies.

    Disabling trend/seasonal zeroes those blocks in a copy (shapes stay
    valid). Disabling the group structure collapses the k per-group stacks
    into one functionally identical trunk of width k*group_dim with
    block-diagonal hidden layers. Output weights are detached constants.
    """
    cfg = w.config
    blocks = {name: np.array(t.data, copy=True) for name, t in w.blocks.items()}
    if not trend and cfg.use_trend:
        blocks["trend"][...] = 0.0
    if not seasonal and cfg.use_seasonal:
        blocks["seasonal"][...] = 0.0

    if group_based or cfg.groups == 1:
        return InrWeights(cfg, {name: Tensor(arr) for name, arr in blocks.items()})

    if w.batch is not None:
        raise ConfigError("group collapse is defined for unbatched weight sets")

    merged = replace(cfg, groups=1, group_dim=cfg.groups * cfg.group_dim)
    out: dict[str, np.ndarray] = {
        name: blocks[name]
        for name in blocks
        if not name.startswith("group")
    }
    n_layers = cfg.group_layers
    for layer in range(n_layers):
        ws = [blocks[f"group{g}.layer{layer}.w"] for g in range(cfg.groups)]
        bs = [blocks[f"group{g}.layer{layer}.b"] for g in range(cfg.groups)]
        if layer == 0:
            merged_w = np.vstack(ws)
        else:
            rows = sum(m.shape[0] for m in ws)
            cols = sum(m.shape[1] for m in ws)
            merged_w = np.zeros((rows, cols))
            r = c = 0
            for m in ws:
                merged_w[r:r + m.shape[0], c:c + m.shape[1]] = m
                r += m.shape[0]
                c += m.shape[1]
        out[f"group0.layer{layer}.w"] = merged_w
        out[f"group0.layer{layer}.b"] = np.vstack(bs)
    return InrWeights(merged, {name: Tensor(arr) for name, arr in out.items()})
