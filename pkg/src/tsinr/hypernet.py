"""Transformer hypernetwork: one forward pass maps a feature-encoded window
to a full INR weight set.

The window is cut into patches, embedded, and concatenated with G learnable
INR tokens, one per weight block. Six pre-norm attention/feed-forward blocks
let data tokens and INR tokens interact; afterwards each INR token is decoded
by its own affine head into one weight block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .inr import InrConfig, InrWeights, block_specs
from .tensor import Tensor

__all__ = [
    "HyperNetConfig",
    "HyperNetState",
    "TokenSequence",
    "init_state",
    "patchify",
    "encode_tokens",
    "emit_weights",
    "forward",
]

LN_EPS = 1e-5

# Emitted INR weights are a product of head weights and token activations,
# so plain fan-based init would hand the INR O(1) weights whose layered
# composition explodes the first reconstructions. Shrinking the decode
# heads keeps the initial INR near zero and the initial loss near the
# target variance.
HEAD_INIT_SCALE = 0.01


@dataclass(frozen=True)
class HyperNetConfig:
    patch_len: int = 10
    model_dim: int = 128
    heads: int = 4
    blocks: int = 6
    ff_mult: int = 4
    token_init_std: float = 0.02

    def __post_init__(self):
        if min(self.patch_len, self.model_dim, self.heads, self.blocks, self.ff_mult) < 1:
            raise ConfigError("hypernet extents must all be >= 1")
        if self.model_dim % self.heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )


@dataclass
class TokenSequence:
    """Data tokens followed by INR tokens; boundary is the split index."""

    tokens: Tensor
    boundary: int


@dataclass
class HyperNetState:
    """All trainable parameters, in a stable insertion order.

    The order doubles as the checkpoint layout and the optimizer's slot
    order, so it must never depend on anything but the two configs.
    """

    config: HyperNetConfig
    inr_config: InrConfig
    params: dict[str, Tensor] = field(repr=False)

    @property
    def n_patches(self) -> int:
        return self.inr_config.window // self.config.patch_len

    @property
    def n_inr_tokens(self) -> int:
        return len(block_specs(self.inr_config))


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_state(config: HyperNetConfig, inr_config: InrConfig, seed: int) -> HyperNetState:
    if inr_config.window % config.patch_len:
        raise ConfigError(
            f"window {inr_config.window} not divisible by patch length {config.patch_len}"
        )
    rng = np.random.default_rng(seed)
    d, dim = inr_config.channels, config.model_dim
    n_patches = inr_config.window // config.patch_len
    specs = block_specs(inr_config)

    arrays: dict[str, np.ndarray] = {}
    arrays["patch_embed.w"] = _glorot(rng, (d * config.patch_len, dim))
    arrays["patch_embed.b"] = np.zeros(dim)
    arrays["pos_embed"] = rng.normal(0.0, config.token_init_std, size=(n_patches, dim))
    arrays["inr_tokens"] = rng.normal(0.0, config.token_init_std, size=(len(specs), dim))
    ff_dim = config.ff_mult * dim
    for i in range(config.blocks):
        p = f"block{i}."
        arrays[p + "ln1.g"] = np.ones(dim)
        arrays[p + "ln1.b"] = np.zeros(dim)
        for proj in ("q", "k", "v", "o"):
            arrays[p + f"attn.w{proj}"] = _glorot(rng, (dim, dim))
            arrays[p + f"attn.b{proj}"] = np.zeros(dim)
        arrays[p + "ln2.g"] = np.ones(dim)
        arrays[p + "ln2.b"] = np.zeros(dim)
        arrays[p + "ff.w1"] = _glorot(rng, (dim, ff_dim))
        arrays[p + "ff.b1"] = np.zeros(ff_dim)
        arrays[p + "ff.w2"] = _glorot(rng, (ff_dim, dim))
        arrays[p + "ff.b2"] = np.zeros(dim)
    for name, shape in specs:
        numel = int(np.prod(shape))
        arrays[f"head.{name}.w"] = HEAD_INIT_SCALE * _glorot(rng, (dim, numel))
        arrays[f"head.{name}.b"] = np.zeros(numel)

    params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return HyperNetState(config=config, inr_config=inr_config, params=params)


def patchify(values: np.ndarray, patch_len: int) -> Tensor:
    """Cut (d, T) or (batch, d, T) values into rows of d*P, channel-major.

    Patch j holds timestamps [j*P, (j+1)*P): channel 0's P values, then
    channel 1's, and so on. Returns a constant tensor; windows carry no
    gradient.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim not in (2, 3):
        raise ConfigError(f"patchify expects (d, T) or (batch, d, T), got {values.shape}")
    t_len = values.shape[-1]
    if t_len % patch_len:
        raise ConfigError(f"window length {t_len} not divisible by patch length {patch_len}")
    n = t_len // patch_len
    if values.ndim == 2:
        d = values.shape[0]
        rows = values.reshape(d, n, patch_len).transpose(1, 0, 2).reshape(n, d * patch_len)
    else:
        b, d = values.shape[0], values.shape[1]
        rows = values.reshape(b, d, n, patch_len).transpose(0, 2, 1, 3).reshape(b, n, d * patch_len)
    return Tensor(rows)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = T.square(centered).mean(axis=-1, keepdims=True)
    return centered * T.pow_scalar(var + LN_EPS, -0.5) * gain + bias


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, dim = x.shape
    dh = dim // heads
    split = x.reshape(tuple(lead) + (s, heads, dh))
    nd = split.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return T.transpose(split, perm)


def _merge_heads(x: Tensor) -> Tensor:
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    merged = T.transpose(x, perm)
    *lead, s, heads, dh = merged.shape
    return merged.reshape(tuple(lead) + (s, heads * dh))


def attention(x: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    q = T.matmul(x, params[prefix + "wq"]) + params[prefix + "bq"]
    k = T.matmul(x, params[prefix + "wk"]) + params[prefix + "bk"]
    v = T.matmul(x, params[prefix + "wv"]) + params[prefix + "bv"]
    dh = x.shape[-1] // heads
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = T.matmul(qh, _swap_last(kh)) * (1.0 / np.sqrt(dh))
    mixed = T.matmul(T.softmax_lastdim(scores), vh)
    return T.matmul(_merge_heads(mixed), params[prefix + "wo"]) + params[prefix + "bo"]


def _swap_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return T.transpose(t, axes)


def encode_tokens(state: HyperNetState, seq: TokenSequence) -> TokenSequence:
    """Run the stack of pre-norm residual encoder blocks."""
    p = state.params
    x = seq.tokens
    if x.shape[-1] != state.config.model_dim:
        raise ConfigError(
            f"token width {x.shape[-1]} does not match model_dim {state.config.model_dim}"
        )
    for i in range(state.config.blocks):
        pre = f"block{i}."
        x = x + attention(layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]),
                          p, pre + "attn.", state.config.heads)
        h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = T.relu(T.matmul(h, p[pre + "ff.w1"]) + p[pre + "ff.b1"])
        x = x + (T.matmul(h, p[pre + "ff.w2"]) + p[pre + "ff.b2"])
    return TokenSequence(tokens=x, boundary=seq.boundary)


def emit_weights(state: HyperNetState, seq: TokenSequence) -> InrWeights:
    """Decode each INR token through its head into its weight block."""
    p = state.params
    specs = block_specs(state.inr_config)
    batched = seq.tokens.ndim == 3
    blocks: dict[str, Tensor] = {}
    for g, (name, shape) in enumerate(specs):
        token = T.slice_axis(seq.tokens, -2, seq.boundary + g, seq.boundary + g + 1)
        flat = T.matmul(token, p[f"head.{name}.w"]) + p[f"head.{name}.b"]
        target = (seq.tokens.shape[0],) + shape if batched else shape
        blocks[name] = flat.reshape(target)
    return InrWeights(state.inr_config, blocks)


def forward(state: HyperNetState, values: np.ndarray) -> InrWeights:
    """patchify -> embed -> join INR tokens -> encode -> emit weights."""
    patches = patchify(values, state.config.patch_len)
    if patches.shape[-2] != state.n_patches:
        raise ConfigError(
            f"window produced {patches.shape[-2]} patches, state expects {state.n_patches}"
        )
    if patches.shape[-1] != state.params["patch_embed.w"].shape[0]:
        raise ConfigError(
            f"patch width {patches.shape[-1]} does not match embed input "
            f"{state.params['patch_embed.w'].shape[0]} (channel count mismatch)"
        )
    embedded = T.matmul(patches, state.params["patch_embed.w"]) + state.params["patch_embed.b"]
    embedded = embedded + state.params["pos_embed"]
    tokens = state.params["inr_tokens"]
    if patches.ndim == 3:
        # lift the shared tokens across the batch through broadcast-add
        tokens = tokens + Tensor(np.zeros((patches.shape[0], 1, 1)))
    seq = TokenSequence(tokens=T.concat([embedded, tokens], axis=-2), boundary=state.n_patches)
    return emit_weights(state, encode_tokens(state, seq))
