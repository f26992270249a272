"""Minimal vision-transformer inference engine.

Pre-norm blocks (LN -> MSA -> residual, LN -> FFN -> residual), inference
only.  The forward pass exposes two hook points: a *reducer* applied after
a scheduled layer's MSA residual-add (so selection can use that layer's own
attention maps) and before its FFN, and a *layer hook* applied to each
block output (used e.g. for noise-injection probes).  All intermediates are
captured in a trace for analysis.

Residuals, FFN, and layer norm can be disabled through config toggles to
reproduce the pure-attention collapse regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from .layout import TokenLayout
from .ndops import as_matrix, row_softmax
from .reduction import EMPTY_SCHEDULE, ReductionSchedule, frequency_reducer
from .rng import SeededRng


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    dim: int
    heads: int
    mlp_ratio: float = 4.0
    grid_side: int = 14
    has_cls: bool = True
    patch_size: int = 16
    channels: int = 3
    num_classes: int = 1000
    layernorm_eps: float = 1e-6
    use_ffn: bool = True
    use_residual: bool = True
    use_layernorm: bool = True

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def n_tokens(self) -> int:
        return self.grid_side**2 + (1 if self.has_cls else 0)

    @property
    def ffn_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.dim))


def preset_config(name: str) -> ModelConfig:
    """DeiT-style presets: 12 layers, 14x14 patch grid, CLS token."""
    dims = {"deit-t": (192, 3), "deit-s": (384, 6), "deit-b": (768, 12)}
    if name not in dims:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(dims)}")
    d, h = dims[name]
    return ModelConfig(depth=12, dim=d, heads=h)


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray


@dataclass(frozen=True)
class Weights:
    config: ModelConfig
    patch_embed: np.ndarray
    pos_embed: np.ndarray
    cls_token: np.ndarray | None
    layers: tuple[LayerWeights, ...]


POS_EMBED_STD = 0.02


def init_weights(config: ModelConfig, rng: SeededRng) -> Weights:
    """Gaussian weights with standard deviation 1/sqrt(dim) per projection;
    position and CLS embeddings at the usual 0.02 scale; biases zero,
    layer-norm scale one.  Deterministic for a fixed rng."""
    d = config.dim
    std = 1.0 / math.sqrt(d)
    hid = config.ffn_hidden

    def g(stream_key: int, shape):
        return rng.split(stream_key).normal(shape, scale=std)

    layers = []
    for i in range(config.depth):
        base = 100 * (i + 1)
        layers.append(
            LayerWeights(
                wq=g(base + 1, (d, d)),
                wk=g(base + 2, (d, d)),
                wv=g(base + 3, (d, d)),
                wo=g(base + 4, (d, d)),
                bq=np.zeros(d),
                bk=np.zeros(d),
                bv=np.zeros(d),
                bo=np.zeros(d),
                ln1_g=np.ones(d),
                ln1_b=np.zeros(d),
                ln2_g=np.ones(d),
                ln2_b=np.zeros(d),
                fc1_w=g(base + 5, (d, hid)),
                fc1_b=np.zeros(hid),
                fc2_w=g(base + 6, (hid, d)),
                fc2_b=np.zeros(d),
            )
        )
    return Weights(
        config=config,
        patch_embed=g(1, (config.patch_size**2 * config.channels, d)),
        pos_embed=rng.split(2).normal((config.n_tokens, d), scale=POS_EMBED_STD),
        cls_token=rng.split(3).normal((d,), scale=POS_EMBED_STD) if config.has_cls else None,
        layers=tuple(layers),
    )


def layer_norm(x, gamma, beta, eps: float) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def gelu(x) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def self_attention(
    x,
    lw: LayerWeights,
    heads: int,
    layout: TokenLayout | None = None,
    omega: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head self-attention over one token matrix.

    Returns the projected output and the stack of post-softmax per-head
    attention maps, shape (heads, n, n).  When ``omega`` is given, value
    aggregation runs through the fused reweighting path; the returned maps
    are always the plain row-stochastic ones.
    """
    x = as_matrix(x, "attention input")
    n, d = x.shape
    dk = d // heads
    q = (x @ lw.wq + lw.bq).reshape(n, heads, dk).transpose(1, 0, 2)
    k = (x @ lw.wk + lw.bk).reshape(n, heads, dk).transpose(1, 0, 2)
    v = (x @ lw.wv + lw.bv).reshape(n, heads, dk).transpose(1, 0, 2)
    logits = q @ k.transpose(0, 2, 1) / math.sqrt(dk)
    attn = np.stack([row_softmax(l) for l in logits])
    if omega is not None and layout is not None:
        from .reduction import fused_reweighted_apply

        head_out = fused_reweighted_apply(attn, v, layout, omega[0], omega[1])
    else:
        head_out = attn @ v
    out = head_out.transpose(1, 0, 2).reshape(n, d) @ lw.wo + lw.bo
    return out, attn


def embed_image(config: ModelConfig, weights: Weights, image) -> np.ndarray:
    """Patchify an (H, W, C) image, project, add CLS and position embeddings."""
    img = np.asarray(image, dtype=np.float64)
    gs, p, c = config.grid_side, config.patch_size, config.channels
    if img.shape != (gs * p, gs * p, c):
        raise ValueError(f"expected image shape {(gs * p, gs * p, c)}, got {img.shape}")
    patches = (
        img.reshape(gs, p, gs, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gs * gs, p * p * c)
    )
    tokens = patches @ weights.patch_embed
    if config.has_cls:
        tokens = np.concatenate([weights.cls_token[None, :], tokens], axis=0)
    return tokens + weights.pos_embed


@dataclass(frozen=True)
class LayerRecord:
    """Intermediates of one block: attention maps, the token matrix before
    and after any reduction, the layout afterwards, and the block output."""

    layer: int
    attn: np.ndarray
    tokens_pre: np.ndarray
    tokens_post: np.ndarray
    layout: TokenLayout
    tokens_out: np.ndarray


@dataclass(frozen=True)
class ForwardResult:
    tokens: np.ndarray
    layout: TokenLayout
    trace: tuple[LayerRecord, ...]
    reducer_state: object


def forward(
    config: ModelConfig,
    weights: Weights,
    inputs,
    schedule: ReductionSchedule = EMPTY_SCHEDULE,
    reducer=frequency_reducer,
    layer_hook=None,
    collect_trace: bool = True,
) -> ForwardResult:
    """Run the full stack on one image (3-D array) or token matrix (2-D).

    At each scheduled layer the reducer runs after that layer's MSA
    residual-add, consuming that layer's own attention maps, and before the
    FFN.  ``layer_hook(layer, x, layout) -> x`` is applied to every block
    output.  The CLS token is always preserved; token counts never grow.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 3:
        x = embed_image(config, weights, inputs)
    elif inputs.ndim == 2:
        x = inputs
    else:
        raise ValueError("inputs must be an image (3-D) or a token matrix (2-D)")
    if x.shape[0] != config.n_tokens:
        raise ValueError(f"expected {config.n_tokens} tokens at entry, got {x.shape[0]}")
    layout = TokenLayout.full_grid(config.grid_side, config.has_cls)
    schedule.validate_grid(config.grid_side, config.depth)
    omega = schedule.omegas(config.heads)

    state = None
    records: list[LayerRecord] = []
    for i, lw in enumerate(weights.layers):
        layer = i + 1
        a_in = layer_norm(x, lw.ln1_g, lw.ln1_b, config.layernorm_eps) if config.use_layernorm else x
        msa_out, attn = self_attention(a_in, lw, config.heads, layout, omega)
        x_pre = x + msa_out if config.use_residual else msa_out

        step = schedule.step_at(layer)
        if step is not None:
            x_post, layout, state = reducer(x_pre, attn, layout, step, state)
        else:
            x_post = x_pre

        if config.use_ffn:
            f_in = (
                layer_norm(x_post, lw.ln2_g, lw.ln2_b, config.layernorm_eps)
                if config.use_layernorm
                else x_post
            )
            ffn_out = gelu(f_in @ lw.fc1_w + lw.fc1_b) @ lw.fc2_w + lw.fc2_b
            x = x_post + ffn_out if config.use_residual else ffn_out
        else:
            x = x_post
        if layer_hook is not None:
            x = layer_hook(layer, x, layout)
        if collect_trace:
            records.append(LayerRecord(layer, attn, x_pre, x_post, layout, x))

    return ForwardResult(x, layout, tuple(records), state)


# ---------------------------------------------------------------------------
# tensor-container (de)serialization; layer indices are 1-based in names

_LAYER_FIELDS = (
    "wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo",
    "ln1_g", "ln1_b", "ln2_g", "ln2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)


def weights_to_tensors(weights: Weights) -> dict[str, np.ndarray]:
    out = {"patch_embed": weights.patch_embed, "pos_embed": weights.pos_embed}
    if weights.cls_token is not None:
        out["cls_token"] = weights.cls_token
    for i, lw in enumerate(weights.layers):
        for f in _LAYER_FIELDS:
            out[f"layer{i + 1}.{f}"] = getattr(lw, f)
    return out


def weights_from_tensors(config: ModelConfig, tensors: dict[str, np.ndarray]) -> Weights:
    layers = []
    for i in range(config.depth):
        fields = {f: np.asarray(tensors[f"layer{i + 1}.{f}"], dtype=np.float64) for f in _LAYER_FIELDS}
        layers.append(LayerWeights(**fields))
    cls_token = tensors.get("cls_token")
    return Weights(
        config=config,
        patch_embed=np.asarray(tensors["patch_embed"], dtype=np.float64),
        pos_embed=np.asarray(tensors["pos_embed"], dtype=np.float64),
        cls_token=None if cls_token is None else np.asarray(cls_token, dtype=np.float64),
        layers=tuple(layers),
    )


def pure_attention_variant(config: ModelConfig) -> ModelConfig:
    """Config with FFN, residuals, and layer norm disabled."""
    return replace(config, use_ffn=False, use_residual=False, use_layernorm=False)
