"""Transformer branch: patchify, linear embedding + learned positions, pre-norm encoder.

No class token; the branch output is the mean over token vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .nasnet import scoped
from .tensor import (
    Tensor,
    add,
    dropout,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
)


@dataclass
class VitConfig:
    patch_size: int = 16
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.patch_size < 1 or self.num_layers < 0 or self.ffn_dim < 1:
            raise ConfigError(f"invalid VitConfig {self}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def num_patches(self, image_size: int) -> int:
        if image_size % self.patch_size:
            raise ConfigError(f"image size {image_size} not divisible by patch size {self.patch_size}")
        return (image_size // self.patch_size) ** 2


def param_shapes(cfg: VitConfig, image_size: int, prefix: str = "vit") -> dict[str, tuple[int, ...]]:
    d, f = cfg.embed_dim, cfg.ffn_dim
    shapes = {
        f"{prefix}.patch.weight": (d, 3 * cfg.patch_size**2),
        f"{prefix}.patch.bias": (d,),
        f"{prefix}.pos": (cfg.num_patches(image_size), d),
    }
    for l in range(cfg.num_layers):
        q = f"{prefix}.l{l}"
        shapes.update({f"{q}.ln1.gamma": (d,), f"{q}.ln1.beta": (d,)})
        for proj in ("q", "k", "v", "o"):
            shapes.update({f"{q}.attn.{proj}.weight": (d, d), f"{q}.attn.{proj}.bias": (d,)})
        shapes.update({f"{q}.ln2.gamma": (d,), f"{q}.ln2.beta": (d,)})
        shapes.update({f"{q}.ffn1.weight": (f, d), f"{q}.ffn1.bias": (f,)})
        shapes.update({f"{q}.ffn2.weight": (d, f), f"{q}.ffn2.bias": (d,)})
    return shapes


def patchify(x: Tensor, patch: int = 16) -> Tensor:
    """(C, H, W) -> (N, C*P*P); patches in row-major grid order.

    Each row is one patch flattened channel-major, then row-major within the patch.
    Batched input (B, C, H, W) gives (B, N, C*P*P).
    """
    batched = x.ndim == 4
    C, H, W = x.shape[-3:]
    if H % patch or W % patch:
        raise ShapeError(f"image {H}x{W} not divisible into {patch}x{patch} patches")
    gh, gw = H // patch, W // patch
    B = x.shape[0] if batched else 1
    t = reshape(x, (B, C, gh, patch, gw, patch))
    t = transpose(t, (0, 2, 4, 1, 3, 5))
    t = reshape(t, (B, gh * gw, C * patch * patch))
    return t if batched else reshape(t, t.shape[1:])


def embed(patches: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Linear patch projection plus the positional table."""
    if patches.shape[-2] != p["pos"].shape[0]:
        raise ShapeError(f"{patches.shape[-2]} patches but positional table has {p['pos'].shape[0]} rows")
    return add(linear(patches, p["patch.weight"], p["patch.bias"]), p["pos"])


def multi_head_attention(x: Tensor, p: Mapping[str, Tensor], heads: int):
    """Scaled dot-product self-attention. Returns (output, attention weights (B, h, N, N))."""
    B, N, d = x.shape
    dh = d // heads

    def split(t):
        return transpose(reshape(t, (B, N, heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, p["q.weight"], p["q.bias"]))
    k = split(linear(x, p["k.weight"], p["k.bias"]))
    v = split(linear(x, p["v.weight"], p["v.bias"]))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, N, d))
    return linear(ctx, p["o.weight"], p["o.bias"]), attn


def encoder_layer(
    tokens: Tensor,
    p: Mapping[str, Tensor],
    cfg: VitConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[list] = None,
) -> Tensor:
    """``t += MHSA(LN(t)); t += FFN(LN(t))``, dropout on both residual branches.

    ``trace``, if given, receives the attention weight tensor.
    """
    single = tokens.ndim == 2
    t = reshape(tokens, (1,) + tokens.shape) if single else tokens
    attn_out, attn = multi_head_attention(
        layer_norm(t, p["ln1.gamma"], p["ln1.beta"]), scoped(p, "attn"), cfg.num_heads
    )
    if trace is not None:
        trace.append(attn)
    t = add(t, dropout(attn_out, cfg.dropout_rate, rng, training))
    h = relu(linear(layer_norm(t, p["ln2.gamma"], p["ln2.beta"]), p["ffn1.weight"], p["ffn1.bias"]))
    t = add(t, dropout(linear(h, p["ffn2.weight"], p["ffn2.bias"]), cfg.dropout_rate, rng, training))
    return reshape(t, tokens.shape) if single else t


def vit_forward(
    x: Tensor,
    cfg: VitConfig,
    params: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    prefix: str = "vit",
    trace: Optional[list] = None,
) -> Tensor:
    """(3, H, W) -> (d,), or batched (B, 3, H, W) -> (B, d)."""
    p = scoped(params, prefix)
    tokens = embed(patchify(x, cfg.patch_size), p)
    for l in range(cfg.num_layers):
        try:
            tokens = encoder_layer(tokens, scoped(p, f"l{l}"), cfg, training, rng, trace)
        except (ShapeError, KeyError) as exc:
            raise ShapeError(f"{prefix} encoder layer {l}: {exc}") from exc
    return mean(tokens, axis=-2)
