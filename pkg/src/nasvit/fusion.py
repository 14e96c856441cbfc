"""Branch projection, multiplicative fusion, MLP softmax head and the full model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import CLASS_NAMES
from .errors import ConfigError, ShapeError
from .nasnet import NasnetConfig, nasnet_forward, scoped
from .nasnet import param_shapes as nasnet_shapes
from .tensor import Tensor, dropout, linear, mul, relu, softmax
from .vit import VitConfig, vit_forward
from .vit import param_shapes as vit_shapes

NUM_CLASSES = 5


@dataclass
class FusionConfig:
    fusion_dim: int = 64
    mlp_hidden: int = 32
    num_classes: int = NUM_CLASSES
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(f"num_classes must be {NUM_CLASSES}, got {self.num_classes}")
        if self.fusion_dim < 1 or self.mlp_hidden < 1:
            raise ConfigError(f"invalid FusionConfig {self}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class ModelConfig:
    image_size: int = 224
    nasnet: NasnetConfig = field(default_factory=NasnetConfig)
    vit: VitConfig = field(default_factory=VitConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.image_size < 2 or self.image_size % 2:
            raise ConfigError(f"image_size must be even and >= 2, got {self.image_size}")
        if self.image_size % 2 ** self.nasnet.num_stages:
            raise ConfigError(
                f"image_size {self.image_size} cannot be halved {self.nasnet.num_stages} times evenly"
            )
        self.vit.num_patches(self.image_size)


@dataclass
class ClassProbs:
    probabilities: np.ndarray
    predicted_class: int
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def class_name(self) -> str:
        return self.class_names[self.predicted_class]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in canonical (checkpoint) order."""
    shapes = dict(nasnet_shapes(cfg.nasnet))
    shapes.update(vit_shapes(cfg.vit, cfg.image_size))
    Df, hidden = cfg.fusion.fusion_dim, cfg.fusion.mlp_hidden
    shapes.update(
        {
            "fusion.proj_n.weight": (Df, cfg.nasnet.out_dim),
            "fusion.proj_n.bias": (Df,),
            "fusion.proj_v.weight": (Df, cfg.vit.embed_dim),
            "fusion.proj_v.bias": (Df,),
            "head.fc1.weight": (hidden, Df),
            "head.fc1.bias": (hidden,),
            "head.fc2.weight": (cfg.fusion.num_classes, hidden),
            "head.fc2.bias": (cfg.fusion.num_classes,),
        }
    )
    return shapes


def project(f: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Linear map of a branch feature onto the shared fusion width."""
    return linear(f, weight, bias)


def fuse(fn: Tensor, fv: Tensor) -> Tensor:
    """Elementwise product of the two projected branch features."""
    if fn.shape != fv.shape:
        raise ShapeError(f"fuse: length mismatch {fn.shape} vs {fv.shape}")
    return mul(fn, fv)


def mlp_head(
    f: Tensor,
    p: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_rate: float = 0.1,
) -> Tensor:
    """linear -> ReLU -> dropout -> linear -> softmax; returns class probabilities."""
    h = dropout(relu(linear(f, p["fc1.weight"], p["fc1.bias"])), dropout_rate, rng, training)
    return softmax(linear(h, p["fc2.weight"], p["fc2.bias"]))


def model_forward(
    x: Tensor,
    cfg: ModelConfig,
    params: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Image(s) -> class probabilities, (5,) or batched (B, 5)."""
    try:
        fn = nasnet_forward(x, cfg.nasnet, params)
    except ShapeError as exc:
        raise ShapeError(f"nasnet branch: {exc}") from exc
    try:
        fv = vit_forward(x, cfg.vit, params, training, rng)
    except ShapeError as exc:
        raise ShapeError(f"vit branch: {exc}") from exc
    fused = fuse(
        project(fn, params["fusion.proj_n.weight"], params["fusion.proj_n.bias"]),
        project(fv, params["fusion.proj_v.weight"], params["fusion.proj_v.bias"]),
    )
    return mlp_head(fused, scoped(params, "head"), training, rng, cfg.fusion.dropout_rate)


def argmax_lowest(probs: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    return int(np.argmax(probs))


def to_class_probs(probs: Tensor, class_names: Sequence[str] = CLASS_NAMES) -> list[ClassProbs]:
    rows = probs.data if probs.ndim == 2 else probs.data[None]
    return [ClassProbs(r.copy(), argmax_lowest(r), tuple(class_names)) for r in rows]
