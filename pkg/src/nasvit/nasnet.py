"""Convolutional branch: stem, normal/reduction cells, global average pooling.

Cells are depthwise-separable blocks. Shape schedule for the default config::

    3x224x224 -> stem 16x112x112 -> 32x56x56 -> 64x28x28 -> GAP 64
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, conv2d, global_avg_pool, relu


@dataclass
class NasnetConfig:
    stem_channels: int = 16
    cells_per_stage: int = 2
    num_stages: int = 3

    def __post_init__(self):
        if self.stem_channels < 1 or self.num_stages < 1 or self.cells_per_stage < 0:
            raise ConfigError(f"invalid NasnetConfig {self}")

    @property
    def out_dim(self) -> int:
        return self.stem_channels * 2 ** (self.num_stages - 1)


def _cell_shapes(prefix: str, c_in: int, c_out: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.dw.weight": (c_in, 1, 3, 3),
        f"{prefix}.dw.bias": (c_in,),
        f"{prefix}.pw.weight": (c_out, c_in, 1, 1),
        f"{prefix}.pw.bias": (c_out,),
    }


def layer_names(cfg: NasnetConfig, prefix: str = "nasnet") -> list[str]:
    """Cell prefixes in execution order (stem first)."""
    names = [f"{prefix}.stem"]
    for s in range(cfg.num_stages):
        names += [f"{prefix}.s{s}.n{c}" for c in range(cfg.cells_per_stage)]
        if s < cfg.num_stages - 1:
            names.append(f"{prefix}.s{s}.reduce")
    return names


def param_shapes(cfg: NasnetConfig, prefix: str = "nasnet") -> dict[str, tuple[int, ...]]:
    C = cfg.stem_channels
    shapes = {f"{prefix}.stem.weight": (C, 3, 3, 3), f"{prefix}.stem.bias": (C,)}
    for s in range(cfg.num_stages):
        for c in range(cfg.cells_per_stage):
            shapes.update(_cell_shapes(f"{prefix}.s{s}.n{c}", C, C))
        if s < cfg.num_stages - 1:
            shapes.update(_cell_shapes(f"{prefix}.s{s}.reduce", C, 2 * C))
            C *= 2
    return shapes


def scoped(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """View of the params under ``prefix.`` with the prefix stripped."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def stem_forward(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """3x3 conv, stride 2, padding 1, then ReLU; halves H and W."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"stem needs even spatial dims, got {x.shape}")
    return relu(conv2d(x, p["weight"], p["bias"], stride=2, padding=1))


def _separable(x: Tensor, p: Mapping[str, Tensor], stride: int) -> Tensor:
    channels = x.shape[-3]
    y = conv2d(x, p["dw.weight"], p["dw.bias"], stride=stride, padding=1, groups=channels)
    return relu(conv2d(y, p["pw.weight"], p["pw.bias"]))


def normal_cell_forward(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Depthwise 3x3 -> pointwise 1x1 -> ReLU, plus the identity skip."""
    return add(_separable(x, p, stride=1), x)


def reduction_cell_forward(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Strided depthwise 3x3 -> pointwise to 2C -> ReLU; halves H and W."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"reduction cell needs even spatial dims, got {x.shape}")
    return _separable(x, p, stride=2)


def nasnet_feature_map(x: Tensor, cfg: NasnetConfig, params: Mapping[str, Tensor], prefix="nasnet") -> Tensor:
    """Everything up to (not including) the global average pool."""
    for name in layer_names(cfg, prefix):
        p = scoped(params, name)
        try:
            if name.endswith(".stem"):
                x = stem_forward(x, p)
            elif name.endswith(".reduce"):
                x = reduction_cell_forward(x, p)
            else:
                x = normal_cell_forward(x, p)
        except (ShapeError, KeyError) as exc:
            raise ShapeError(f"{name}: {exc}") from exc
    return x


def nasnet_forward(x: Tensor, cfg: NasnetConfig, params: Mapping[str, Tensor], prefix="nasnet") -> Tensor:
    """Branch feature vector: (3, H, W) -> (D,) or batched (B, 3, H, W) -> (B, D)."""
    return global_avg_pool(nasnet_feature_map(x, cfg, params, prefix))
