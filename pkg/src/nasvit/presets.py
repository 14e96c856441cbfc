"""Small named configurations used by the tests, scripts and acceptance suite."""

from __future__ import annotations

from .config import DataConfig, RunConfig, TrainConfig
from .dataset import AugmentConfig
from .fusion import FusionConfig, ModelConfig
from .mixprocessing import PreprocessConfig
from .nasnet import NasnetConfig
from .vit import VitConfig


def gradcheck_model() -> ModelConfig:
    """16x16 input; every layer type present, two of each cell kind kept tiny."""
    return ModelConfig(
        image_size=16,
        nasnet=NasnetConfig(stem_channels=2, cells_per_stage=1, num_stages=2),
        vit=VitConfig(patch_size=8, embed_dim=8, num_layers=1, num_heads=2, ffn_dim=8),
        fusion=FusionConfig(fusion_dim=8, mlp_hidden=6),
    )


def texture_model() -> ModelConfig:
    """32x32 input model that fits the synthetic texture set in a few seconds."""
    return ModelConfig(
        image_size=32,
        nasnet=NasnetConfig(stem_channels=8, cells_per_stage=1, num_stages=2),
        vit=VitConfig(patch_size=8, embed_dim=16, num_layers=1, num_heads=2, ffn_dim=32),
        fusion=FusionConfig(fusion_dim=16, mlp_hidden=16),
    )


def small_image_preprocess() -> PreprocessConfig:
    """Default chain with tile grid and kernel radii scaled down for 32px images."""
    return PreprocessConfig(clahe_tiles=(4, 4), bilateral_sigma_spatial=1.0, morph_se_radius=1)


def texture_run(epochs: int = 150, seed: int = 0) -> RunConfig:
    return RunConfig(
        model=texture_model(),
        preprocess=small_image_preprocess(),
        augment=AugmentConfig(seed=seed),
        train=TrainConfig(epochs=epochs, seed=seed),
        data=DataConfig(split_seed=seed),
    )
