"""Procedural images: a chest-like phantom and a 5-class texture dataset."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mixprocessing import radial_frequency

TEXTURES = ("hstripes", "vstripes", "checker", "diagonal", "blobs")


def chest_phantom(size: int = 64, seed: int = 0, noise: float = 0.06) -> np.ndarray:
    """Soft vertical gradient, bright curved ribs, and Gaussian speckle."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    base = 0.35 + 0.2 * y - 0.08 * (x - 0.5) ** 2
    ribs = np.zeros_like(base)
    for k in range(5):
        centre = 0.18 + 0.16 * k + 0.06 * (x - 0.5) ** 2
        ribs += 0.25 * np.exp(-(((y - centre) / 0.025) ** 2))
    img = base + ribs + noise * rng.standard_normal(base.shape)
    return np.clip(img, 0.0, 1.0)


def high_frequency_energy(a: np.ndarray, cutoff: float = 0.3) -> float:
    """Mean spectral energy per pixel above ``cutoff`` radial frequency."""
    power = np.abs(np.fft.fft2(a)) ** 2
    return float(power[radial_frequency(a.shape) > cutoff].sum() / a.size**2)


def texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One grayscale texture image in [0, 1] with random phase and mild noise."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    period = size / rng.uniform(3.5, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    w = 2 * np.pi / period
    if kind == "hstripes":
        img = 0.5 + 0.35 * np.sin(w * y + phase)
    elif kind == "vstripes":
        img = 0.5 + 0.35 * np.sin(w * x + phase)
    elif kind == "checker":
        img = 0.5 + 0.35 * np.sign(np.sin(w * x + phase) * np.sin(w * y + phase))
    elif kind == "diagonal":
        img = 0.5 + 0.35 * np.sin(w * (x + y) / np.sqrt(2) + phase)
    elif kind == "blobs":
        cy, cx = rng.uniform(0.3, 0.7, size=2) * size
        r2 = ((y - cy) ** 2 + (x - cx) ** 2) / (0.18 * size) ** 2
        img = 0.15 + 0.7 * np.exp(-r2)
    else:
        raise ValueError(f"unknown texture {kind!r}")
    img = img + 0.03 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def write_texture_dataset(
    root, class_names, per_class: int = 20, size: int = 32, seed: int = 0
) -> Path:
    """Write ``per_class`` PNGs of texture ``i`` into ``root/<class_names[i]>/``."""
    from .imageio import write_png

    if len(class_names) > len(TEXTURES):
        raise ValueError(f"at most {len(TEXTURES)} texture classes available")
    root = Path(root)
    rng = np.random.default_rng(seed)
    for kind, name in zip(TEXTURES, class_names):
        (root / name).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            write_png(root / name / f"{kind}_{i:03d}.png", texture(kind, size, rng))
    return root
