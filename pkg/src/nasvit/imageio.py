"""PNG/JPG decoding and PNG encoding (Pillow-backed)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def is_image(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def read_image(path) -> np.ndarray:
    """Decode to float32 H x W x C in [0, 1]; C is 1 for grayscale sources, else 3."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "1", "I;16", "I", "F"):
                arr = np.asarray(im.convert("L"), dtype=np.float32)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    return arr / np.float32(255.0)


def write_png(path, pixels: np.ndarray) -> None:
    """Encode [0, 1] floats as 8-bit PNG (L for one channel, RGB for three)."""
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    a8 = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(a8).save(path, format="PNG")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
