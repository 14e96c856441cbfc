"""Class-labelled image directories, stratified splits, augmentation and batching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InputError, NasvitError
from .imageio import is_image, read_image
from .mixprocessing import ImageBuffer, PreprocessConfig, mixprocess
from .tensor import Tensor

CLASS_NAMES = ("normal", "pneumonia", "tuberculosis", "covid19", "lung_cancer")
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    root: str
    samples: list[tuple[str, int]]
    class_names: tuple[str, ...] = CLASS_NAMES
    split: Optional[list[str]] = None
    seed: int = 0

    def path(self, i: int) -> Path:
        return Path(self.root) / self.samples[i][0]

    def indices(self, split: str) -> list[int]:
        if self.split is None:
            raise ContractError("manifest has no split assignment")
        return [i for i, s in enumerate(self.split) if s == split]

    def class_counts(self, split: Optional[str] = None) -> list[int]:
        idx = range(len(self.samples)) if split is None else self.indices(split)
        counts = [0] * len(self.class_names)
        for i in idx:
            counts[self.samples[i][1]] += 1
        return counts


@dataclass
class AugmentConfig:
    hflip_prob: float = 0.5
    rotation_max_deg: float = 10.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    brightness_delta_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(float(s) for s in self.scale_range)
        if not 0 <= self.hflip_prob <= 1:
            raise ConfigError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        lo, hi = self.scale_range
        if not lo <= 1 <= hi or lo <= 0:
            raise ConfigError(f"scale_range must bracket 1.0, got {self.scale_range}")
        if self.rotation_max_deg < 0 or self.brightness_delta_max < 0:
            raise ConfigError("augmentation magnitudes must be non-negative")


@dataclass
class Batch:
    images: Tensor
    labels: list[int]
    indices: list[int] = field(default_factory=list)


def scan_directory(root, class_names: Sequence[str] = CLASS_NAMES) -> DatasetManifest:
    """One subdirectory per class; samples sorted by relative path."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    present = sorted(p.name for p in root.iterdir() if p.is_dir())
    unknown = [d for d in present if d not in class_names]
    if unknown:
        raise InputError(f"unknown class directories {unknown}; expected {list(class_names)}")
    missing = [c for c in class_names if c not in present]
    if missing:
        raise InputError(f"missing class directories {missing}; expected {list(class_names)}")
    samples = []
    for cid, name in enumerate(class_names):
        for p in (root / name).rglob("*"):
            if p.is_file() and is_image(p):
                samples.append((p.relative_to(root).as_posix(), cid))
    if not samples:
        raise InputError(f"no images found under {root}")
    samples.sort()
    return DatasetManifest(str(root), samples, tuple(class_names))


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer sizes summing to ``n``, each within 1 of ``n * fraction``."""
    exact = [n * f for f in fractions]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def stratified_split(
    m: DatasetManifest, fractions=(0.70, 0.15, 0.15), seed: int = 0
) -> DatasetManifest:
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError(f"split fractions must be 3 positive values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    split = [""] * len(m.samples)
    for cid, name in enumerate(m.class_names):
        members = [i for i, (_, c) in enumerate(m.samples) if c == cid]
        if len(members) < 3:
            raise InputError(f"class '{name}' has {len(members)} samples; need at least 3 to split")
        members = [members[k] for k in rng.permutation(len(members))]
        n_train, n_val, _ = largest_remainder(len(members), fractions)
        for k, i in enumerate(members):
            split[i] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return replace(m, split=split, seed=seed)


def write_manifest_csv(m: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "class", "split"])
        for i, (p, c) in enumerate(m.samples):
            w.writerow([p, m.class_names[c], m.split[i] if m.split else ""])


# ---------------------------------------------------------------------------
# image geometry


def _bilinear_sample(px: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample H x W x C pixels at fractional coords; out-of-range coords clamp to edge."""
    H, W = px.shape[:2]
    ys = np.clip(ys, 0, H - 1)
    xs = np.clip(xs, 0, W - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    p = px.astype(np.float64)
    top = p[y0, x0] * (1 - wx) + p[y0, x1] * wx
    bottom = p[y1, x0] * (1 - wx) + p[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize_bilinear(px: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centre bilinear resize of H x W x C pixels."""
    H, W = px.shape[:2]
    h, w = size
    if (H, W) == (h, w):
        return px.copy()
    ys = (np.arange(h) + 0.5) * (H / h) - 0.5
    xs = (np.arange(w) + 0.5) * (W / w) - 0.5
    out = _bilinear_sample(px, ys[:, None] * np.ones((1, w)), np.ones((h, 1)) * xs[None, :])
    return out.astype(np.float32)


def to_rgb(img: ImageBuffer) -> ImageBuffer:
    if img.channels == 3:
        return img
    return img.with_pixels(np.repeat(img.pixels, 3, axis=2))


def load_resize(path, target: tuple[int, int] = (224, 224)) -> ImageBuffer:
    """Decode, bilinear-resize to ``target`` and replicate grayscale to 3 channels."""
    img = ImageBuffer(read_image(path), source_path=str(path))
    return to_rgb(img.with_pixels(resize_bilinear(img.pixels, target)))


def normalize(img: ImageBuffer) -> Tensor:
    """Per-channel ``(x - mean) / std`` with ImageNet statistics; returns C x H x W."""
    if img.channels != 3:
        raise InputError(f"normalize needs 3 channels, got {img.channels}")
    chw = np.transpose(img.pixels, (2, 0, 1)).astype(np.float32)
    return Tensor((chw - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None])


def denormalize(t: Tensor) -> ImageBuffer:
    data = np.asarray(t.data, dtype=np.float32)
    hwc = data * IMAGENET_STD[:, None, None] + IMAGENET_MEAN[:, None, None]
    return ImageBuffer(np.transpose(hwc, (1, 2, 0)))


def hflip(img: ImageBuffer) -> ImageBuffer:
    return img.with_pixels(img.pixels[:, ::-1, :].copy())


def augment(img: ImageBuffer, cfg: AugmentConfig, sample_index: int, epoch: int = 0) -> ImageBuffer:
    """Random flip, rotation+scale about the centre, and brightness shift.

    Randomness comes from a substream keyed by (seed, sample_index, epoch); all
    four draws are always taken so the stream layout does not depend on config.
    """
    rng = np.random.default_rng([cfg.seed, sample_index, epoch])
    flip = rng.random() < cfg.hflip_prob
    angle = math.radians(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
    scale = rng.uniform(*cfg.scale_range)
    delta = rng.uniform(-cfg.brightness_delta_max, cfg.brightness_delta_max)

    out = hflip(img) if flip else img
    px = out.pixels
    if angle != 0.0 or scale != 1.0:
        H, W = px.shape[:2]
        cy, cx = (H - 1) / 2, (W - 1) / 2
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        dy, dx = (yy - cy) / scale, (xx - cx) / scale
        cos, sin = math.cos(angle), math.sin(angle)
        px = _bilinear_sample(px, cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    if delta != 0.0:
        px = np.clip(px + delta, 0.0, 1.0)
    if px is out.pixels:
        return out.with_pixels(px.copy())
    return out.with_pixels(px.astype(np.float32))


# ---------------------------------------------------------------------------
# batching


def prepare_image(path, preprocess: PreprocessConfig, image_size: int) -> ImageBuffer:
    """Decode, enhance at native resolution, then resize to the model input size."""
    try:
        img = ImageBuffer(read_image(path), source_path=str(path))
        img = mixprocess(img, preprocess)
    except ConfigError:
        raise
    except NasvitError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return to_rgb(img.with_pixels(resize_bilinear(img.pixels, (image_size, image_size))))


def batches(
    m: DatasetManifest,
    split: str,
    batch_size: int,
    preprocess: Optional[PreprocessConfig] = None,
    aug: Optional[AugmentConfig] = None,
    epoch: int = 0,
    image_size: int = 224,
    shuffle_seed: Optional[int] = None,
    cache: Optional[dict] = None,
) -> Iterator[Batch]:
    """Yield normalized batches of one split.

    Train order is a fresh permutation per epoch (seeded by ``shuffle_seed`` or the
    manifest seed); val/test keep manifest order. ``cache`` memoizes the enhanced,
    resized image per sample since that part is deterministic.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if aug is not None and split != "train":
        raise ContractError("augmentation is only allowed on the train split")
    preprocess = preprocess or PreprocessConfig()
    order = m.indices(split)
    if split == "train":
        seed = m.seed if shuffle_seed is None else shuffle_seed
        perm = np.random.default_rng([seed, epoch]).permutation(len(order))
        order = [order[k] for k in perm]
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        tensors = []
        for i in chunk:
            if cache is not None and i in cache:
                img = cache[i]
            else:
                img = prepare_image(m.path(i), preprocess, image_size)
                if cache is not None:
                    cache[i] = img
            if aug is not None:
                img = augment(img, aug, i, epoch)
            tensors.append(normalize(img).data)
        yield Batch(Tensor(np.stack(tensors)), [m.samples[i][1] for i in chunk], chunk)
