"""MixProcessing: wavelet detail boost, CLAHE, Fourier bandpass, bilateral, morphology.

Kernels take and return 2-D float arrays in [0, 1]. :func:`mixprocess` runs the
fixed five-stage chain on an :class:`ImageBuffer`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, StageError

HIST_BINS = 256
LUMA = np.array([0.299, 0.587, 0.114])
STAGES = ("wavelet", "clahe", "fourier", "bilateral", "morphology")


@dataclass
class ImageBuffer:
    """H x W x C image with values in [0, 1] plus provenance."""

    pixels: np.ndarray
    source_path: Optional[str] = None
    label: Optional[int] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError(f"image must be HxW, HxWx1 or HxWx3, got {np.shape(self.pixels)}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Luminance plane as float64 (0.299 R + 0.587 G + 0.114 B for colour)."""
        px = self.pixels.astype(np.float64)
        return px[:, :, 0] if self.channels == 1 else px @ LUMA

    def with_pixels(self, pixels: np.ndarray) -> "ImageBuffer":
        return ImageBuffer(pixels, self.source_path, self.label)


@dataclass
class PreprocessConfig:
    wavelet_detail_gain: float = 1.5
    clahe_tiles: tuple[int, int] = (8, 8)
    clahe_clip: float = 2.0
    band_low: float = 0.0
    band_high: float = 0.45
    bilateral_sigma_spatial: float = 2.0
    bilateral_sigma_range: float = 0.1
    morph_se_radius: int = 3
    morph_blend_alpha: float = 0.7
    enable_wavelet: bool = True
    enable_clahe: bool = True
    enable_fourier: bool = True
    enable_bilateral: bool = True
    enable_morphology: bool = True

    def __post_init__(self):
        self.clahe_tiles = tuple(int(t) for t in self.clahe_tiles)
        if self.wavelet_detail_gain < 1:
            raise ConfigError(f"wavelet_detail_gain must be >= 1, got {self.wavelet_detail_gain}")
        if len(self.clahe_tiles) != 2 or min(self.clahe_tiles) < 1:
            raise ConfigError(f"clahe_tiles must be two positive ints, got {self.clahe_tiles}")
        if self.clahe_clip <= 0:
            raise ConfigError(f"clahe_clip must be > 0, got {self.clahe_clip}")
        if not 0 <= self.band_low < self.band_high:
            raise ConfigError(f"need 0 <= band_low < band_high, got {self.band_low}, {self.band_high}")
        if self.bilateral_sigma_spatial <= 0 or self.bilateral_sigma_range <= 0:
            raise ConfigError("bilateral sigmas must be > 0")
        if self.morph_se_radius < 1:
            raise ConfigError(f"morph_se_radius must be >= 1, got {self.morph_se_radius}")
        if not 0 <= self.morph_blend_alpha <= 1:
            raise ConfigError(f"morph_blend_alpha must be in [0, 1], got {self.morph_blend_alpha}")

    def enabled(self, stage: str) -> bool:
        return getattr(self, f"enable_{stage}")


def _plane(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.gray()
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"expected a 2-D grayscale plane, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# wavelet


@dataclass
class WaveletSubbands:
    """One-level orthonormal Haar subbands.

    For each 2x2 block [[a, b], [c, d]]:
    approx = (a+b+c+d)/2, detail_h = (a+b-c-d)/2,
    detail_v = (a-b+c-d)/2, detail_d = (a-b-c+d)/2.
    ``pad_rows``/``pad_cols`` record the edge padding added to odd extents.
    """

    approx: np.ndarray
    detail_h: np.ndarray
    detail_v: np.ndarray
    detail_d: np.ndarray
    pad_rows: int = 0
    pad_cols: int = 0


def dwt2_haar(img) -> WaveletSubbands:
    a = _plane(img)
    if a.size == 0:
        raise InputError("cannot decompose an empty image")
    pr, pc = a.shape[0] % 2, a.shape[1] % 2
    if pr or pc:
        a = np.pad(a, ((0, pr), (0, pc)), mode="edge")
    tl, tr = a[0::2, 0::2], a[0::2, 1::2]
    bl, br = a[1::2, 0::2], a[1::2, 1::2]
    return WaveletSubbands(
        approx=(tl + tr + bl + br) / 2,
        detail_h=(tl + tr - bl - br) / 2,
        detail_v=(tl - tr + bl - br) / 2,
        detail_d=(tl - tr - bl + br) / 2,
        pad_rows=pr,
        pad_cols=pc,
    )


def idwt2_haar(sub: WaveletSubbands, crop: bool = True) -> np.ndarray:
    """Invert :func:`dwt2_haar`; result clamped to [0, 1].

    With ``crop`` the parity padding is removed, giving the original extent.
    """
    A, Hd, V, D = sub.approx, sub.detail_h, sub.detail_v, sub.detail_d
    if not (A.shape == Hd.shape == V.shape == D.shape) or A.ndim != 2:
        raise InputError(
            f"inconsistent subband shapes {A.shape}, {Hd.shape}, {V.shape}, {D.shape}"
        )
    out = np.empty((2 * A.shape[0], 2 * A.shape[1]))
    out[0::2, 0::2] = (A + Hd + V + D) / 2
    out[0::2, 1::2] = (A + Hd - V - D) / 2
    out[1::2, 0::2] = (A - Hd + V - D) / 2
    out[1::2, 1::2] = (A - Hd - V + D) / 2
    if crop:
        out = out[: out.shape[0] - sub.pad_rows, : out.shape[1] - sub.pad_cols]
    return np.clip(out, 0.0, 1.0)


def wavelet_enhance(img, gain: float) -> np.ndarray:
    """Scale all three detail planes by ``gain`` and reconstruct."""
    sub = dwt2_haar(img)
    sub.detail_h, sub.detail_v, sub.detail_d = (
        sub.detail_h * gain,
        sub.detail_v * gain,
        sub.detail_d * gain,
    )
    return idwt2_haar(sub)


# ---------------------------------------------------------------------------
# CLAHE


def quantize(a: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    return np.minimum((np.clip(a, 0.0, 1.0) * bins).astype(np.int64), bins - 1)


def tile_mapping(levels: np.ndarray, clip: float, bins: int = HIST_BINS) -> np.ndarray:
    """Clipped-histogram equalization lookup table for one tile.

    ``clip`` is a multiple of the uniform bin height; the clipped excess is spread
    evenly over all bins. Each level maps to the midpoint of its CDF step. A tile
    holding a single level carries no contrast information and maps to bin centres.
    """
    hist = np.bincount(levels.ravel(), minlength=bins).astype(np.float64)
    centres = (np.arange(bins) + 0.5) / bins
    if np.count_nonzero(hist) <= 1:
        return centres
    n = hist.sum()
    limit = clip * n / bins
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / bins
    cdf = np.cumsum(hist)
    return np.clip((cdf - hist / 2) / n, 0.0, 1.0)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0, n, tiles + 1)).astype(np.int64)


def _interp_axis(n: int, edges: np.ndarray):
    centres = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.interp(np.arange(n), centres, np.arange(len(centres)))
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, len(centres) - 1)
    return lo, hi, pos - lo


def clahe_tile_mappings(img, tiles=(8, 8), clip: float = 2.0) -> np.ndarray:
    """Per-tile lookup tables, shape (rows, cols, 256)."""
    a = _plane(img)
    rows, cols = int(tiles[0]), int(tiles[1])
    if rows < 1 or cols < 1:
        raise InputError(f"tile grid must be at least 1x1, got {tiles}")
    if rows > a.shape[0] or cols > a.shape[1]:
        raise InputError(f"tile grid {rows}x{cols} larger than image {a.shape[0]}x{a.shape[1]}")
    if clip <= 0:
        raise ConfigError(f"clip must be > 0, got {clip}")
    q = quantize(a)
    re, ce = _tile_edges(a.shape[0], rows), _tile_edges(a.shape[1], cols)
    luts = np.empty((rows, cols, HIST_BINS))
    for i in range(rows):
        for j in range(cols):
            luts[i, j] = tile_mapping(q[re[i] : re[i + 1], ce[j] : ce[j + 1]], clip)
    return luts


def clahe(img, tiles=(8, 8), clip: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization with bilinear tile blending."""
    a = _plane(img)
    luts = clahe_tile_mappings(a, tiles, clip)
    rows, cols = luts.shape[:2]
    q = quantize(a)
    y0, y1, wy = _interp_axis(a.shape[0], _tile_edges(a.shape[0], rows))
    x0, x1, wx = _interp_axis(a.shape[1], _tile_edges(a.shape[1], cols))
    wy, wx = wy[:, None], wx[None, :]
    Y0, Y1, X0, X1 = y0[:, None], y1[:, None], x0[None, :], x1[None, :]
    out = (
        (1 - wy) * (1 - wx) * luts[Y0, X0, q]
        + (1 - wy) * wx * luts[Y0, X1, q]
        + wy * (1 - wx) * luts[Y1, X0, q]
        + wy * wx * luts[Y1, X1, q]
    )
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Fourier bandpass


def radial_frequency(shape: tuple[int, int]) -> np.ndarray:
    """Normalized radial frequency per DFT bin (Nyquist along an axis = 0.5)."""
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.hypot(fy, fx)


def bandpass_unclamped(img, low: float, high: float) -> np.ndarray:
    """Ideal annular mask ``low <= r <= high`` in the DFT domain; real part, no clamp."""
    if not 0 <= low < high:
        raise ConfigError(f"need 0 <= low < high, got low={low}, high={high}")
    a = _plane(img)
    mask = (radial_frequency(a.shape) >= low) & (radial_frequency(a.shape) <= high)
    return np.fft.ifft2(np.fft.fft2(a) * mask).real


def fourier_bandpass(img, low: float, high: float) -> np.ndarray:
    return np.clip(bandpass_unclamped(img, low, high), 0.0, 1.0)


# ---------------------------------------------------------------------------
# bilateral


def bilateral_filter(img, sigma_s: float, sigma_r: float) -> np.ndarray:
    """Edge-preserving smoothing over a square window of radius ceil(3 sigma_s).

    Borders replicate edge pixels. The weighted mean is accumulated as an offset
    from the centre pixel, so constant regions come back bit-exact.
    """
    if sigma_s <= 0 or sigma_r <= 0:
        raise ConfigError(f"sigmas must be > 0, got {sigma_s}, {sigma_r}")
    a = _plane(img)
    H, W = a.shape
    rad = int(math.ceil(3 * sigma_s))
    padded = np.pad(a, rad, mode="edge")
    num = np.zeros_like(a)
    den = np.zeros_like(a)
    inv_s, inv_r = 1.0 / (2 * sigma_s**2), 1.0 / (2 * sigma_r**2)
    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            diff = padded[rad + dy : rad + dy + H, rad + dx : rad + dx + W] - a
            w = math.exp(-(dy * dy + dx * dx) * inv_s) * np.exp(-diff * diff * inv_r)
            num += w * diff
            den += w
    return np.clip(a + num / den, a.min(), a.max())


# ---------------------------------------------------------------------------
# morphology


def otsu_threshold(img) -> float:
    """Otsu level on 256 bins; pixels ``>=`` the returned value are foreground.

    A single-level image returns its minimum, making every pixel foreground.
    """
    a = _plane(img)
    q = quantize(a)
    hist = np.bincount(q.ravel(), minlength=HIST_BINS).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        return float(a.min())
    p = hist / hist.sum()
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(HIST_BINS))
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * omega - mu) ** 2 / (omega * (1 - omega))
    between = np.nan_to_num(between, nan=0.0, posinf=0.0)
    k = int(np.argmax(between))
    return (k + 1) / HIST_BINS


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def _shifted(mask: np.ndarray, r: int, fill: bool):
    padded = np.pad(mask, r, constant_values=fill)
    H, W = mask.shape
    for dy, dx in disk_offsets(r):
        yield padded[r + dy : r + dy + H, r + dx : r + dx + W]


def binary_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = np.zeros(mask.shape, dtype=bool)
    for s in _shifted(mask.astype(bool), radius, False):
        out |= s
    return out


def binary_erode(mask: np.ndarray, radius: int) -> np.ndarray:
    out = np.ones(mask.shape, dtype=bool)
    for s in _shifted(mask.astype(bool), radius, True):
        out &= s
    return out


def binary_closing(mask: np.ndarray, radius: int) -> np.ndarray:
    """Closing with a disk, treating everything outside the grid as background.

    Computed on a canvas padded by 2 * radius so the result equals the closing
    of the zero-extended set restricted to the grid (hence idempotent).
    """
    r = int(radius)
    canvas = np.pad(mask.astype(bool), 2 * r, constant_values=False)
    closed = binary_erode(binary_dilate(canvas, r), r)
    return closed[2 * r : 2 * r + mask.shape[0], 2 * r : 2 * r + mask.shape[1]]


def morphological_enhance(img, se_radius: int, alpha: float) -> np.ndarray:
    """Blend ``alpha * img + (1 - alpha) * img * closed_otsu_mask``."""
    a = _plane(img)
    mask = binary_closing(a >= otsu_threshold(a), se_radius)
    return np.clip(alpha * a + (1 - alpha) * (a * mask), 0.0, 1.0)


# ---------------------------------------------------------------------------
# pipeline


def _run_stage(name: str, plane: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    if name == "wavelet":
        return wavelet_enhance(plane, cfg.wavelet_detail_gain)
    if name == "clahe":
        return clahe(plane, cfg.clahe_tiles, cfg.clahe_clip)
    if name == "fourier":
        return fourier_bandpass(plane, cfg.band_low, cfg.band_high)
    if name == "bilateral":
        return bilateral_filter(plane, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range)
    return morphological_enhance(plane, cfg.morph_se_radius, cfg.morph_blend_alpha)


def mixprocess(
    img: ImageBuffer, cfg: Optional[PreprocessConfig] = None, timings: Optional[dict] = None
) -> ImageBuffer:
    """Run the enabled stages in the fixed order wavelet, CLAHE, Fourier, bilateral, morphology.

    Colour input is reduced to luminance first and replicated back to three
    channels afterwards. With every stage disabled the image is returned as is.
    ``timings``, when given, receives per-stage wall time in microseconds.
    """
    cfg = cfg or PreprocessConfig()
    active = [s for s in STAGES if cfg.enabled(s)]
    if timings is not None:
        timings.update({s: 0 for s in STAGES})
    if not active:
        return img.with_pixels(img.pixels.copy())
    plane = img.gray()
    for name in active:
        start = time.perf_counter_ns()
        try:
            plane = _run_stage(name, plane, cfg)
        except Exception as exc:
            raise StageError(name, exc) from exc
        if timings is not None:
            timings[name] = (time.perf_counter_ns() - start) // 1000
    plane = np.clip(plane, 0.0, 1.0).astype(np.float32)
    pixels = np.repeat(plane[:, :, None], img.channels, axis=2)
    return img.with_pixels(pixels)
