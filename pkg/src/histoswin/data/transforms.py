"""Resizing, ImageNet normalization and training-time augmentation.

Augmentation applies, in this order: random resized crop, horizontal flip,
vertical flip, rotation (bilinear, reflect padding), colour jitter, clamp to
[0, 1]. Every random draw comes from a generator keyed on
``(seed, epoch, sample index)`` so results do not depend on iteration order.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, ShapeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
LUMA = (0.299, 0.587, 0.114)


def resize_bilinear(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres.

    Output pixel ``i`` samples source coordinate ``(i + 0.5) * H / H' - 0.5``
    clamped to ``[0, H - 1]``.
    """
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ShapeError(f"resize target must be positive, got {target}")
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError(f"cannot resize empty image {img.shape}")

    def axis(n_out, n_in):
        src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(th, h)
    c0, c1, fc = axis(tw, w)
    x = img.astype(np.float64)
    # a + t(b - a) keeps constant regions exact
    a = x[..., r0, :]
    top = a + (x[..., r1, :] - a) * fr[:, None]
    a = top[..., c0]
    out = a + (top[..., c1] - a) * fc
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float32)


def _channel_stats(dtype):
    mean = np.asarray(IMAGENET_MEAN, dtype=dtype)[:, None, None]
    std = np.asarray(IMAGENET_STD, dtype=dtype)[:, None, None]
    return mean, std


def normalize(img: np.ndarray) -> np.ndarray:
    """Per-channel ``(x - mean_c) / std_c`` with the ImageNet statistics."""
    img = np.asarray(img, dtype=np.float32)
    mean, std = _channel_stats(img.dtype)
    return (img - mean) / std


def denormalize(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    mean, std = _channel_stats(img.dtype)
    return img * std + mean


def channel_means_normalized(images: np.ndarray) -> np.ndarray:
    """Dataset channel means in normalized space (occlusion baseline)."""
    return normalize(np.asarray(images).mean(axis=(0, 2, 3))[:, None, None])[:, 0, 0]


@dataclass(frozen=True)
class AugmentConfig:
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    rotation_deg: float = 15.0
    jitter_strength: float = 0.2
    crop_scale: tuple = (0.8, 1.0)
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "crop_scale", tuple(float(c) for c in self.crop_scale))
        for name in ("hflip_p", "vflip_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop_scale {self.crop_scale} must lie within (0, 1]")
        if self.rotation_deg < 0 or not 0 <= self.jitter_strength < 1:
            raise ConfigError("rotation_deg must be >= 0 and jitter_strength in [0, 1)")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, (1.0, 1.0), True)

    def to_dict(self) -> dict:
        return {"hflip_p": self.hflip_p, "vflip_p": self.vflip_p, "rotation_deg": self.rotation_deg,
                "jitter_strength": self.jitter_strength, "crop_scale": list(self.crop_scale),
                "enabled": self.enabled}


def augment_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch), int(index)])


def hflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1, :].copy()


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the centre, bilinear, reflect-padded, same size."""
    if degrees == 0:
        return img.copy()
    return ndimage.rotate(img, degrees, axes=(2, 1), reshape=False, order=1, mode="reflect").astype(img.dtype)


def luma(img: np.ndarray) -> np.ndarray:
    w = np.asarray(LUMA, dtype=img.dtype)[:, None, None]
    return (img * w).sum(axis=0)


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Multiplicative brightness, contrast toward the mean grey level, saturation toward grey."""
    x = img * np.float32(brightness)
    m = luma(x).mean()
    x = m + np.float32(contrast) * (x - m)
    g = luma(x)[None]
    return g + np.float32(saturation) * (x - g)


def random_resized_crop(img: np.ndarray, scale: float, top_frac: float, left_frac: float) -> np.ndarray:
    """Crop ``scale`` of the area (aspect preserved) and resize back to the input size."""
    h, w = img.shape[-2:]
    ch = min(h, max(1, int(round(sqrt(scale) * h))))
    cw = min(w, max(1, int(round(sqrt(scale) * w))))
    top = int(top_frac * (h - ch + 1)) if ch < h else 0
    left = int(left_frac * (w - cw + 1)) if cw < w else 0
    crop = img[:, top:top + ch, left:left + cw]
    return resize_bilinear(crop, (h, w))


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the augmentation chain to a ``3×H×W`` image in [0, 1].

    All eight random numbers are drawn up front, so the consumption pattern
    is fixed regardless of which steps are active.
    """
    image = np.asarray(image, dtype=np.float32)
    if not cfg.enabled:
        return image.copy()
    lo, hi = cfg.crop_scale
    j = cfg.jitter_strength
    scale = rng.uniform(lo, hi)
    top_frac, left_frac = rng.random(2)
    do_h, do_v = rng.random(2)
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    b, c, s = rng.uniform(1 - j, 1 + j, size=3)

    x = random_resized_crop(image, scale, top_frac, left_frac)
    if do_h < cfg.hflip_p:
        x = hflip(x)
    if do_v < cfg.vflip_p:
        x = vflip(x)
    x = rotate(x, angle)
    if j > 0:
        x = color_jitter(x, b, c, s)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def draw_rotation(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    """The rotation angle :func:`augment` would use with this generator."""
    rng.uniform(*cfg.crop_scale)
    rng.random(2)
    rng.random(2)
    return float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
