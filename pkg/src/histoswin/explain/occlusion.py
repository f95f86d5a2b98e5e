"""Occlusion sensitivity: slide a baseline patch over the input and record confidence drops."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ConfigError, ShapeError
from .predictor import Predictor, batched


@dataclass
class OcclusionMap:
    drops: np.ndarray  # grid_h × grid_w, base confidence minus occluded confidence
    patch: int
    stride: int
    baseline: object
    target: int
    base_confidence: float

    def hyperparameters(self) -> dict:
        base = self.baseline
        if isinstance(base, np.ndarray):
            base = base.tolist() if base.ndim <= 1 else "image"
        return {"patch": self.patch, "stride": self.stride, "baseline": base, "target": self.target}


def occlusion_grid(height: int, width: int, patch: int, stride: int) -> tuple[int, int]:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if patch < 1 or patch > height or patch > width:
        raise ShapeError(f"patch {patch} does not fit a {height}×{width} image")
    return (height - patch) // stride + 1, (width - patch) // stride + 1


def _baseline_image(x: np.ndarray, baseline) -> np.ndarray:
    b = np.asarray(baseline, dtype=x.dtype)
    if b.ndim == 0:
        return np.full_like(x, b)
    if b.shape == (x.shape[0],):
        return np.broadcast_to(b[:, None, None], x.shape).copy()
    if b.shape == x.shape:
        return b.copy()
    raise ShapeError(f"baseline of shape {b.shape} matches neither a scalar, {x.shape[0]} channels nor {x.shape}")


def occlusion_map(predict: Predictor, x: np.ndarray, target: int, patch: int = 16, stride: int = 16,
                  baseline: Union[float, np.ndarray] = 0.0, chunk: int = 64) -> OcclusionMap:
    """Confidence drop for ``target`` when each patch is replaced by ``baseline``.

    ``baseline`` is a scalar, a per-channel vector or a full image whose
    pixels are pasted in. The unoccluded input is evaluated alongside the
    occluded copies so a no-op occlusion gives exactly zero drops.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"expected a C×H×W input, got {x.shape}")
    _, h, w = x.shape
    gh, gw = occlusion_grid(h, w, patch, stride)
    fill = _baseline_image(x, baseline)
    stack = np.repeat(x[None], gh * gw + 1, axis=0)
    for i in range(gh):
        for j in range(gw):
            r, c = i * stride, j * stride
            stack[1 + i * gw + j, :, r:r + patch, c:c + patch] = fill[:, r:r + patch, c:c + patch]
    probs = batched(predict, stack, chunk)
    if not 0 <= target < probs.shape[1]:
        raise ConfigError(f"target class {target} outside [0, {probs.shape[1]})")
    scores = probs[:, target].astype(np.float64)
    drops = (scores[0] - scores[1:]).reshape(gh, gw)
    return OcclusionMap(drops, patch, stride, baseline, int(target), float(scores[0]))
