"""Heatmap rendering (binary PGM/PPM) and explanation manifests."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ..data.io import save_gray_bytes, save_rgb_bytes
from ..errors import ShapeError

CONSTANT_GRAY = 128


def heat_levels(values: np.ndarray) -> np.ndarray:
    """Min-max scale a map to bytes; a constant map becomes uniform 128."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.size == 0:
        raise ShapeError(f"expected a non-empty 2-D map, got {v.shape}")
    lo, hi = v.min(), v.max()
    if not hi > lo:
        return np.full(v.shape, CONSTANT_GRAY, dtype=np.uint8)
    return np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def upsample_nearest(cells: np.ndarray, height: int, width: int) -> np.ndarray:
    """Output pixel ``(i, j)`` takes cell ``(i·gh // H, j·gw // W)``."""
    gh, gw = cells.shape
    rows = np.arange(height) * gh // height
    cols = np.arange(width) * gw // width
    return cells[rows[:, None], cols[None, :]]


def overlay(image: np.ndarray, heat: np.ndarray) -> np.ndarray:
    """``0.5·image + 0.5·heat`` in bytes; ``image`` is ``3×H×W`` in [0, 1], ``heat`` ``H×W`` bytes."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 255.0
    blend = 0.5 * img + 0.5 * heat.astype(np.float64)[None]
    return np.clip(np.rint(blend), 0, 255).astype(np.uint8)


def render_heatmap(values: np.ndarray, image: np.ndarray, out_prefix) -> tuple[Path, Path, np.ndarray]:
    """Write ``<prefix>_heat.pgm`` and ``<prefix>_overlay.ppm``; returns both paths and the heat bytes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a 3×H×W image, got {image.shape}")
    heat = upsample_nearest(heat_levels(values), image.shape[1], image.shape[2])
    prefix = Path(out_prefix)
    pgm = save_gray_bytes(prefix.with_name(prefix.name + "_heat.pgm"), heat)
    ppm = save_rgb_bytes(prefix.with_name(prefix.name + "_overlay.ppm"), overlay(image, heat))
    return pgm, ppm, heat


def write_manifest(path, *, input_id: str, method: str, seed: Optional[int], checkpoint_hash: Optional[str],
                   hyperparameters: Mapping, artifacts: Mapping, extra: Optional[Mapping] = None) -> Path:
    path = Path(path)
    doc = {"input_id": input_id, "method": method, "seed": seed, "checkpoint_sha256": checkpoint_hash,
           "hyperparameters": dict(hyperparameters), "artifacts": {k: str(v) for k, v in artifacts.items()}}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
