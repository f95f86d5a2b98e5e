"""Contour characteristics of an image's dominant bright region.

Pipeline: luma in [0, 255] -> Otsu threshold -> largest 8-connected
component -> Moore-neighbour boundary trace -> eleven shape and intensity
features. Area is the component's pixel count and bounding-box sides are
``max - min + 1``, so a filled axis-aligned rectangle has extent exactly 1.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from math import pi, sqrt
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .data.dataset import Sample, list_folder
from .data.io import load_image
from .data.transforms import luma
from .errors import DataError, HistoSwinError

# clockwise on screen (y grows downward), starting west
MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIR_INDEX = {d: i for i, d in enumerate(MOORE)}
EPSILON_FRACTION = 0.01

CSV_COLUMNS = ("id", "class", "area", "perimeter", "epsilon", "width", "height", "aspect_ratio",
               "extent", "diameter", "min_value", "max_value", "mean_color", "error")


@dataclass
class ContourTrace:
    points: list  # (x, y) boundary pixels in clockwise order
    mask: np.ndarray  # the traced component


@dataclass
class ContourFeatures:
    area: float
    perimeter: float
    epsilon: float
    width: float
    height: float
    aspect_ratio: float
    extent: float
    diameter: float
    min_value: float
    max_value: float
    mean_color: float


def gray_levels(image: np.ndarray) -> np.ndarray:
    """``3×H×W`` image in [0, 1] -> luma scaled to [0, 255]."""
    return luma(np.asarray(image, dtype=np.float64)) * 255.0


def _histogram(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    levels = np.clip(np.rint(gray), 0, 255).astype(np.int64)
    return levels, np.bincount(levels.ravel(), minlength=256).astype(np.float64)


def binarize_otsu(gray: np.ndarray) -> tuple[np.ndarray, int]:
    """Threshold maximizing between-class variance of the 256-bin histogram.

    Returns ``(mask, t)`` where the mask holds levels ``> t`` (the brighter
    class). Ties resolve to the smallest ``t``.
    """
    levels, hist = _histogram(np.asarray(gray, dtype=np.float64))
    if np.count_nonzero(hist) < 2:
        raise DataError("degenerate image: fewer than two intensity levels")
    bins = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]
    total = hist.sum()
    w1 = total - w0
    s0 = np.cumsum(hist * bins)[:-1]
    mu0 = np.divide(s0, w0, out=np.zeros_like(s0), where=w0 > 0)
    mu1 = np.divide((hist * bins).sum() - s0, w1, out=np.zeros_like(s0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    t = int(np.argmax(between))
    return levels > t, t


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected component; ties go to the one starting first in raster order."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("empty mask: no foreground pixels")
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())[1:]
    # scipy numbers components in raster order of their first pixel
    return labels == int(np.argmax(sizes)) + 1


def moore_trace(component: np.ndarray) -> list[tuple[int, int]]:
    """Clockwise Moore-neighbour boundary of a single 8-connected component.

    Starts at the first pixel in raster order and stops when the first move
    out of the start pixel is about to repeat.
    """
    padded = np.pad(np.asarray(component, dtype=bool), 1)
    ys, xs = np.nonzero(padded)
    start = (int(xs[0]), int(ys[0]))

    def fg(p):
        return padded[p[1], p[0]]

    def step(p, back):
        for k in range(1, 9):
            d = (back + k) % 8
            q = (p[0] + MOORE[d][0], p[1] + MOORE[d][1])
            if fg(q):
                prev = MOORE[(back + k - 1) % 8]
                b = (p[0] + prev[0] - q[0], p[1] + prev[1] - q[1])
                return q, _DIR_INDEX[b]
        return None, back

    first, back = step(start, 0)  # west of the start pixel is background
    if first is None:
        return [(start[0] - 1, start[1] - 1)]
    points = [start]
    p = first
    limit = 4 * int(padded.sum()) + 8
    while True:
        nxt, nback = step(p, back)
        if p == start and nxt == first:
            break
        points.append(p)
        if len(points) > limit:
            raise DataError("boundary trace did not close")
        p, back = nxt, nback
    return [(x - 1, y - 1) for x, y in points]


def trace_largest_contour(mask: np.ndarray) -> ContourTrace:
    comp = largest_component(mask)
    return ContourTrace(moore_trace(comp), comp)


def boundary_length(points: Sequence[tuple[int, int]]) -> float:
    """Closed-loop length: 1 per axis step, sqrt(2) per diagonal step; 0 for one point."""
    if len(points) < 2:
        return 0.0
    pts = np.asarray(points)
    steps = np.abs(np.diff(np.vstack([pts, pts[:1]]), axis=0)).sum(axis=1)
    diagonal = int(np.count_nonzero(steps == 2))
    return float(np.count_nonzero(steps == 1) + diagonal * sqrt(2))


def compute_features(trace: ContourTrace, gray: np.ndarray) -> ContourFeatures:
    mask = trace.mask
    ys, xs = np.nonzero(mask)
    area = float(ys.size)
    width = float(xs.max() - xs.min() + 1)
    height = float(ys.max() - ys.min() + 1)
    perimeter = boundary_length(trace.points)
    values = np.asarray(gray, dtype=np.float64)[mask]
    return ContourFeatures(
        area=area,
        perimeter=perimeter,
        epsilon=EPSILON_FRACTION * perimeter,
        width=width,
        height=height,
        aspect_ratio=width / height,
        extent=area / (width * height),
        diameter=sqrt(4.0 * area / pi),
        min_value=float(values.min()),
        max_value=float(values.max()),
        mean_color=float(values.mean()),
    )


def image_features(image: np.ndarray) -> ContourFeatures:
    """Features of the dominant bright region of a ``3×H×W`` [0, 1] image."""
    gray = gray_levels(image)
    mask, _ = binarize_otsu(gray)
    return compute_features(trace_largest_contour(mask), gray)


# -------------------------------------------------------------------- report

FEATURE_NAMES = tuple(f.name for f in fields(ContourFeatures))


def _row(sid: str, cls: str, image: Optional[np.ndarray], error: str = "") -> dict:
    row = {"id": sid, "class": cls, "error": error}
    if image is not None and not error:
        try:
            row.update(asdict(image_features(image)))
        except HistoSwinError as exc:
            row["error"] = str(exc)
    return row


def _class_means(rows: list[dict], class_order: Iterable[str]) -> list[dict]:
    means = []
    for cls in class_order:
        good = [r for r in rows if r["class"] == cls and not r["error"]]
        if not good:
            continue
        mean_row = {"id": "mean", "class": cls, "error": ""}
        for name in FEATURE_NAMES:
            mean_row[name] = float(np.mean([r[name] for r in good]))
        means.append(mean_row)
    return means


def features_report(samples: Sequence[Sample], class_names: Optional[Sequence[str]] = None) -> list[dict]:
    """Per-image feature rows followed by one mean row per class.

    Images that fail (e.g. constant intensity) produce a row with ``error``
    set instead of aborting the report.
    """
    if not samples:
        raise DataError("features_report needs at least one sample")
    names = list(class_names) if class_names else [str(c) for c in range(max(s.label for s in samples) + 1)]
    rows = [_row(s.id, names[s.label], s.image) for s in samples]
    return rows + _class_means(rows, names)


def features_report_folder(root) -> list[dict]:
    """Like :func:`features_report` over ``root/<class>/<image>``; unreadable files become error rows."""
    entries, classes = list_folder(root)
    rows = []
    for sid, label, path in entries:
        try:
            image = load_image(path)
        except HistoSwinError as exc:
            rows.append(_row(sid, classes[label], None, str(exc)))
            continue
        rows.append(_row(sid, classes[label], image))
    return rows + _class_means(rows, classes)


def write_features_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{r[k]:.6f}" if isinstance(r.get(k), float) else r.get(k, ""))
                             for k in CSV_COLUMNS})
    return path
