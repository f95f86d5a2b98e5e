"""Samples, stratified splits, synthetic corpora and the class-folder layout."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from math import floor
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import DataError
from .io import IMAGE_SUFFIXES, load_image, save_image
from .transforms import AugmentConfig, augment, resize_bilinear

SPLIT_RATIOS = (0.70, 0.15, 0.15)
SYNTH_CLASSES = {"blob_vs_stripe": ("blob", "stripe"), "shapes": ("ellipse", "rectangle")}


@dataclass
class Sample:
    image: np.ndarray  # 3×H×W, values in [0, 1]
    label: int
    id: str


def augment_sample(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    return replace(sample, image=augment(sample.image, cfg, rng))


# ------------------------------------------------------------------ splitting

@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    ratios: tuple = SPLIT_RATIOS

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ratios": list(self.ratios),
                "train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d) -> "DatasetSplit":
        try:
            return cls(list(d["train"]), list(d["val"]), list(d["test"]), int(d["seed"]),
                       tuple(d.get("ratios", SPLIT_RATIOS)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed split manifest: {exc}") from None

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read split manifest ({exc})") from None

    def select(self, samples: Sequence[Sample], part: str) -> list[Sample]:
        by_id = {s.id: s for s in samples}
        ids = getattr(self, part)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"split {part!r} references unknown ids, e.g. {missing[0]!r}")
        return [by_id[i] for i in ids]


def _floor(x: float) -> int:
    return floor(round(x, 9))


def _largest_remainder(quotas: np.ndarray, total: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Integers within ``[lo, hi]`` summing to ``total``, nearest ``quotas`` first.

    Starts from ``lo`` and hands out units by largest remaining shortfall;
    ties go to the lower class index.
    """
    alloc = lo.copy()
    for _ in range(total - int(alloc.sum())):
        room = alloc < hi
        if not room.any():
            raise DataError("cannot allocate stratified split")
        gap = np.where(room, quotas - alloc, -np.inf)
        alloc[int(np.argmax(gap))] += 1
    return alloc


def stratified_counts(class_counts: Sequence[int], ratios=SPLIT_RATIOS) -> np.ndarray:
    """Per-class ``(train, val, test)`` counts.

    Split totals are ``floor(r·N)`` for val and test with the remainder going
    to train; each class's count stays within one sample of its proportional
    share ``n_c·|split|/N``.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    n = int(counts.sum())
    _, r_val, r_test = ratios
    n_val, n_test = _floor(r_val * n), _floor(r_test * n)
    n_train = n - n_val - n_test
    q_val, q_test, q_train = counts * n_val / n, counts * n_test / n, counts * n_train / n
    zeros = np.zeros_like(counts)

    val = _largest_remainder(q_val, n_val, np.minimum(np.floor(q_val + 1e-9).astype(np.int64), counts),
                             np.minimum(np.ceil(q_val - 1e-9).astype(np.int64), counts))
    left = counts - val
    lo = np.maximum(np.floor(q_test + 1e-9).astype(np.int64), left - np.ceil(q_train - 1e-9).astype(np.int64))
    hi = np.minimum(np.ceil(q_test - 1e-9).astype(np.int64), left - np.floor(q_train + 1e-9).astype(np.int64))
    lo, hi = np.clip(lo, 0, left), np.clip(hi, 0, left)
    if lo.sum() <= n_test <= hi.sum() and (lo <= hi).all():
        test = _largest_remainder(q_test, n_test, lo, hi)
    else:
        test = _largest_remainder(q_test, n_test, zeros, left)
    return np.stack([counts - val - test, val, test], axis=1)


def split_dataset(samples: Sequence[Sample], seed: int, ratios=SPLIT_RATIOS,
                  num_classes: Optional[int] = None) -> DatasetSplit:
    """Stratified, seeded 70/15/15 partition of sample ids."""
    if not samples:
        raise DataError("cannot split an empty dataset")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("sample ids are not unique")
    k = num_classes if num_classes is not None else max(s.label for s in samples) + 1
    by_class = [sorted(s.id for s in samples if s.label == c) for c in range(k)]
    empty = [c for c, members in enumerate(by_class) if not members]
    if empty:
        raise DataError(f"class {empty[0]} has no samples; cannot stratify")
    table = stratified_counts([len(m) for m in by_class], ratios)
    train, val, test = [], [], []
    for c, members in enumerate(by_class):
        order = np.random.default_rng([int(seed), c]).permutation(len(members))
        shuffled = [members[i] for i in order]
        n_tr, n_va, _ = table[c]
        train += shuffled[:n_tr]
        val += shuffled[n_tr:n_tr + n_va]
        test += shuffled[n_tr + n_va:]
    return DatasetSplit(train, val, test, int(seed), tuple(ratios))


# ------------------------------------------------------------------ synthesis

def _blob(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2 + rng.uniform(-size / 16, size / 16, size=2)
    sigma = rng.uniform(size / 10, size / 6)
    amp = rng.uniform(0.6, 0.8)
    bump = amp * np.exp(-((yy - c[0]) ** 2 + (xx - c[1]) ** 2) / (2 * sigma ** 2))
    tint = np.array([1.0, 0.75, 0.9])[:, None, None]
    return rng.uniform(0.1, 0.2) + tint * bump[None]


def _stripes(rng, size):
    xx = np.arange(size, dtype=np.float64)
    period = rng.uniform(size / 8, size / 4)
    wave = 0.3 + 0.25 * np.sin(2 * np.pi * xx / period + rng.uniform(0, 2 * np.pi))
    tint = np.array([0.9, 0.8, 1.0])[:, None, None]
    return tint * np.broadcast_to(wave[None, :], (size, size))[None]


def _shape(rng, size, ellipse: bool):
    img = np.full((size, size), 0.05)
    hh, hw = rng.integers(size // 8, size // 4 + 1, size=2)
    cy = rng.integers(hh + 1, size - hh - 1)
    cx = rng.integers(hw + 1, size - hw - 1)
    value = rng.uniform(0.6, 0.9)
    if ellipse:
        yy, xx = np.mgrid[0:size, 0:size]
        img[((yy - cy) / hh) ** 2 + ((xx - cx) / hw) ** 2 <= 1.0] = value
    else:
        img[cy - hh:cy + hh, cx - hw:cx + hw] = value
    return np.repeat(img[None], 3, axis=0)


def synth_dataset(kind: str, n: int, size: int, seed: int) -> list[Sample]:
    """Balanced synthetic corpus; class 0 gets the extra sample when ``n`` is odd.

    ``blob_vs_stripe``: class 0 is a bright centred Gaussian blob, class 1
    vertical sinusoidal stripes, both with additive noise. ``shapes``: a
    filled ellipse (class 0) or rectangle (class 1) on a dark background.
    """
    if kind not in SYNTH_CLASSES:
        raise DataError(f"unknown synthetic dataset {kind!r}; choose from {sorted(SYNTH_CLASSES)}")
    if n < 2:
        raise DataError(f"need at least 2 samples to cover both classes, got {n}")
    if size < 16:
        raise DataError(f"synthetic images must be at least 16 px, got {size}")
    names = SYNTH_CLASSES[kind]
    out = []
    for i in range(n):
        label = i % 2
        rng = np.random.default_rng([int(seed), i])
        if kind == "blob_vs_stripe":
            img = _blob(rng, size) if label == 0 else _stripes(rng, size)
            img = img + rng.normal(0, 0.03, size=img.shape)
        else:
            img = _shape(rng, size, ellipse=label == 0) + rng.normal(0, 0.01, size=(3, size, size))
        out.append(Sample(np.clip(img, 0, 1).astype(np.float32), label, f"{names[label]}/{names[label]}_{i:04d}"))
    return out


def class_names_for(kind: str) -> tuple:
    return SYNTH_CLASSES[kind]


# ------------------------------------------------------------- folder layout

def list_folder(root) -> tuple[list[tuple[str, int, Path]], list[str]]:
    """``root/<class>/<image>`` -> ``[(id, label, path)]`` and sorted class names."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise DataError(f"{root}: no class subdirectories")
    entries = []
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"{root / name}: class has no images")
        entries += [(f"{name}/{p.stem}", label, p) for p in files]
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{root}: duplicate image stems within a class")
    return entries, classes


def load_folder(root, size: Optional[int] = None) -> tuple[list[Sample], list[str]]:
    """Load every image, resized to ``size``×``size`` when given."""
    entries, classes = list_folder(root)
    samples = []
    for sid, label, path in entries:
        img = load_image(path)
        if size is not None and img.shape[1:] != (size, size):
            img = resize_bilinear(img, (size, size))
        samples.append(Sample(img, label, sid))
    return samples, classes


def write_folder(samples: Iterable[Sample], root, suffix: str = ".png") -> Path:
    root = Path(root)
    for s in samples:
        path = root / f"{s.id}{suffix}"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(path, s.image)
    return root
