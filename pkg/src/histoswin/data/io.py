"""Image decoding/encoding (PNG, baseline JPEG, PPM/PGM) via Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ImageReadError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".pnm")


def load_image(path) -> np.ndarray:
    """Decode ``path`` to a float32 ``3×H×W`` array in [0, 1].

    Grayscale images are broadcast to three identical channels.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                scale = 65535.0 if arr.max() > 255 else 255.0
                arr = (arr / scale).astype(np.float32)
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8).astype(np.float32) / np.float32(255)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8).astype(np.float32) / np.float32(255)
    except FileNotFoundError:
        raise ImageReadError(path, "no such file") from None
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise ImageReadError(path, f"cannot decode image ({exc})") from None
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = np.ascontiguousarray(arr.transpose(2, 0, 1))
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> bytes with round-half-to-even."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> Path:
    """Write a ``3×H×W`` (RGB) or ``H×W`` (gray) [0, 1] image; format from the suffix.

    ``.ppm`` is written as binary P6 and ``.pgm`` as P5.
    """
    path = Path(path)
    data = to_uint8(img)
    if data.ndim == 3:
        if data.shape[0] == 1:
            data = data[0]
        else:
            data = data.transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(data)).save(path)
    return path


def save_gray_bytes(path, gray: np.ndarray) -> Path:
    """Write an ``H×W`` uint8 array as a binary PGM (or any Pillow format)."""
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(gray, dtype=np.uint8), mode="L").save(path)
    return path


def save_rgb_bytes(path, rgb: np.ndarray) -> Path:
    """Write a ``3×H×W`` uint8 array as a binary PPM (or any Pillow format)."""
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(rgb.transpose(1, 2, 0), dtype=np.uint8), mode="RGB").save(path)
    return path
