"""Local surrogate explanations over a regular superpixel grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from .predictor import Predictor, batched

RIDGE_RETRY_FACTOR = 1e3
DEGENERATE_COND = 1e12


@dataclass
class SurrogateFit:
    coef: np.ndarray
    intercept: float
    r2: float
    ridge: float  # the penalty actually used (after a retry)


@dataclass
class LimeExplanation:
    grid: int
    weights: np.ndarray  # one per superpixel, row-major over the grid
    intercept: float
    r2: float
    num_samples: int
    kernel_width: float
    ridge: float
    seed: int
    target: int

    def weight_map(self) -> np.ndarray:
        return self.weights.reshape(self.grid, self.grid)

    def hyperparameters(self) -> dict:
        return {"grid": self.grid, "num_samples": self.num_samples, "kernel_width": self.kernel_width,
                "ridge": self.ridge, "seed": self.seed, "target": self.target}


def grid_segments(height: int, width: int, grid: int) -> np.ndarray:
    """``H×W`` superpixel labels for a ``grid×grid`` tiling (row-major)."""
    if grid < 1 or height % grid or width % grid:
        raise ShapeError(f"grid {grid} must divide the {height}×{width} image")
    rows = np.arange(height) // (height // grid)
    cols = np.arange(width) // (width // grid)
    return rows[:, None] * grid + cols[None, :]


def sample_masks(num_features: int, num_samples: int, seed: int) -> np.ndarray:
    """``N×F`` binary masks, each bit on with probability 0.5."""
    return (np.random.default_rng(seed).random((num_samples, num_features)) < 0.5).astype(np.float64)


def proximity_weights(masks: np.ndarray, kernel_width: float) -> np.ndarray:
    """``exp(-d²/σ²)`` with ``d`` the fraction of features switched off."""
    d = 1.0 - masks.mean(axis=1)
    return np.exp(-(d ** 2) / kernel_width ** 2)


def weighted_ridge(x: np.ndarray, y: np.ndarray, weights: np.ndarray, ridge: float) -> SurrogateFit:
    """Weighted ridge regression with an unpenalized intercept and weighted R².

    A singular or badly conditioned system is retried once with the penalty
    raised by ``RIDGE_RETRY_FACTOR``; R² is 0 for a zero-variance target.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    sw = w.sum()
    if sw <= 0:
        raise NumericError("surrogate sample weights sum to zero")
    x_mean = w @ x / sw
    y_mean = float(w @ y / sw)
    xc, yc = x - x_mean, y - y_mean
    gram = xc.T @ (w[:, None] * xc)
    rhs = xc.T @ (w * yc)
    eye = np.eye(x.shape[1])
    lam = ridge
    for attempt in range(2):
        a = gram + lam * eye
        if np.linalg.cond(a) < DEGENERATE_COND:
            coef = np.linalg.solve(a, rhs)
            break
        if attempt == 1:
            raise NumericError(f"degenerate surrogate design matrix (ridge {lam:g})")
        lam = max(lam, 1e-12) * RIDGE_RETRY_FACTOR
    intercept = y_mean - float(x_mean @ coef)
    resid = y - (x @ coef + intercept)
    total = float(w @ (yc ** 2))
    r2 = 0.0 if total <= 1e-300 else 1.0 - float(w @ resid ** 2) / total
    return SurrogateFit(coef, intercept, r2, lam)


def lime_surrogate(query: Callable[[np.ndarray], np.ndarray], num_features: int, num_samples: int = 1000,
                   kernel_width: float = 0.25, ridge: float = 1e-3, seed: int = 0) -> SurrogateFit:
    """Fit the local surrogate of ``query`` (masks ``N×F`` -> scores ``N``)."""
    if num_samples < num_features:
        raise ConfigError(f"need at least {num_features} samples, got {num_samples}")
    if kernel_width <= 0:
        raise ConfigError("kernel_width must be positive")
    masks = sample_masks(num_features, num_samples, seed)
    y = np.asarray(query(masks), dtype=np.float64).reshape(-1)
    if y.shape != (num_samples,):
        raise ShapeError(f"query returned {y.shape}, expected ({num_samples},)")
    return weighted_ridge(masks, y, proximity_weights(masks, kernel_width), ridge)


def perturb(x: np.ndarray, segments: np.ndarray, masks: np.ndarray, fill: np.ndarray) -> np.ndarray:
    """Images with switched-off superpixels replaced by ``fill`` (per channel)."""
    keep = masks[:, segments].astype(x.dtype)  # N×H×W
    fill = np.asarray(fill, dtype=x.dtype)[:, None, None]
    return keep[:, None] * x[None] + (1 - keep[:, None]) * fill[None]


def lime_explain(predict: Predictor, x: np.ndarray, target: int, grid: int = 8, num_samples: int = 1000,
                 kernel_width: float = 0.25, ridge: float = 1e-3, seed: int = 0,
                 fill: Optional[np.ndarray] = None, chunk: int = 64) -> LimeExplanation:
    """Explain ``predict``'s target-class probability at ``x`` with a grid surrogate.

    Off superpixels take ``fill``, by default the image's mean colour.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"expected a C×H×W input, got {x.shape}")
    segments = grid_segments(x.shape[1], x.shape[2], grid)
    fill = x.mean(axis=(1, 2)) if fill is None else np.asarray(fill)

    def query(masks):
        probs = np.concatenate([batched(predict, perturb(x, segments, masks[i:i + chunk], fill), chunk)
                                for i in range(0, len(masks), chunk)])
        if not 0 <= target < probs.shape[1]:
            raise ConfigError(f"target class {target} outside [0, {probs.shape[1]})")
        return probs[:, target]

    fit = lime_surrogate(query, grid * grid, num_samples, kernel_width, ridge, seed)
    return LimeExplanation(grid, fit.coef, fit.intercept, fit.r2, num_samples, kernel_width, fit.ridge,
                           int(seed), int(target))
