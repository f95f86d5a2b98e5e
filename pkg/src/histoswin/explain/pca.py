"""Principal components of pooled embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class PCAModel:
    mean: np.ndarray  # d
    components: np.ndarray  # d×k, orthonormal columns
    explained_variance: np.ndarray  # k eigenvalues of the covariance (ddof=1)
    explained_variance_ratio: np.ndarray  # k, share of total variance

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(t, dtype=np.float64) @ self.components.T + self.mean


def pca_fit(x: np.ndarray, k: int) -> PCAModel:
    """Top-``k`` eigenvectors of the sample covariance.

    Each component's largest-magnitude entry is made positive so results are
    reproducible across eigensolvers.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"need an N×d matrix with N >= 2, got {x.shape}")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise ShapeError(f"k={k} components requested from {n}×{d} data")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    pivot = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[pivot, np.arange(k)])
    total = float(np.clip(np.trace(cov), 0.0, None))
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return PCAModel(mean, evecs, evals, ratio)


def pca_fit_transform(x: np.ndarray, k: int) -> tuple[PCAModel, np.ndarray]:
    model = pca_fit(x, k)
    return model, model.transform(x)
