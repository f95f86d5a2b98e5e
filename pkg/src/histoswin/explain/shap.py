"""Kernel SHAP over a small number of features, plus the factorial Shapley oracle.

The value of a coalition ``S`` is the mean of ``f`` over background rows
with the features in ``S`` taken from the explained instance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from math import comb, factorial
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from ..errors import BudgetError, ConfigError, ShapeError
from ..model import head_probabilities
from .pca import PCAModel

ENUMERATE_MAX_FEATURES = 12
ORACLE_MAX_FEATURES = 8
IMPORTANCE_COLUMNS = ("component", "phi", "abs_phi", "rank")

FeatureModel = Callable[[np.ndarray], np.ndarray]  # n×k -> n outputs


@dataclass
class ShapAttribution:
    values: np.ndarray  # the instance's feature values
    phi: np.ndarray
    base_value: float
    output: float  # f at the instance
    target: int = 0
    mode: str = "enumerate"

    @property
    def efficiency_gap(self) -> float:
        return float(self.phi.sum() + self.base_value - self.output)


def shapley_kernel_weight(k: int, size: int) -> float:
    """``(k-1) / (C(k, s)·s·(k-s))`` for a proper coalition of ``size`` features."""
    if not 0 < size < k:
        raise ConfigError(f"kernel weight undefined for coalition size {size} of {k}")
    return (k - 1) / (comb(k, size) * size * (k - size))


def enumerate_coalitions(k: int) -> np.ndarray:
    """All ``2^k - 2`` proper non-empty coalitions as a boolean matrix, by size then lexicographically."""
    rows = []
    for size in range(1, k):
        for members in combinations(range(k), size):
            row = np.zeros(k, dtype=bool)
            row[list(members)] = True
            rows.append(row)
    return np.array(rows, dtype=bool).reshape(-1, k)


def sample_coalitions(k: int, budget: int, seed: int) -> np.ndarray:
    """``budget`` coalitions: sizes drawn in proportion to the kernel mass, members uniform."""
    rng = np.random.default_rng(seed)
    sizes = np.arange(1, k)
    mass = np.array([(k - 1) / (s * (k - s)) for s in sizes])
    drawn = rng.choice(sizes, size=budget, p=mass / mass.sum())
    out = np.zeros((budget, k), dtype=bool)
    for r, s in enumerate(drawn):
        out[r, rng.permutation(k)[:s]] = True
    return out


def coalition_values(f: FeatureModel, z: np.ndarray, background: np.ndarray, coalitions: np.ndarray) -> np.ndarray:
    """Mean of ``f`` over background rows with coalition features replaced by ``z``."""
    m, k = background.shape
    mixed = np.where(coalitions[:, None, :], z[None, None, :], background[None, :, :]).reshape(-1, k)
    out = np.asarray(f(mixed), dtype=np.float64).reshape(len(coalitions), m)
    return out.mean(axis=1)


def kernel_shap(f: FeatureModel, z, background, budget: Union[str, int] = "enumerate", seed: int = 0,
                target: int = 0) -> ShapAttribution:
    """Shapley values of ``f`` at ``z`` by constrained weighted least squares.

    The efficiency constraint ``sum(phi) = f(z) - base`` is imposed by
    eliminating the last feature. ``budget="enumerate"`` uses every proper
    coalition (exact Shapley values); an integer samples that many.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    k = z.size
    if k < 1 or background.shape[0] < 1 or background.shape[1] != k:
        raise ShapeError(f"instance of {k} features vs background {background.shape}")
    if budget == "enumerate":
        if k > ENUMERATE_MAX_FEATURES:
            raise BudgetError(f"enumerate mode supports at most {ENUMERATE_MAX_FEATURES} features, got {k}")
        coalitions = enumerate_coalitions(k)
        weights = np.array([shapley_kernel_weight(k, int(s)) for s in coalitions.sum(axis=1)])
        mode = "enumerate"
    else:
        if not isinstance(budget, (int, np.integer)) or budget < 1:
            raise ConfigError(f"budget must be 'enumerate' or a positive integer, got {budget!r}")
        coalitions = sample_coalitions(k, int(budget), seed) if k > 1 else np.zeros((0, k), bool)
        weights = np.ones(len(coalitions))
        mode = "sample"

    base = float(np.mean(np.asarray(f(background), dtype=np.float64)))
    output = float(np.asarray(f(z[None]), dtype=np.float64).reshape(-1)[0])
    total = output - base
    if k == 1:
        return ShapAttribution(z, np.array([total]), base, output, target, mode)

    s = coalitions.astype(np.float64)
    y = coalition_values(f, z, background, coalitions) - base - s[:, -1] * total
    x = s[:, :-1] - s[:, -1:]
    sw = np.sqrt(weights)
    head, *_ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
    phi = np.append(head, total - head.sum())
    return ShapAttribution(z, phi, base, output, target, mode)


def exact_shapley_oracle(value: Callable[[frozenset], float], k: int) -> np.ndarray:
    """``phi_i = sum_S |S|!(k-|S|-1)!/k! · (v(S ∪ {i}) - v(S))`` by direct summation."""
    if k > ORACLE_MAX_FEATURES:
        raise BudgetError(f"exact Shapley oracle supports at most {ORACLE_MAX_FEATURES} features, got {k}")
    cache: dict = {}

    def v(s: frozenset) -> float:
        if s not in cache:
            cache[s] = float(value(s))
        return cache[s]

    phi = np.zeros(k)
    for i in range(k):
        others = [j for j in range(k) if j != i]
        for size in range(k):
            coef = factorial(size) * factorial(k - size - 1) / factorial(k)
            for members in combinations(others, size):
                s = frozenset(members)
                phi[i] += coef * (v(s | {i}) - v(s))
    return phi


def embedding_model(params: Mapping, pca: PCAModel, target: int) -> FeatureModel:
    """Target-class probability of the classifier head as a function of PCA coordinates."""

    def f(pcs: np.ndarray) -> np.ndarray:
        z = pca.inverse_transform(np.atleast_2d(pcs)).astype(np.float32)
        return head_probabilities(z, params)[:, target].astype(np.float64)

    return f


def global_importance(attributions: Union[Sequence[ShapAttribution], np.ndarray],
                      names: Sequence[str] = None) -> list[dict]:
    """Mean signed and absolute Shapley value per component, ranked by mean ``|phi|``.

    Ties keep component order.
    """
    phis = np.array([a.phi for a in attributions] if not isinstance(attributions, np.ndarray) else attributions,
                    dtype=np.float64)
    if phis.ndim != 2 or len(phis) == 0:
        raise ShapeError("global importance needs at least one attribution")
    k = phis.shape[1]
    names = list(names) if names is not None else [f"PC{i + 1}" for i in range(k)]
    mean_phi = phis.mean(axis=0)
    mean_abs = np.abs(phis).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    return [{"component": names[i], "phi": float(mean_phi[i]), "abs_phi": float(mean_abs[i]), "rank": r + 1}
            for r, i in enumerate(order)]


def attribution_rows(att: ShapAttribution, names: Sequence[str] = None) -> list[dict]:
    """One attribution as ranked ``component,phi,abs_phi,rank`` rows."""
    rows = global_importance(att.phi[None], names)
    signed = {f"PC{i + 1}" if names is None else names[i]: float(p) for i, p in enumerate(att.phi)}
    for r in rows:
        r["phi"] = signed[r["component"]]
    return rows


def write_importance_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=IMPORTANCE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({"component": r["component"], "phi": repr(float(r["phi"])),
                        "abs_phi": repr(float(r["abs_phi"])), "rank": r["rank"]})
    return path
