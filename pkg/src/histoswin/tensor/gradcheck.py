"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    excluded: list = field(default_factory=list)
    worst_index: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{state} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} "
                f"checked={self.checked} excluded={len(self.excluded)}")


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    return float(f(Tensor._wrap(x)).data)


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-4, tol: float = 1e-3,
               indices: Optional[Sequence[tuple]] = None, floor: float = 1e-3,
               fd_dtype=None) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` to central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``. An entry
    whose mismatch is no larger than the gap between its forward and
    backward one-sided slopes sits on a kink (e.g. relu at 0) and is
    excluded rather than compared. ``fd_dtype`` evaluates the differences at
    a different precision than the analytic pass (64-bit oracles for 32-bit
    gradients).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    leaf = Tensor(x, requires_grad=True)
    tape = Tape()
    with tape:
        out = f(leaf)
    backward(out, tape)
    analytic = leaf.grad.astype(np.float64)

    base = x.astype(fd_dtype) if fd_dtype is not None else x.copy()
    f0 = _evaluate(f, base)
    if indices is None:
        indices = list(np.ndindex(*x.shape))
    worst, worst_idx, excluded = 0.0, None, []
    for idx in indices:
        idx = tuple(int(i) for i in idx)
        orig = base[idx]
        base[idx] = orig + step
        fp = _evaluate(f, base)
        base[idx] = orig - step
        fm = _evaluate(f, base)
        base[idx] = orig
        step_up = float(base.dtype.type(orig + step) - orig)
        step_dn = float(orig - base.dtype.type(orig - step))
        numeric = (fp - fm) / (step_up + step_dn)
        a = analytic[idx]
        err = relative_error(a, numeric, floor)
        if err > tol:
            one_sided_gap = abs((fp - f0) / step_up - (f0 - fm) / step_dn)
            if abs(a - numeric) <= one_sided_gap:
                excluded.append(idx)
                continue
        if err > worst:
            worst, worst_idx = err, idx
    return GradCheckReport(worst, tol, len(indices) - len(excluded), excluded, worst_idx)


def _analytic_grads(f: Callable[[dict], Tensor], params: Mapping[str, np.ndarray]) -> dict:
    leaves = {k: Tensor(np.asarray(v), requires_grad=True, name=k) for k, v in params.items()}
    tape = Tape()
    with tape:
        out = f(leaves)
    backward(out, tape)
    return {k: t.grad.astype(np.float64) for k, t in leaves.items()}


def grad_check_params(f: Callable[[dict], Tensor], params: Mapping[str, np.ndarray],
                      indices: Mapping[str, Sequence[tuple]], step: float = 1e-6, tol: float = 1e-3,
                      floor: float = 1e-3, fd_dtype=np.float64, directions: int = 1,
                      rng: Optional[np.random.Generator] = None) -> dict[str, GradCheckReport]:
    """Per-tensor gradient check of a scalar function of a parameter dict.

    One backward pass gives every analytic gradient. Each tensor is then
    checked entrywise at ``indices[name]`` and along ``directions`` random
    unit directions (which touch every entry at once), with differences
    taken on a ``fd_dtype`` copy of all parameters. The kink rule of
    :func:`grad_check` applies to both.
    """
    analytic = _analytic_grads(f, params)
    base = {k: np.array(v, dtype=fd_dtype) for k, v in params.items()}

    def value() -> float:
        return float(f({k: Tensor._wrap(v) for k, v in base.items()}).data)

    f0 = value()
    rng = rng if rng is not None else np.random.default_rng(0)
    reports = {}
    for name in params:
        arr, grad = base[name], analytic[name]
        worst, worst_idx, excluded, checked = 0.0, None, [], 0
        probes = [(tuple(int(i) for i in idx), None) for idx in indices.get(name, ())]
        for d in range(directions):
            u = rng.standard_normal(arr.shape)
            probes.append((("direction", d), u / np.linalg.norm(u)))
        for key, u in probes:
            orig = arr.copy()
            if u is None:
                arr[key] = orig[key] + step
                fp = value()
                arr[key] = orig[key] - step
                fm = value()
                a = grad[key]
            else:
                arr += step * u
                fp = value()
                arr[...] = orig - step * u
                fm = value()
                a = float((grad * u).sum())
            arr[...] = orig
            numeric = (fp - fm) / (2 * step)
            err = relative_error(a, numeric, floor)
            checked += 1
            if err > tol and abs(a - numeric) <= abs((fp - f0) - (f0 - fm)) / step:
                excluded.append(key)
                checked -= 1
                continue
            if err > worst:
                worst, worst_idx = err, key
        reports[name] = GradCheckReport(worst, tol, checked, excluded, worst_idx)
    return reports


def sample_indices(shape: tuple, count: int, rng: np.random.Generator) -> list[tuple]:
    """Up to ``count`` distinct multi-indices drawn uniformly from ``shape``."""
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(count, total), replace=False)
    return [np.unravel_index(int(i), shape) for i in np.sort(flat)]
