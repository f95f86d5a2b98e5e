"""Differentiable operations on :class:`Tensor`.

Every function accepts tensors or array-likes, returns a new tensor and, when
a tape is active and an input requires grad, registers its gradient rule.
Shapes are checked up front and mismatches raise :class:`ShapeError`.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import DataError, ShapeError
from .core import Tensor, as_tensor, make_result

GELU_COEF = 0.7978845608  # sqrt(2/pi), tanh form
GELU_CUBIC = 0.044715
LAYER_NORM_EPS = 1e-5
PROB_FLOOR = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _operand(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        # python scalars must not promote float32 data
        dtype = like.dtype if like is not None else None
        return Tensor._wrap(np.asarray(x, dtype=dtype))
    return as_tensor(x)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd  # non-finite results are rejected by make_result

    def grad_fn(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_result(out, (a, b), grad_fn, "div")


def neg(a) -> Tensor:
    a = _operand(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; both operands need ndim >= 2."""
    a, b = _operand(a), _operand(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(out, (a, b), grad_fn, "matmul")


# ----------------------------------------------------------------- reshaping

def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _operand(a)
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = _operand(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return make_result(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def roll(a, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    a = _operand(a)
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make_result(np.roll(a.data, shifts, axes), (a,),
                       lambda g: (np.roll(g, back, axes),), "roll")


def pad2d(a, pad: int) -> Tensor:
    a = _operand(a)
    if pad == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    return make_result(np.pad(a.data, widths), (a,),
                       lambda g: (g[..., pad:-pad, pad:-pad],), "pad2d")


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _operand(a)
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_result(out, (a,), grad_fn, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _operand(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    if count == 0:
        raise ShapeError("mean over an empty extent")
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def global_avg_pool(x) -> Tensor:
    """Mean over spatial positions (``C×H×W`` -> ``C``) or tokens (``n×d`` -> ``d``)."""
    x = _operand(x)
    if x.ndim == 3:
        axes = (1, 2)
    elif x.ndim == 2:
        axes = (0,)
    else:
        raise ShapeError(f"global_avg_pool expects C×H×W or n×d, got {x.shape}")
    if any(x.shape[i] == 0 for i in axes):
        raise ShapeError("global_avg_pool over an empty extent")
    return mean(x, axis=axes)


# --------------------------------------------------------------- activations

def relu(x) -> Tensor:
    x = _operand(x)
    on = x.data > 0
    return make_result(np.where(on, x.data, 0).astype(x.dtype), (x,),
                       lambda g: (g * on,), "relu")


def gelu(x) -> Tensor:
    """GELU, tanh approximation with coefficient 0.7978845608."""
    x = _operand(x)
    xd = x.data
    inner = GELU_COEF * (xd + GELU_CUBIC * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1 + t)

    def grad_fn(g):
        dinner = GELU_COEF * (1 + 3 * GELU_CUBIC * xd ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * xd * (1 - t * t) * dinner),)

    return make_result(out, (x,), grad_fn, "gelu")


def activation(x, kind: str = "relu") -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    x = _operand(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), grad_fn, "softmax")


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    x, gamma, beta = _operand(x), _operand(gamma), _operand(beta)
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: features {d}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    lead = tuple(range(xd.ndim - 1))

    def grad_fn(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gamma, beta), grad_fn, "layer_norm")


def dropout(x, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
    x = _operand(x)
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    return mul(x, Tensor._wrap(keep))


# ------------------------------------------------------------------ conv2d

def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``C_in×H×W`` or ``N×C_in×H×W``; ``weight`` is ``C_out×C_in×k×k``.
    Each output element accumulates its products sequentially in
    (channel, kernel row, kernel column) order before the bias is added, so
    results are bit-identical to a naive nested loop in the same order.
    """
    x, weight = _operand(x), _operand(weight)
    bias = _operand(bias) if bias is not None else None
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride {stride} / padding {padding} invalid")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, kernels {weight.shape}")
    xd = x.data if batched else x.data[None]
    n, cin, h, w = xd.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin or kh != kw:
        raise ShapeError(f"conv2d: input channels {cin} vs kernels {weight.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}×{kw} larger than padded input {h}×{w} (p={padding})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} for {cout} output channels")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    wd = weight.data
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1

    out = np.zeros((n, cout, ho, wo), dtype=np.result_type(xd, wd))
    # overflow surfaces as NumericError from the finiteness check on the result
    with np.errstate(over="ignore", invalid="ignore"):
        for ci in range(cin):
            for ki in range(kh):
                for kj in range(kw):
                    patch = xp[:, ci, ki:ki + span_h:stride, kj:kj + span_w:stride]
                    out += wd[:, ci, ki, kj][None, :, None, None] * patch[:, None]
        if bias is not None:
            out += bias.data[None, :, None, None]
    result = out if batched else out[0]

    def grad_fn(g):
        g4 = g if batched else g[None]
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                win = xp[:, :, ki:ki + span_h:stride, kj:kj + span_w:stride]
                gw[:, :, ki, kj] = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
                contrib = np.tensordot(wd[:, :, ki, kj], g4, axes=([0], [1]))
                gxp[:, :, ki:ki + span_h:stride, kj:kj + span_w:stride] += contrib.transpose(1, 0, 2, 3)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx if batched else gx[0]), gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(result, parents, grad_fn, "conv2d")


# ------------------------------------------------------------------- losses

def cross_entropy(p, y) -> Tensor:
    """Mean of ``-log(max(p[y], 1e-12))`` over samples.

    ``p`` is a probability vector ``K`` or batch ``N×K``; ``y`` the class
    index (or ``N`` indices).
    """
    p = _operand(p)
    pd = p.data if p.ndim == 2 else p.data[None]
    labels = np.atleast_1d(np.asarray(y))
    k = pd.shape[-1]
    if labels.shape != (pd.shape[0],):
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {pd.shape[0]} rows")
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= k):
        raise DataError(f"cross_entropy: label out of range for {k} classes: {labels.tolist()}")
    rows = np.arange(pd.shape[0])
    picked = pd[rows, labels]
    floor = np.asarray(PROB_FLOOR, dtype=pd.dtype)
    clipped = np.maximum(picked, floor)
    count = pd.shape[0]
    loss = np.asarray(-np.log(clipped).sum() / count, dtype=pd.dtype)

    def grad_fn(g):
        gp = np.zeros_like(pd)
        live = picked > floor
        gp[rows, labels] = np.where(live, -g / (clipped * count), 0)
        return (gp if p.ndim == 2 else gp[0],)

    return make_result(loss, (p,), grad_fn, "cross_entropy")
