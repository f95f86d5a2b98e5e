"""Window partitioning, shifted windows and window-local multi-head attention.

Public functions take channel-first feature maps (``d×H×W`` or batched
``N×d×H×W``). Tokens inside the attention stage are kept channel-last; a
window's tokens are ordered row-major and windows are ordered row-major over
the window grid, batch-major when batched.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, add, as_tensor, layer_norm, matmul, mul, reshape, roll, softmax, transpose

MASK_FILL = -1e9


@dataclass(frozen=True)
class WindowLayout:
    height: int
    width: int
    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1 or self.height % self.window or self.width % self.window:
            raise ShapeError(f"{self.height}×{self.width} map is not divisible into "
                             f"{self.window}×{self.window} windows")
        if not 0 <= self.shift < self.window:
            raise ShapeError(f"shift {self.shift} outside [0, {self.window})")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.window, self.width // self.window

    @property
    def num_windows(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def tokens_per_window(self) -> int:
        return self.window * self.window

    def unshifted(self) -> "WindowLayout":
        return WindowLayout(self.height, self.width, self.window, 0)


@dataclass
class AttentionParams:
    """Projections for ``heads`` heads; head ``i`` uses columns ``i*d_k:(i+1)*d_k``."""

    q: Tensor
    k: Tensor
    v: Tensor
    out: Tensor
    heads: int
    bias: Optional[Tensor] = None  # optional learned heads×n×n additive logits

    def __post_init__(self):
        d = self.q.shape[0]
        if self.heads < 1 or d % self.heads:
            raise ConfigError(f"embed dim {d} not divisible by {self.heads} heads")
        for name in ("q", "k", "v"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} projection must be {d}×{d}, got {getattr(self, name).shape}")
        if self.out.shape != (d, d):
            raise ShapeError(f"output projection must be {d}×{d}, got {self.out.shape}")

    @property
    def embed_dim(self) -> int:
        return self.q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @classmethod
    def from_params(cls, params, prefix: str, heads: int) -> "AttentionParams":
        return cls(params[f"{prefix}.q"], params[f"{prefix}.k"], params[f"{prefix}.v"],
                   params[f"{prefix}.out"], heads, params.get(f"{prefix}.bias"))


# ------------------------------------------------------------ layout helpers

def _to_channels_last(f: Tensor) -> Tensor:
    return transpose(f, (0, 2, 3, 1)) if f.ndim == 4 else transpose(f, (1, 2, 0))


def _to_channels_first(t: Tensor) -> Tensor:
    return transpose(t, (0, 3, 1, 2)) if t.ndim == 4 else transpose(t, (2, 0, 1))


def partition_tokens(t: Tensor, window: int) -> Tensor:
    """Channel-last ``N×H×W×d`` -> ``(N·M)×w²×d``."""
    n, h, w, d = t.shape
    x = reshape(t, (n, h // window, window, w // window, window, d))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (n * (h // window) * (w // window), window * window, d))


def reverse_tokens(windows: Tensor, batch: int, height: int, width: int) -> Tensor:
    """Inverse of :func:`partition_tokens`."""
    nm, n2, d = windows.shape
    window = int(round(sqrt(n2)))
    gh, gw = height // window, width // window
    if window * window != n2 or nm != batch * gh * gw:
        raise ShapeError(f"{nm} windows of {n2} tokens do not tile {batch}×{height}×{width}")
    x = reshape(windows, (batch, gh, gw, window, window, d))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (batch, height, width, d))


def _check_map(f: Tensor, layout: WindowLayout) -> None:
    if f.ndim not in (3, 4) or f.shape[-2:] != (layout.height, layout.width):
        raise ShapeError(f"feature map {f.shape} does not match layout "
                         f"{layout.height}×{layout.width}")


def window_partition(f, layout: WindowLayout) -> Tensor:
    """``d×H×W`` -> ``M×w²×d`` (``N×d×H×W`` -> ``(N·M)×w²×d``)."""
    f = as_tensor(f)
    _check_map(f, layout)
    t = _to_channels_last(f)
    if t.ndim == 3:
        t = reshape(t, (1,) + t.shape)
    return partition_tokens(t, layout.window)


def window_reverse(windows, layout: WindowLayout, batch: Optional[int] = None) -> Tensor:
    """Inverse of :func:`window_partition`; ``batch=None`` returns ``d×H×W``."""
    windows = as_tensor(windows)
    if windows.ndim != 3 or windows.shape[1] != layout.tokens_per_window:
        raise ShapeError(f"windows {windows.shape} inconsistent with window {layout.window}")
    t = reverse_tokens(windows, batch or 1, layout.height, layout.width)
    f = _to_channels_first(t)
    return reshape(f, f.shape[1:]) if batch is None else f


def cyclic_shift(f, shift: int, direction: str = "forward") -> Tensor:
    """Torus roll of the spatial axes by ``-shift`` (forward) or ``+shift`` (inverse)."""
    f = as_tensor(f)
    if not 0 <= shift < min(f.shape[-2:]):
        raise ShapeError(f"shift {shift} outside [0, {min(f.shape[-2:])})")
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    s = -shift if direction == "forward" else shift
    return roll(f, (s, s), (-2, -1))


# ------------------------------------------------------------------- masking

def region_labels(layout: WindowLayout) -> np.ndarray:
    """Region id per position of the shifted map that gets partitioned.

    Rows split at ``H-w`` and ``H-s`` (columns likewise); the band past
    ``H-s`` holds positions that wrapped around during the shift.
    """
    def bands(n):
        lab = np.zeros(n, dtype=np.int64)
        if layout.shift:
            lab[n - layout.window:n - layout.shift] = 1
            lab[n - layout.shift:] = 2
        return lab

    return bands(layout.height)[:, None] * 3 + bands(layout.width)[None, :]


def build_attention_mask(layout: WindowLayout) -> np.ndarray:
    """Boolean ``M×w²×w²`` admissibility per window (True = may attend)."""
    labels = region_labels(layout).astype(np.float64)[None, :, :, None]
    win = partition_tokens(Tensor._wrap(labels), layout.window).data[..., 0]
    return win[:, :, None] == win[:, None, :]


def mask_to_bias(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    return np.where(mask, 0.0, MASK_FILL).astype(dtype)


# ----------------------------------------------------------------- attention

def multi_head_attention(tokens, params: AttentionParams, mask: Optional[np.ndarray] = None,
                         return_weights: bool = False):
    """Scaled dot-product attention over ``n×d`` tokens (or ``B×n×d``).

    ``mask`` is boolean ``n×n``, ``M×n×n`` (tiled over a batch of ``B = N·M``
    windows) or ``B×n×n``; inadmissible logits get ``-1e9`` before softmax.
    Returns ``Z`` and, with ``return_weights``, the ``B×heads×n×n`` weights.
    """
    tokens = as_tensor(tokens)
    single = tokens.ndim == 2
    x = reshape(tokens, (1,) + tokens.shape) if single else tokens
    if x.ndim != 3 or x.shape[-1] != params.embed_dim:
        raise ShapeError(f"tokens {tokens.shape} do not match embed dim {params.embed_dim}")
    b, n, d = x.shape
    h, dk = params.heads, params.head_dim

    def heads(proj):
        return transpose(reshape(matmul(x, proj), (b, n, h, dk)), (0, 2, 1, 3))

    q, k, v = heads(params.q), heads(params.k), heads(params.v)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / sqrt(dk))
    if params.bias is not None:
        scores = add(scores, params.bias)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (n, n):
            raise ShapeError(f"mask {mask.shape} for {n} tokens")
        if not mask.any(axis=-1).all():
            raise ContractError("attention mask has a row with no admissible entry")
        if not mask.all():
            m = mask.reshape((-1, n, n))
            if b % m.shape[0]:
                raise ShapeError(f"mask for {m.shape[0]} windows cannot tile {b}")
            bias = mask_to_bias(np.tile(m, (b // m.shape[0], 1, 1)), scores.dtype)
            scores = add(scores, Tensor._wrap(bias[:, None]))
    weights = softmax(scores)
    z = transpose(matmul(weights, v), (0, 2, 1, 3))
    out = matmul(reshape(z, (b, n, h * dk)), params.out)
    if single:
        out = reshape(out, (n, d))
    return (out, weights) if return_weights else out


def swin_stage_tokens(t: Tensor, attn_a: AttentionParams, attn_b: AttentionParams,
                      gamma: Tensor, beta: Tensor, layout: WindowLayout,
                      mask: Optional[np.ndarray] = None, weights: Optional[dict] = None) -> Tensor:
    """One block on channel-last tokens ``N×H×W×d``.

    Window attention with residual, then shifted-window attention with
    residual, then a single layer norm over the token features.
    """
    n = t.shape[0]
    w, s = layout.window, layout.shift
    wins = partition_tokens(t, w)
    za = multi_head_attention(wins, attn_a, return_weights=weights is not None)
    if weights is not None:
        za, weights["stage_a"] = za
    t = reverse_tokens(add(wins, za), n, layout.height, layout.width)

    shifted = roll(t, (-s, -s), (1, 2)) if s else t
    if mask is None:
        mask = build_attention_mask(layout)
    wins = partition_tokens(shifted, w)
    zb = multi_head_attention(wins, attn_b, mask, return_weights=weights is not None)
    if weights is not None:
        zb, weights["stage_b"] = zb
    back = reverse_tokens(add(wins, zb), n, layout.height, layout.width)
    t = roll(back, (s, s), (1, 2)) if s else back
    return layer_norm(t, gamma, beta)


def swin_block_forward(f, params: Sequence[AttentionParams], norm: Sequence[Tensor],
                       layout: WindowLayout, return_weights: bool = False):
    """Channel-first ``d×H×W`` (or batched) block; see :func:`swin_stage_tokens`."""
    f = as_tensor(f)
    _check_map(f, layout)
    batched = f.ndim == 4
    t = _to_channels_last(f)
    if not batched:
        t = reshape(t, (1,) + t.shape)
    weights = {} if return_weights else None
    t = swin_stage_tokens(t, params[0], params[1], norm[0], norm[1], layout, weights=weights)
    out = _to_channels_first(t if batched else reshape(t, t.shape[1:]))
    return (out, weights) if return_weights else out
