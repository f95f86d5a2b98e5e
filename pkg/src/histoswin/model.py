"""End-to-end hybrid classifier: residual backbone -> windowed attention -> head.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted names;
the key order is the canonical order used by initialization and
checkpoints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .backbone import BackboneConfig, backbone_forward, channel_project, conv_param_shapes, init_backbone
from .errors import ConfigError, ShapeError
from .swin import AttentionParams, WindowLayout, build_attention_mask, swin_stage_tokens
from .tensor import Tensor, add, as_tensor, dropout, mean, mul, reshape, softmax, transpose
from .tensor import tsum

HybridModelParams = dict  # name -> float32 array

EVAL_CHUNK = 16


@dataclass(frozen=True)
class HybridModelConfig:
    input_size: int = 64
    backbone: BackboneConfig = field(default_factory=BackboneConfig.desk)
    embed_dim: int = 32
    heads: int = 2
    window: int = 4
    shift: Optional[int] = None
    num_swin_blocks: int = 2
    num_classes: int = 2
    seed: int = 0
    rel_pos_bias: bool = False

    def __post_init__(self):
        if isinstance(self.backbone, Mapping):
            object.__setattr__(self, "backbone", BackboneConfig(**self.backbone))
        if self.shift is None:
            object.__setattr__(self, "shift", self.window // 2)
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.num_swin_blocks < 0:
            raise ConfigError("num_swin_blocks must be non-negative")
        if self.input_size % self.backbone.total_stride:
            raise ConfigError(f"input {self.input_size} not divisible by backbone stride "
                              f"{self.backbone.total_stride}")
        if self.window < 1 or self.feature_size % self.window:
            raise ConfigError(f"feature map {self.feature_size} not divisible by window {self.window}")
        if not 0 <= self.shift < self.window:
            raise ConfigError(f"shift {self.shift} outside [0, {self.window})")

    @property
    def feature_size(self) -> int:
        return self.input_size // self.backbone.total_stride

    @property
    def layout(self) -> WindowLayout:
        return WindowLayout(self.feature_size, self.feature_size, self.window, self.shift)

    @property
    def input_shape(self) -> tuple:
        return (self.backbone.in_channels, self.input_size, self.input_size)

    @classmethod
    def desk(cls, **overrides) -> "HybridModelConfig":
        return cls(**overrides)

    @classmethod
    def paper_scale(cls, **overrides) -> "HybridModelConfig":
        """224-pixel input, stride-16 backbone, 14×14 tokens in 7×7 windows."""
        base = dict(input_size=224, backbone=BackboneConfig.imagenet_scale(), embed_dim=128,
                    heads=4, window=7, shift=3, num_swin_blocks=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "backbone": self.backbone.to_dict(),
                "embed_dim": self.embed_dim, "heads": self.heads, "window": self.window,
                "shift": self.shift, "num_swin_blocks": self.num_swin_blocks,
                "num_classes": self.num_classes, "seed": self.seed,
                "rel_pos_bias": self.rel_pos_bias}

    @classmethod
    def from_dict(cls, d: Mapping) -> "HybridModelConfig":
        d = dict(d)
        if "backbone" in d:
            d["backbone"] = BackboneConfig(**d["backbone"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Prediction:
    probabilities: np.ndarray
    label: int
    confidence: float


def param_shapes(cfg: HybridModelConfig) -> dict[str, tuple]:
    shapes = conv_param_shapes(cfg.backbone)
    d, n = cfg.embed_dim, cfg.window * cfg.window
    shapes["embed.weight"] = (d, cfg.backbone.out_channels, 1, 1)
    shapes["embed.bias"] = (d,)
    for b in range(cfg.num_swin_blocks):
        for stage in ("wmsa", "swmsa"):
            for proj in ("q", "k", "v", "out"):
                shapes[f"swin{b}.{stage}.{proj}"] = (d, d)
            if cfg.rel_pos_bias:
                shapes[f"swin{b}.{stage}.bias"] = (cfg.heads, n, n)
        shapes[f"swin{b}.norm.gamma"] = (d,)
        shapes[f"swin{b}.norm.beta"] = (d,)
    shapes["head.weight"] = (cfg.num_classes, d)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def param_count(cfg: HybridModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def model_init(cfg: HybridModelConfig) -> HybridModelParams:
    """Seeded uniform(±sqrt(1/fan_in)) init; norms start at gamma=1, beta=0."""
    rng = np.random.default_rng(cfg.seed)
    params = init_backbone(cfg.backbone, rng)
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        if name in params:
            continue
        if name.endswith("norm.gamma"):
            params[name] = np.ones(shape, np.float32)
        elif name.endswith("norm.beta") or name.endswith("msa.bias"):
            params[name] = np.zeros(shape, np.float32)
        else:
            fan_in = {"embed.weight": cfg.backbone.out_channels, "embed.bias": cfg.backbone.out_channels}.get(
                name, cfg.embed_dim)
            bound = np.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return {name: params[name] for name in shapes}


def _tensors(params: Mapping) -> dict:
    return {k: as_tensor(v) for k, v in params.items()}


def _check_input(x: Tensor, cfg: HybridModelConfig) -> None:
    if x.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise ShapeError(f"expected input N×{'×'.join(map(str, cfg.input_shape))}, got {x.shape}")


def forward_batch(x, params: Mapping, cfg: HybridModelConfig, dropout_rate: float = 0.0,
                  rng: Optional[np.random.Generator] = None, return_embedding: bool = False):
    """Batched pass ``N×3×H×W`` -> class probabilities ``N×K``.

    Dropout on the pooled embedding is active only when ``rng`` is given.
    """
    x = as_tensor(x)
    _check_input(x, cfg)
    p = _tensors(params)
    layout = cfg.layout
    f = backbone_forward(x, p, cfg.backbone)
    f = channel_project(f, p["embed.weight"], p["embed.bias"])
    t = transpose(f, (0, 2, 3, 1))
    mask = build_attention_mask(layout)
    for b in range(cfg.num_swin_blocks):
        t = swin_stage_tokens(t, AttentionParams.from_params(p, f"swin{b}.wmsa", cfg.heads),
                              AttentionParams.from_params(p, f"swin{b}.swmsa", cfg.heads),
                              p[f"swin{b}.norm.gamma"], p[f"swin{b}.norm.beta"], layout, mask)
    z = mean(t, axis=(1, 2))
    zd = dropout(z, dropout_rate, rng)
    n, d = z.shape
    # row-wise products keep each sample's logits independent of batch size
    logits = add(tsum(mul(reshape(zd, (n, 1, d)), p["head.weight"]), axis=-1), p["head.bias"])
    probs = softmax(logits)
    return (probs, z) if return_embedding else probs


def _prediction(row: np.ndarray) -> Prediction:
    label = int(np.argmax(row))
    return Prediction(row.copy(), label, float(row[label]))


def forward(x, params: Mapping, cfg: HybridModelConfig) -> Prediction:
    """Classify one normalized ``3×H×W`` image."""
    x = as_tensor(x)
    if x.shape != cfg.input_shape:
        raise ShapeError(f"expected input {cfg.input_shape}, got {x.shape}")
    probs = forward_batch(reshape(x, (1,) + x.shape), params, cfg)
    return _prediction(probs.data[0])


def _stack(xs: Sequence, cfg: HybridModelConfig) -> np.ndarray:
    arrays = [np.asarray(x.data if isinstance(x, Tensor) else x) for x in xs]
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ShapeError(f"heterogeneous input shapes: {sorted(shapes)}")
    return np.stack(arrays).astype(np.float32, copy=False)


def predict_proba(xs, params: Mapping, cfg: HybridModelConfig, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Probabilities for a stack (or list) of images, evaluated in fixed chunks."""
    if len(xs) == 0:
        return np.zeros((0, cfg.num_classes), np.float32)
    arr = _stack(xs, cfg) if not isinstance(xs, np.ndarray) else xs.astype(np.float32, copy=False)
    return np.concatenate([forward_batch(arr[i:i + chunk], params, cfg).data
                           for i in range(0, len(arr), chunk)])


def embed(xs, params: Mapping, cfg: HybridModelConfig, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Pooled embeddings ``z`` (before the classifier head) for a stack of images."""
    arr = _stack(xs, cfg) if not isinstance(xs, np.ndarray) else xs.astype(np.float32, copy=False)
    return np.concatenate([forward_batch(arr[i:i + chunk], params, cfg, return_embedding=True)[1].data
                           for i in range(0, len(arr), chunk)])


def head_probabilities(z: np.ndarray, params: Mapping) -> np.ndarray:
    """Classifier head + softmax applied to pooled embeddings ``N×d``."""
    w = np.asarray(params["head.weight"])
    logits = (z[:, None, :] * w[None]).sum(axis=-1) + np.asarray(params["head.bias"])
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def classify_batch(xs: Sequence, params: Mapping, cfg: HybridModelConfig) -> list[Prediction]:
    if len(xs) == 0:
        return []
    arr = _stack(xs, cfg)
    if arr.shape[1:] != cfg.input_shape:
        raise ShapeError(f"expected inputs {cfg.input_shape}, got {arr.shape[1:]}")
    return [_prediction(row) for row in predict_proba(arr, params, cfg)]
