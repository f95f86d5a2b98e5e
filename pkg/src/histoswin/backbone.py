"""Residual convolutional feature extractor.

A 3×3 stem conv lifts the image to the first stage width; each stage then
stacks residual blocks ``relu(F(x) + shortcut(x))`` with
``F = conv3×3 -> relu -> conv3×3``. The first block of a stage carries the
stage stride and a 1×1 projection shortcut when the shape changes.
No batch normalization is used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Mapping

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, conv2d, relu


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple = (16, 32)
    blocks: tuple = (1, 1)
    strides: tuple = (2, 2)
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not (len(self.channels) == len(self.blocks) == len(self.strides)) or not self.channels:
            raise ConfigError("backbone channels, blocks and strides must have equal non-zero length")
        if min(self.channels) < 1 or min(self.blocks) < 1 or min(self.strides) < 1 or self.in_channels < 1:
            raise ConfigError("backbone sizes must be positive")

    @property
    def total_stride(self) -> int:
        return prod(self.strides)

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls((16, 32), (1, 1), (2, 2))

    @classmethod
    def imagenet_scale(cls) -> "BackboneConfig":
        """Stride-16 layout shaped like the first four stages of a 50-layer net."""
        return cls((64, 128, 256, 512), (3, 4, 6, 3), (2, 2, 2, 2))

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "blocks": list(self.blocks),
                "strides": list(self.strides), "in_channels": self.in_channels}


@dataclass
class ResidualBlock:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    stride: int = 1
    proj_w: Tensor | None = None
    proj_b: Tensor | None = None

    @property
    def in_channels(self) -> int:
        return self.conv1_w.shape[1]

    @property
    def out_channels(self) -> int:
        return self.conv2_w.shape[0]

    def __post_init__(self):
        needs_proj = self.stride != 1 or self.in_channels != self.out_channels
        if needs_proj and self.proj_w is None:
            raise ShapeError("block changes shape but has no projection shortcut")
        if not needs_proj and self.proj_w is not None:
            raise ShapeError("identity block must not carry projection parameters")

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, stride: int) -> "ResidualBlock":
        return cls(params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"],
                   params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], stride,
                   params.get(f"{prefix}.proj.weight"), params.get(f"{prefix}.proj.bias"))


def residual_block_forward(x: Tensor, block: ResidualBlock) -> Tensor:
    channel_axis = x.ndim - 3
    if x.ndim not in (3, 4) or x.shape[channel_axis] != block.in_channels:
        raise ShapeError(f"block expects {block.in_channels} input channels, got {x.shape}")
    h = relu(conv2d(x, block.conv1_w, block.conv1_b, stride=block.stride, padding=1))
    h = conv2d(h, block.conv2_w, block.conv2_b, stride=1, padding=1)
    if block.proj_w is None:
        shortcut = x
    else:
        shortcut = conv2d(x, block.proj_w, block.proj_b, stride=block.stride, padding=0)
    if shortcut.shape != h.shape:
        raise ShapeError(f"residual shapes differ: {h.shape} vs shortcut {shortcut.shape}")
    return relu(add(h, shortcut))


def block_names(cfg: BackboneConfig) -> list[tuple[str, int, int, int]]:
    """``(prefix, in_channels, out_channels, stride)`` for every block in order."""
    out, cin = [], cfg.channels[0]
    for si, (cout, nblocks, stride) in enumerate(zip(cfg.channels, cfg.blocks, cfg.strides)):
        for bi in range(nblocks):
            s = stride if bi == 0 else 1
            out.append((f"backbone.stage{si}.block{bi}", cin, cout, s))
            cin = cout
    return out


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def conv_param_shapes(cfg: BackboneConfig) -> dict[str, tuple]:
    shapes = {"backbone.stem.weight": (cfg.channels[0], cfg.in_channels, 3, 3),
              "backbone.stem.bias": (cfg.channels[0],)}
    for prefix, cin, cout, stride in block_names(cfg):
        shapes[f"{prefix}.conv1.weight"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.conv1.bias"] = (cout,)
        shapes[f"{prefix}.conv2.weight"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.conv2.bias"] = (cout,)
        if stride != 1 or cin != cout:
            shapes[f"{prefix}.proj.weight"] = (cout, cin, 1, 1)
            shapes[f"{prefix}.proj.bias"] = (cout,)
    return shapes


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform ±sqrt(1/fan_in) weights and biases, drawn in parameter order."""
    params = {}
    shapes = conv_param_shapes(cfg)
    for name, shape in shapes.items():
        wshape = shapes[name.replace(".bias", ".weight")]
        fan_in = int(np.prod(wshape[1:]))
        params[name] = _uniform(rng, shape, fan_in)
    return params


def backbone_forward(x: Tensor, params: Mapping[str, Tensor], cfg: BackboneConfig) -> Tensor:
    """Image ``3×H×W`` (or batched) -> feature map ``C_f×H/s×W/s``."""
    s = cfg.total_stride
    h, w = x.shape[-2:]
    if x.ndim not in (3, 4) or x.shape[-3] != cfg.in_channels:
        raise ShapeError(f"backbone expects {cfg.in_channels}×H×W input, got {x.shape}")
    if h % s or w % s:
        raise ShapeError(f"input {h}×{w} not divisible by backbone stride {s}")
    f = relu(conv2d(x, params["backbone.stem.weight"], params["backbone.stem.bias"], 1, 1))
    for prefix, _, _, stride in block_names(cfg):
        f = residual_block_forward(f, ResidualBlock.from_params(params, prefix, stride))
    return f


def channel_project(f: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise linear map ``C_f -> d`` at every location (a 1×1 convolution)."""
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"projection kernels must be d×C_f×1×1, got {weight.shape}")
    if f.ndim not in (3, 4) or f.shape[-3] != weight.shape[1]:
        raise ShapeError(f"projection expects {weight.shape[1]} channels, got {f.shape}")
    return conv2d(f, weight, bias, stride=1, padding=0)
