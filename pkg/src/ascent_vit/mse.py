"""Convolutional multi-scale encoder and the flattened feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .layers import ConfigError, ConvBNReLU, Module
from .numerics import DimensionError, Rng, Tensor, as_tensor, concat


def _as_fraction(x) -> Fraction:
    return Fraction(x).limit_denominator(1 << 16)


@dataclass
class MseConfig:
    """Encoder geometry.

    ``scale_fractions`` give each level's extent relative to the input. The
    first block ends in a max pool of window ``1/scale_fractions[0]``; every
    later block is a single stride-2 convolution, so consecutive fractions
    must halve. ``channels`` defaults to the backbone width at every level.
    ``stem_width`` is the width of the first two convolutions of block one.
    """

    num_scales: int = 3
    channels: tuple[int, ...] | None = None
    stem_width: int = 8
    scale_fractions: tuple[float, ...] = (1 / 2, 1 / 4, 1 / 8)
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.num_scales < 1:
            raise ConfigError("num_scales must be >= 1")
        fr = [_as_fraction(f) for f in self.scale_fractions]
        if len(fr) != self.num_scales:
            raise ConfigError(
                f"{len(fr)} scale fractions given for {self.num_scales} scales")
        if any(b >= a for a, b in zip(fr, fr[1:])):
            raise ConfigError("scale fractions must be strictly decreasing")
        if any(b * 2 != a for a, b in zip(fr, fr[1:])):
            raise ConfigError("consecutive scale fractions must halve (stride-2 blocks)")
        if fr[0] > 1 or fr[0].numerator != 1:
            raise ConfigError("first scale fraction must be 1/k")
        if self.channels is not None and len(self.channels) != self.num_scales:
            raise ConfigError("one channel count per scale required")
        if self.stem_width < 1:
            raise ConfigError("stem_width must be positive")

    @property
    def pool(self) -> int:
        return _as_fraction(self.scale_fractions[0]).denominator

    def level_channels(self, dim: int) -> tuple[int, ...]:
        return tuple(self.channels) if self.channels is not None else (dim,) * self.num_scales

    def level_sizes(self, image_size: int) -> list[int]:
        side = image_size // self.pool
        sizes = [side]
        for _ in range(self.num_scales - 1):
            side = (side - 1) // 2 + 1
            sizes.append(side)
        return sizes

    @classmethod
    def reference(cls) -> "MseConfig":
        return cls(num_scales=3, scale_fractions=(1 / 8, 1 / 16, 1 / 32))


# Level sizes as printed for the 224-pixel reference setup. They are not what
# the stated fractions give (28*28=784 rows for 1/8, 7*7=49 for 1/32) and are
# kept only for comparison; ``MseConfig.level_sizes`` is authoritative.
REPORTED_LEVEL_ROWS = (1024, 196, 16)
REPORTED_TOTAL_ROWS = 1029


@dataclass
class FeaturePyramid:
    """Per-level maps ``[B, C, H_i, W_i]`` and their concatenation ``[B, sum H_i W_i, C]``."""

    levels: list[Tensor]
    flat: Tensor
    level_offsets: list[int]
    shapes: list[tuple[int, int]] = field(default_factory=list)

    def level_slice(self, i: int) -> Tensor:
        """Rows of ``flat`` belonging to level ``i``, reshaped back to [B, C, H, W]."""
        H, W = self.shapes[i]
        start = self.level_offsets[i]
        B, _, C = self.flat.shape
        rows = self.flat[:, start:start + H * W]
        return rows.transpose((0, 2, 1)).reshape((B, C, H, W))


def flatten_concat(levels) -> FeaturePyramid:
    """Flatten each level row-major over space (channels as columns) and stack."""
    if not levels:
        raise DimensionError("flatten_concat needs at least one level")
    levels = [as_tensor(l) for l in levels]
    single = levels[0].ndim == 3
    if single:
        levels = [l.reshape((1,) + l.shape) for l in levels]
    C = levels[0].shape[1]
    rows, offsets, shapes = [], [], []
    start = 0
    for l in levels:
        B, c, H, W = l.shape
        if c != C:
            raise DimensionError(f"level channel mismatch: {c} vs {C}")
        rows.append(l.reshape((B, c, H * W)).transpose((0, 2, 1)))
        offsets.append(start)
        shapes.append((H, W))
        start += H * W
    flat = concat(rows, axis=1)
    if single:
        flat = flat.reshape(flat.shape[1:])
        levels = [l.reshape(l.shape[1:]) for l in levels]
    return FeaturePyramid(levels, flat, offsets, shapes)


class MultiScaleEncoder(Module):
    def __init__(self, cfg: MseConfig, dim: int, in_channels: int, rng: Rng):
        super().__init__()
        self.cfg = cfg
        ch = cfg.level_channels(dim)
        m = cfg.bn_momentum
        self.stem = [
            ConvBNReLU(rng, in_channels, cfg.stem_width, momentum=m),
            ConvBNReLU(rng, cfg.stem_width, cfg.stem_width, momentum=m),
            ConvBNReLU(rng, cfg.stem_width, ch[0], momentum=m),
        ]
        self.downs = [ConvBNReLU(rng, ch[i - 1], ch[i], stride=2, momentum=m)
                      for i in range(1, cfg.num_scales)]

    def __call__(self, images, training: bool = False) -> FeaturePyramid:
        x = as_tensor(images)
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if min(x.shape[2:]) < 2 ** self.cfg.num_scales:
            raise ConfigError(
                f"image {x.shape[2]}x{x.shape[3]} too small for {self.cfg.num_scales} scales")
        # the conv stack runs channels-last; the flat pyramid is then a plain reshape
        x = x.transpose((0, 2, 3, 1))
        for layer in self.stem[:-1]:
            x = layer(x, training, channels_last=True)
        x = self.stem[-1](x, training, channels_last=True, pool=self.cfg.pool)
        maps = [x]
        for layer in self.downs:
            x = layer(x, training, channels_last=True)
            maps.append(x)
        B, C = x.shape[0], x.shape[-1]
        rows, offsets, shapes = [], [], []
        start = 0
        for m in maps:
            H, W = m.shape[1:3]
            rows.append(m.reshape((B, H * W, C)))
            offsets.append(start)
            shapes.append((H, W))
            start += H * W
        flat = concat(rows, axis=1)
        levels = [m.transpose((0, 3, 1, 2)) for m in maps]
        if single:
            levels = [l.reshape(l.shape[1:]) for l in levels]
            flat = flat.reshape(flat.shape[1:])
        return FeaturePyramid(levels, flat, offsets, shapes)


def pyramid_forward(image, encoder: MultiScaleEncoder, training: bool = False) -> FeaturePyramid:
    return encoder(image, training=training)
