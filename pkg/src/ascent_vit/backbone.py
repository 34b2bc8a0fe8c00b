"""Plain ViT encoder producing the patch token sequence.

Token sequences are ``Tensor[B, N+1, dim]`` (or ``[N+1, dim]`` for a single
image) with the CLS token at index 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import ConfigError, LayerNorm, Linear, Module, param, trunc_normal
from .numerics import Rng, Tensor, as_tensor, concat, gelu, matmul, softmax


@dataclass
class BackboneConfig:
    image_size: int = 32
    channels: int = 1
    patch_size: int = 4
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    finetune: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.image_size, self.channels, self.patch_size, self.dim, self.heads,
               self.mlp_ratio) <= 0 or self.depth < 0:
            raise ConfigError("backbone sizes must be positive")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side ** 2

    @classmethod
    def reference(cls) -> "BackboneConfig":
        """ViT-Large sized geometry: 224 px, 16 px patches, width 1024."""
        return cls(image_size=224, channels=3, patch_size=16, dim=1024, depth=24, heads=16)


def patchify(image, cfg: BackboneConfig) -> Tensor:
    """Split into non-overlapping patches in row-major order.

    [C,H,W] -> [N, C*p*p] and [B,C,H,W] -> [B, N, C*p*p]; each patch is
    flattened channel-major.
    """
    x = as_tensor(image)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    B, C, H, W = x.shape
    if H != cfg.image_size or W != cfg.image_size:
        raise ConfigError(f"image {H}x{W} does not match image_size {cfg.image_size}")
    p, g = cfg.patch_size, cfg.grid_side
    out = x.reshape((B, C, g, p, g, p)).transpose((0, 2, 4, 1, 3, 5)).reshape((B, g * g, C * p * p))
    return out.reshape(out.shape[1:]) if single else out


def attention(q, k, v, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    scores = matmul(q, k.transpose(tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    weights = softmax(scores * (1.0 / math.sqrt(d)), axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, rng: Rng, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = Linear(rng, dim, 3 * dim, bias=False, std=0.02)
        # a key bias shifts every score of a query equally and so never
        # reaches the output; only queries and values carry a bias
        self.q_bias = param(np.zeros(dim))
        self.v_bias = param(np.zeros(dim))
        self.proj = Linear(rng, dim, dim, std=0.02)

    def __call__(self, x: Tensor):
        B, T, D = x.shape
        h = self.heads
        bias = concat([self.q_bias, Tensor(np.zeros(D)), self.v_bias], axis=0)
        qkv = (self.qkv(x) + bias).reshape((B, T, 3, h, D // h)).transpose((2, 0, 3, 1, 4))
        out, weights = attention(qkv[0], qkv[1], qkv[2], return_weights=True)
        out = out.transpose((0, 2, 1, 3)).reshape((B, T, D))
        return self.proj(out), weights


class TransformerBlock(Module):
    """Pre-norm attention and GELU MLP, each with a residual connection."""

    def __init__(self, rng: Rng, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(rng, dim, dim * mlp_ratio, std=0.02)
        self.fc2 = Linear(rng, dim * mlp_ratio, dim, std=0.02)

    def __call__(self, x: Tensor):
        a, weights = self.attn(self.norm1(x))
        x = x + a
        x = x + self.fc2(gelu(self.fc1(self.norm2(x))))
        return x, weights


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.channels * cfg.patch_size ** 2
        self.patch_embed = Linear(rng, patch_dim, cfg.dim)
        self.cls_token = param(trunc_normal(rng, (1, 1, cfg.dim)))
        self.pos_embed = param(trunc_normal(rng, (1, cfg.num_patches + 1, cfg.dim)))
        self.blocks = [TransformerBlock(rng, cfg.dim, cfg.heads, cfg.mlp_ratio)
                       for _ in range(cfg.depth)]
        if not cfg.finetune:
            self.freeze()

    def embed(self, patches: Tensor) -> Tensor:
        """Project patches, prepend CLS, add positions: [B,N,P] -> [B,N+1,dim]."""
        patches = as_tensor(patches)
        if patches.ndim == 2:
            return self.embed(patches.reshape((1,) + patches.shape)).reshape(
                (patches.shape[0] + 1, self.cfg.dim))
        B = patches.shape[0]
        tokens = self.patch_embed(patches)
        cls = self.cls_token + Tensor(np.zeros((B, 1, 1)))
        return concat([cls, tokens], axis=1) + self.pos_embed

    def __call__(self, images, return_attention: bool = False):
        x = as_tensor(images)
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        z = self.embed(patchify(x, self.cfg))
        maps = []
        for block in self.blocks:
            z, w = block(z)
            maps.append(w)
        if single:
            z = z.reshape(z.shape[1:])
        return (z, maps) if return_attention else z
