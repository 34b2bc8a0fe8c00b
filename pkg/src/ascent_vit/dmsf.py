"""Multi-scale deformable attention over the feature pyramid and gated fusion.

Each patch token queries every pyramid level at ``K`` learned offsets
around its own reference point, per head; the ``S*K`` samples of a head are
mixed with one softmax and the heads are recombined by an output projection.
The fused tokens are ``layer_norm(z_q + psi * I * msda)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ConfigError, LayerNorm, Linear, Module, param
from .mse import FeaturePyramid
from .numerics import DimensionError, Rng, Tensor, as_tensor, concat, gather_bilinear, softmax


@dataclass
class DmsfConfig:
    heads: int = 4
    points: int = 2
    psi: float = 1.0
    i_init: float = 0.01

    def __post_init__(self):
        if self.heads < 1 or self.points < 1:
            raise ConfigError("heads and points must be >= 1")
        if self.psi < 0:
            raise ConfigError("psi must be non-negative")

    @classmethod
    def reference(cls) -> "DmsfConfig":
        return cls(heads=16, points=4, psi=1.0, i_init=0.01)


# psi used per dataset in the reference experiments
PSI_PRESETS = {"cub": 1.0, "cmnist": 2.0, "pascal": 2.0, "awa2": 0.5, "kits": 0.5}


def make_reference_points(grid_side: int) -> np.ndarray:
    """Normalised (u, v) patch centres in row-major order, shape [N, 2]."""
    if grid_side < 1:
        raise ValueError("grid_side must be >= 1")
    idx = (np.arange(grid_side) + 0.5) / grid_side
    v, u = np.meshgrid(idx, idx, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


def phi_scale(p, height: int, width: int):
    """Map normalised points to pixel coordinates of a level (centre-aligned)."""
    p = np.asarray(p, dtype=np.float64)
    return p[..., 0] * width - 0.5, p[..., 1] * height - 0.5


class MSDA(Module):
    """Query-conditioned deformable sampling over ``num_levels`` maps."""

    def __init__(self, rng: Rng, dim: int, cfg: DmsfConfig, num_levels: int):
        super().__init__()
        if dim % cfg.heads:
            raise ConfigError(f"dim {dim} not divisible by {cfg.heads} heads")
        self.cfg = cfg
        self.num_levels = num_levels
        M, S, K = cfg.heads, num_levels, cfg.points
        self.value_proj = Linear(rng, dim, dim)
        self.output_proj = Linear(rng, dim, dim)
        self.offsets = Linear(rng, dim, M * S * K * 2, zero=True)
        self.attn_logits = Linear(rng, dim, M * S * K, std=0.02)

    def __call__(self, queries: Tensor, ref: np.ndarray, pyramid: FeaturePyramid,
                 return_weights: bool = False):
        q = as_tensor(queries)
        B, N, D = q.shape
        M, S, K = self.cfg.heads, self.num_levels, self.cfg.points
        Dh = D // M
        if len(pyramid.shapes) != S:
            raise DimensionError(f"pyramid has {len(pyramid.shapes)} levels, expected {S}")
        if pyramid.flat.shape[-1] != D:
            raise DimensionError(f"pyramid width {pyramid.flat.shape[-1]} != query width {D}")
        if ref.shape != (N, 2):
            raise DimensionError(f"reference points {ref.shape} for {N} queries")
        value = self.value_proj(pyramid.flat)
        off = self.offsets(q).reshape((B, N, M, S, K, 2))
        weights = softmax(self.attn_logits(q).reshape((B, N, M, S * K)), axis=-1)
        w5 = weights.reshape((B, N, M, S, K))
        acc = None
        for i, (H, W) in enumerate(pyramid.shapes):
            start = pyramid.level_offsets[i]
            v = value[:, start:start + H * W].reshape((B, H * W, M, Dh))
            v = v.transpose((0, 2, 1, 3)).reshape((B * M, H * W, Dh))
            px, py = phi_scale(ref, H, W)
            x = off[:, :, :, i, :, 0] + px[None, :, None, None]
            y = off[:, :, :, i, :, 1] + py[None, :, None, None]
            x = x.transpose((0, 2, 1, 3)).reshape((B * M, N * K))
            y = y.transpose((0, 2, 1, 3)).reshape((B * M, N * K))
            s = gather_bilinear(v, H, W, x, y).reshape((B, M, N, K, Dh))
            a = w5[:, :, :, i, :].transpose((0, 2, 1, 3)).reshape((B, M, N, K, 1))
            term = (s * a).sum(axis=3)
            acc = term if acc is None else acc + term
        heads = acc.transpose((0, 2, 1, 3)).reshape((B, N, D))
        out = self.output_proj(heads)
        return (out, weights) if return_weights else out


def fixed_fusion(ref: np.ndarray, pyramid: FeaturePyramid) -> Tensor:
    """Non-deformable scale fusion: mean over levels of the pyramid read at each
    reference point. Used when the encoder is on but deformable attention is off."""
    flat = pyramid.flat
    B, _, D = flat.shape
    acc = None
    for i, (H, W) in enumerate(pyramid.shapes):
        start = pyramid.level_offsets[i]
        px, py = phi_scale(ref, H, W)
        xs = Tensor(np.broadcast_to(px, (B, len(px))))
        ys = Tensor(np.broadcast_to(py, (B, len(py))))
        s = gather_bilinear(flat[:, start:start + H * W], H, W, xs, ys)
        acc = s if acc is None else acc + s
    return acc * (1.0 / len(pyramid.shapes))


def tokens_as_pyramid(patch_tokens: Tensor, grid_side: int) -> FeaturePyramid:
    """Single-level pyramid made from the patch tokens themselves."""
    B, N, D = patch_tokens.shape
    return FeaturePyramid(levels=[patch_tokens.transpose((0, 2, 1)).reshape((B, D, grid_side, grid_side))],
                          flat=patch_tokens, level_offsets=[0], shapes=[(grid_side, grid_side)])


def compose(z_q: Tensor, msda_out: Tensor, gate: Tensor, psi: float, norm: LayerNorm) -> Tensor:
    """CLS-preserving gated residual: patches get ``z_q + psi * (gate * msda_out)``,
    then every token (CLS included) goes through the same layer norm."""
    cls = z_q[:, :1]
    patches = z_q[:, 1:]
    if msda_out.shape != patches.shape:
        raise DimensionError(f"fusion output {msda_out.shape} vs patch tokens {patches.shape}")
    pre = patches + (gate * psi) * msda_out
    return norm(concat([cls, pre], axis=1))


class DeformableFusion(Module):
    """Owns the MSDA operator, gate vector ``I`` and the output layer norm."""

    def __init__(self, rng: Rng, dim: int, grid_side: int, cfg: DmsfConfig,
                 num_levels: int, deformable: bool = True):
        super().__init__()
        self.cfg = cfg
        self.grid_side = grid_side
        self.deformable = deformable
        self.msda = MSDA(rng, dim, cfg, num_levels) if deformable else None
        self.gate = param(np.full(dim, cfg.i_init))
        self.norm = LayerNorm(dim)
        self.ref = make_reference_points(grid_side)

    def fuse(self, z_q: Tensor, pyramid: FeaturePyramid, return_weights: bool = False):
        patches = z_q[:, 1:]
        if self.deformable:
            return self.msda(patches, self.ref, pyramid, return_weights=return_weights)
        out = fixed_fusion(self.ref, pyramid)
        return (out, None) if return_weights else out

    def __call__(self, z_q: Tensor, pyramid: FeaturePyramid | None, return_weights: bool = False):
        if self.cfg.psi == 0:
            # gate closed: the scale branch cannot influence z
            z = self.norm(z_q)
            return (z, None) if return_weights else z
        fused, weights = self.fuse(z_q, pyramid, return_weights=True)
        z = compose(z_q, fused, self.gate, self.cfg.psi, self.norm)
        return (z, weights) if return_weights else z
