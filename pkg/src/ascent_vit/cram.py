"""Concept attention head.

Tokens attend over concept embeddings; the token-by-concept attention is both
the explanation and, through ``V = C P_k``, the path to the class logits:
``logits = mean_tokens(A V) P_v``, summed over the spatial and global concept
groups. With several heads the projected width is split per head, each head
has its own softmax, and head outputs are concatenated before ``P_v``; the
attention reported for explanation and supervision is the head average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import ConfigError, Module, param, trunc_normal
from .numerics import Rng, Tensor, as_tensor, matmul, softmax


@dataclass
class ConceptSet:
    t_spatial: int
    t_global: int
    spatial_names: tuple[str, ...] = ()
    global_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.t_spatial < 0 or self.t_global < 0 or self.t_spatial + self.t_global == 0:
            raise ConfigError("need at least one concept")

    @property
    def total(self) -> int:
        return self.t_spatial + self.t_global

    @property
    def c_spatial(self) -> np.ndarray:
        return np.eye(self.t_spatial)

    @property
    def c_global(self) -> np.ndarray:
        return np.eye(self.t_global)


@dataclass
class ConceptAttention:
    """Head-averaged attention ``[B, T, T_s]`` / ``[B, T, T_g]`` plus per-head tensors."""

    spatial: Tensor | None
    global_: Tensor | None
    spatial_heads: Tensor | None = field(default=None, repr=False)
    global_heads: Tensor | None = field(default=None, repr=False)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, D] -> [..., h, T, D/h]."""
    *lead, T, D = x.shape
    y = x.reshape(tuple(lead) + (T, heads, D // heads))
    n = len(lead)
    return y.transpose(tuple(range(n)) + (n + 1, n, n + 2))


def concept_attention(z, C, P_q, P_k, heads: int = 1) -> Tensor:
    """Per-head softmax over concepts of ``(z P_q)(C P_k)^T / sqrt(d_head)``.

    ``z`` is [B, T, D]; returns [B, h, T, n_concepts].
    """
    z = as_tensor(z)
    q = _split_heads(matmul(z, P_q), heads)                           # [B,h,T,dh]
    k = _split_heads(matmul(as_tensor(C), P_k), heads)                # [h,n,dh]
    dh = q.shape[-1]
    scores = matmul(q, k.transpose((0, 2, 1))) * (1.0 / math.sqrt(dh))
    return softmax(scores, axis=-1)


def predict_single(A, C, P_k, P_v) -> Tensor:
    """Token-mean of ``A V`` with ``V = C P_k``, projected by ``P_v``.

    ``A`` is [B, h, T, n] (a 2-D [T, n] matrix is treated as one head, one
    sample); returns [B, classes].
    """
    A = as_tensor(A)
    if A.ndim == 2:
        A = A.reshape((1, 1) + A.shape)
    heads = A.shape[1]
    v = _split_heads(matmul(as_tensor(C), P_k), heads)                # [h,n,dh]
    av = matmul(A, v).mean(axis=2)                                     # [B,h,dh]
    B = av.shape[0]
    return matmul(av.reshape((B, -1)), P_v)


class ConceptAlignment(Module):
    def __init__(self, rng: Rng, dim: int, concepts: ConceptSet, num_classes: int, heads: int = 2):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} concept heads")
        self.concepts = concepts
        self.heads = heads
        self.num_classes = num_classes
        scale = 1.0 / math.sqrt(dim)
        self.P_q = param(rng.normal(0.0, scale, size=(dim, dim)))
        self.P_k_spatial = param(rng.normal(0.0, 1.0, size=(concepts.t_spatial, dim))) \
            if concepts.t_spatial else None
        self.P_k_global = param(rng.normal(0.0, 1.0, size=(concepts.t_global, dim))) \
            if concepts.t_global else None
        self.P_v1 = param(trunc_normal(rng, (dim, num_classes), 0.02)) if concepts.t_spatial else None
        self.P_v2 = param(trunc_normal(rng, (dim, num_classes), 0.02)) if concepts.t_global else None

    def attention(self, z: Tensor) -> ConceptAttention:
        cs = self.concepts
        sp = gl = None
        if cs.t_spatial:
            sp = concept_attention(z, cs.c_spatial, self.P_q, self.P_k_spatial, self.heads)
        if cs.t_global:
            gl = concept_attention(z, cs.c_global, self.P_q, self.P_k_global, self.heads)
        return ConceptAttention(
            spatial=sp.mean(axis=1) if sp is not None else None,
            global_=gl.mean(axis=1) if gl is not None else None,
            spatial_heads=sp, global_heads=gl)

    def logits_from(self, att: ConceptAttention) -> Tensor:
        cs = self.concepts
        out = None
        if cs.t_spatial:
            out = predict_single(att.spatial_heads, cs.c_spatial, self.P_k_spatial, self.P_v1)
        if cs.t_global:
            g = predict_single(att.global_heads, cs.c_global, self.P_k_global, self.P_v2)
            out = g if out is None else out + g
        return out

    def __call__(self, z: Tensor):
        att = self.attention(z)
        return self.logits_from(att), att

    def intervene(self, z: Tensor, true_globals) -> Tensor:
        """Logits after overwriting every global-attention row with the
        normalised ground-truth concept distribution (rows with no active
        concept are left as predicted)."""
        att = self.attention(z)
        return self.logits_from(intervened_attention(att, true_globals))


def intervened_attention(att: ConceptAttention, true_globals) -> ConceptAttention:
    if att.global_heads is None:
        return att
    g = np.atleast_2d(np.asarray(true_globals, dtype=np.float64))
    gh = att.global_heads.data
    B, h, T, n = gh.shape
    if g.shape != (B, n):
        raise ValueError(f"true_globals shape {g.shape} != ({B}, {n})")
    total = g.sum(axis=1)
    new = gh.copy()
    for b in range(B):
        if total[b] > 0:
            new[b] = g[b] / total[b]
    heads_t = Tensor(new)
    return ConceptAttention(att.spatial, heads_t.mean(axis=1), att.spatial_heads, heads_t)
