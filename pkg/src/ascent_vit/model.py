"""End-to-end model: backbone tokens, optional scale fusion, concept head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, BackboneConfig
from .cram import ConceptAlignment, ConceptAttention, ConceptSet, intervened_attention
from .dmsf import DeformableFusion, DmsfConfig, tokens_as_pyramid
from .layers import ConfigError, LayerNorm, Linear, Module
from .mse import MseConfig, MultiScaleEncoder
from .numerics import Rng, Tensor, as_tensor


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mse: MseConfig = field(default_factory=MseConfig)
    dmsf: DmsfConfig = field(default_factory=DmsfConfig)
    concepts: ConceptSet = field(default_factory=lambda: ConceptSet(4, 2))
    num_classes: int = 4
    cram_heads: int = 2
    mse_enabled: bool = True
    dmsf_enabled: bool = True
    cram_enabled: bool = True

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.mse_enabled and self.backbone.image_size < 2 ** self.mse.num_scales:
            raise ConfigError("image smaller than 2**num_scales")

    @property
    def variant(self) -> str:
        if not self.cram_enabled:
            return "backbone"
        if self.mse_enabled and self.dmsf_enabled:
            return "ascent"
        if self.mse_enabled:
            return "cram+mse"
        if self.dmsf_enabled:
            return "cram+dmsf"
        return "cram"


@dataclass
class ModelOutput:
    logits: Tensor
    z: Tensor | None
    attention: ConceptAttention | None
    backbone_attention: list = field(default_factory=list, repr=False)
    msda_weights: Tensor | None = field(default=None, repr=False)

    @property
    def a_spatial(self) -> Tensor | None:
        return self.attention.spatial if self.attention is not None else None

    @property
    def a_global(self) -> Tensor | None:
        return self.attention.global_ if self.attention is not None else None


class AscentViT(Module):
    """Backbone -> (MSE, DMSF) -> CRAM.

    Toggles give the ablation variants: with ``cram_enabled`` off a linear
    head reads the normalised CLS token; with both scale modules off the
    concept head reads the raw backbone tokens; the encoder without
    deformable attention fuses by plain sampling at the reference points;
    deformable attention without the encoder attends over the token grid.
    """

    def __init__(self, cfg: ModelConfig, rng: Rng | int = 0):
        super().__init__()
        if not isinstance(rng, Rng):
            rng = Rng(rng)
        self.cfg = cfg
        bcfg = cfg.backbone
        dim = bcfg.dim
        self.backbone = Backbone(bcfg, rng.spawn(1))
        self.encoder = None
        self.fusion = None
        self.cram = None
        self.head_norm = None
        self.head = None
        if cfg.cram_enabled:
            if cfg.mse_enabled:
                self.encoder = MultiScaleEncoder(cfg.mse, dim, bcfg.channels, rng.spawn(2))
            if cfg.mse_enabled or cfg.dmsf_enabled:
                levels = cfg.mse.num_scales if cfg.mse_enabled else 1
                self.fusion = DeformableFusion(rng.spawn(3), dim, bcfg.grid_side, cfg.dmsf,
                                               levels, deformable=cfg.dmsf_enabled)
            self.cram = ConceptAlignment(rng.spawn(4), dim, cfg.concepts, cfg.num_classes,
                                         heads=cfg.cram_heads)
        else:
            self.head_norm = LayerNorm(dim)
            self.head = Linear(rng.spawn(5), dim, cfg.num_classes, std=0.02)

    def tokens(self, images, training: bool = False):
        """Backbone tokens and the (possibly fused) tokens fed to the head."""
        x = as_tensor(images)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        z_q, maps = self.backbone(x, return_attention=True)
        weights = None
        z = z_q
        if self.fusion is not None:
            pyramid = None
            if self.cfg.dmsf.psi != 0:
                if self.encoder is not None:
                    pyramid = self.encoder(x, training=training)
                else:
                    pyramid = tokens_as_pyramid(z_q[:, 1:], self.cfg.backbone.grid_side)
            z, weights = self.fusion(z_q, pyramid, return_weights=True)
        return z_q, z, maps, weights

    def forward(self, images, training: bool = False) -> ModelOutput:
        _, z, maps, weights = self.tokens(images, training=training)
        if self.cram is None:
            logits = self.head(self.head_norm(z[:, 0]))
            return ModelOutput(logits, z, None, maps, weights)
        logits, att = self.cram(z)
        return ModelOutput(logits, z, att, maps, weights)

    __call__ = forward

    def intervene(self, images, true_globals, training: bool = False) -> Tensor:
        if self.cram is None:
            raise ConfigError("intervention needs the concept head")
        _, z, _, _ = self.tokens(images, training=training)
        return self.cram.intervene(z, true_globals)

    def intervene_output(self, out: ModelOutput, true_globals) -> Tensor:
        """Intervened logits reusing an already computed forward pass."""
        return self.cram.logits_from(intervened_attention(out.attention, true_globals))
