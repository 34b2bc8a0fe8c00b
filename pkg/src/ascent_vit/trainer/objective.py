"""Composite training objective, learning-rate schedule and AdamW."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..layers import ConfigError
from ..numerics import Tensor, as_tensor, binary_cross_entropy, cross_entropy, frobenius_norm


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr_max: float = 1e-3
    warmup_epochs: int = 2
    weight_decay: float = 1e-3
    lam: float = 1.0
    lam_global: float = 1.0
    seed: int = 0
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ConfigError("epochs, batch_size and warmup_epochs must be non-negative "
                              "(batch_size positive)")
        if self.epochs and self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must be smaller than epochs")
        if self.lr_max <= 0 or self.weight_decay < 0 or self.lam < 0 or self.lam_global < 0:
            raise ConfigError("lr_max must be positive; decay and loss weights non-negative")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")

    @classmethod
    def reference(cls) -> "TrainConfig":
        return cls(epochs=50, batch_size=16, lr_max=5e-5, warmup_epochs=10,
                   weight_decay=1e-3, lam=1.0)


@dataclass
class LossParts:
    total: Tensor
    task: Tensor
    expl: Tensor
    global_: Tensor


def total_loss(logits, y, a_spatial, H, H_mask, global_bits, cfg: TrainConfig,
               a_global=None) -> LossParts:
    """Cross-entropy + lam * ||A_spatial - H||_F (masked rows) + lam_g * BCE(global).

    ``a_spatial`` is [B, N+1, T_s] (the CLS row is dropped) or already [B, N, T_s].
    The Frobenius norm is taken per sample over its supervised rows, then
    averaged over the batch. The global term compares the token-mean of
    ``a_global`` with the bits normalised to a distribution; samples with no
    active global concept carry no global target and are skipped.
    """
    task = cross_entropy(logits, y).mean()
    zero = Tensor(np.zeros(()))
    expl = zero
    if a_spatial is not None and cfg.lam > 0:
        a = as_tensor(a_spatial)
        Hm = np.asarray(H, dtype=np.float64)
        if a.shape[1] == Hm.shape[1] + 1:
            a = a[:, 1:]
        elif a.shape[1] != Hm.shape[1]:
            raise ValueError(f"attention rows {a.shape[1]} vs target rows {Hm.shape[1]}")
        keep = np.asarray(H_mask, dtype=np.float64)[..., None]
        diff = (a - Tensor(Hm)) * Tensor(keep)
        expl = frobenius_norm(diff, axes=(-2, -1)).mean() * cfg.lam
    glob = zero
    if a_global is not None and cfg.lam_global > 0:
        bits = np.asarray(global_bits, dtype=np.float64)
        total = bits.sum(axis=1)
        rows = np.nonzero(total > 0)[0]
        if rows.size:
            target = bits[rows] / total[rows, None]
            p = as_tensor(a_global).mean(axis=1)[rows]
            glob = binary_cross_entropy(p, target).sum(axis=1).mean() * cfg.lam_global
    return LossParts(task + expl + glob, task, expl, glob)


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``lr_max`` then cosine decay to zero at the last step."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return cfg.lr_max * (step + 1) / warm
    span = total - 1 - warm
    progress = 1.0 if span <= 0 else min(1.0, (step - warm) / span)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay (applied first) followed by bias-corrected Adam."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for k, p in self.params.items():
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            g = p._grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt/step": np.array(float(self.step_count))}
        for k in self.params:
            out[f"opt/m/{k}"] = self.m[k]
            out[f"opt/v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["opt/step"])
        for k in self.params:
            self.m[k][...] = arrays[f"opt/m/{k}"]
            self.v[k][...] = arrays[f"opt/v/{k}"]
