"""Parameter containers shared by the model components."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .numerics import (Rng, Tensor, batch_norm2d, batch_norm_nhwc, batch_norm_relu_pool_nhwc,
                       conv2d, conv2d_nhwc, layer_norm, linear, relu)


class ConfigError(ValueError):
    """A configuration violates its invariants."""


class Module:
    """Minimal parameter tree.

    Parameters are :class:`Tensor` attributes with ``requires_grad`` set;
    buffers are plain numpy arrays registered through :meth:`register_buffer`.
    Attribute insertion order fixes the parameter order, which the optimiser
    and checkpoint format depend on.
    """

    def __init__(self):
        object.__setattr__(self, "_buffers", {})

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
        for key, child in self.children():
            out.update(child.named_parameters(prefix + key + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for key, child in self.children():
            out.update(child.named_buffers(prefix + key + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> None:
        """Exclude every parameter of this subtree from differentiation."""
        for p in self.named_parameters().values():
            p.requires_grad = False
            p.grad = None

    # state as plain arrays -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        params = {k: v.data for k, v in self._all_tensors().items()}
        bufs = self.named_buffers()
        out = {f"param/{k}": v for k, v in params.items()}
        out.update({f"buffer/{k}": v for k, v in bufs.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        tensors = self._all_tensors()
        bufs = self.named_buffers()
        for k, t in tensors.items():
            src = arrays[f"param/{k}"]
            if src.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {src.shape} vs {t.shape}")
            t.data[...] = src
        for k, b in bufs.items():
            b[...] = arrays[f"buffer/{k}"]

    def _all_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        # frozen parameters are still part of the state
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out[prefix + key] = val
        for key, child in self.children():
            out.update(child._all_tensors(prefix + key + "."))
        return out


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def trunc_normal(rng: Rng, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


class Linear(Module):
    """Affine map with weight stored as (in, out)."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True,
                 std: float | None = None, zero: bool = False):
        super().__init__()
        if zero:
            w = np.zeros((d_in, d_out))
        elif std is None:
            lim = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-lim, lim, size=(d_in, d_out))
        else:
            w = trunc_normal(rng, (d_in, d_out), std)
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class ConvBNReLU(Module):
    """3x3 convolution (no bias, batch norm recentres), batch norm, ReLU."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, stride: int = 1, momentum: float = 0.1):
        super().__init__()
        fan_in = c_in * 9
        self.weight = param(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, 3, 3)))
        self.bn_gain = param(np.ones(c_out))
        self.bn_bias = param(np.zeros(c_out))
        self.stride = stride
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(c_out))
        self.register_buffer("running_var", np.ones(c_out))

    def __call__(self, x, training: bool, channels_last: bool = False, pool: int = 1):
        """``pool > 1`` appends a non-overlapping max pool (channels-last only)."""
        running = (self._buffers["running_mean"], self._buffers["running_var"])
        if channels_last:
            y = conv2d_nhwc(x, self.weight, None, stride=self.stride, padding=1)
            if pool > 1:
                return batch_norm_relu_pool_nhwc(y, self.bn_gain, self.bn_bias, pool,
                                                 running=running, momentum=self.momentum,
                                                 training=training)
            return batch_norm_nhwc(y, self.bn_gain, self.bn_bias, running=running,
                                   momentum=self.momentum, training=training, relu=True)
        if pool > 1:
            raise ValueError("pooling is only fused on the channels-last path")
        y = conv2d(x, self.weight, None, stride=self.stride, padding=1)
        y = batch_norm2d(y, self.bn_gain, self.bn_bias, running=running,
                         momentum=self.momentum, training=training)
        return relu(y)
