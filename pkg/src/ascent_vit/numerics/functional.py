"""Fused differentiable ops: normalisation, convolution, pooling, sampling, losses."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse
from scipy.special import erf

from .tensor import DimensionError, Tensor, _make, as_tensor

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    prob = np.exp(out)

    def bw(g):
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor | None, bias: Tensor | None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    x = as_tensor(x)
    d = x.shape[-1]
    for p in (gain, bias):
        if p is not None and p.shape != (d,):
            raise DimensionError(f"layer_norm affine shape {p.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    lead = tuple(range(x.ndim - 1))
    inputs = [x] + [p for p in (gain, bias) if p is not None]

    def bw(g):
        gx = g * gain.data if gain is not None else g
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _make(out, inputs, bw)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    out = x.data * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[1],))
    inputs = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, inputs, bw)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _with_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; ``weight`` is [C_out, C_in, kh, kw]."""
    x, squeeze = _with_batch(as_tensor(x))
    B, C, H, W = x.shape
    co, ci, kh, kw = weight.shape
    if ci != C:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # cols: [B, Ho, Wo, C*kh*kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(co, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, co).transpose(0, 3, 1, 2))
    inputs = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, co)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            # scatter the column gradient back in channels-last layout so each
            # strided add touches contiguous channel runs
            wr = weight.data.transpose(0, 2, 3, 1).reshape(co, kh * kw * C)
            dcols = (g2 @ wr).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros((B, Hp, Wp, C))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, padding:padding + H, padding:padding + W, :] if padding else dxp
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    res = _make(out, inputs, bw)
    return res.reshape(res.shape[1:]) if squeeze else res


def conv2d_nhwc(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last twin of :func:`conv2d`: ``x`` is [B,H,W,C], the result
    [B,Ho,Wo,C_out]; ``weight`` keeps the [C_out, C_in, kh, kw] layout.

    Staying channels-last through a conv stack avoids a layout transpose per
    layer, which dominates the cost of small convolutions in numpy.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"expected [B,H,W,C], got {x.shape}")
    B, H, W, C = x.shape
    co, ci, kh, kw = weight.shape
    if ci != C:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * C, co)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, co)
    inputs = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(B * Ho * Wo, co)
        gw = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(kh, kw, C, co).transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad and stride == 1 and co <= C and padding < min(kh, kw):
            # transposed convolution: correlate the padded gradient with the
            # flipped kernel; cheaper than col2im when the output is narrow
            q = (kh - 1 - padding, kw - 1 - padding)
            gp = np.pad(g, ((0, 0), (q[0], q[0]), (q[1], q[1]), (0, 0)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(1, 2))
            gcols = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3)).reshape(B * H * W, -1)
            wflip = weight.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * co, C)
            gx = (gcols @ wflip).reshape(B, H, W, C)
        elif x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros((B, Hp, Wp, C))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, padding:padding + H, padding:padding + W, :] if padding else dxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, inputs, bw)


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Windowed maximum; ties resolve to the first element in row-major order."""
    stride = window if stride is None else stride
    x, squeeze = _with_batch(as_tensor(x))
    B, C, H, W = x.shape
    if window > H or window > W:
        raise DimensionError(f"pool window {window} exceeds input {H}x{W}")
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(B, C, Ho, Wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    # absolute input coordinates of each argmax
    rows = (np.arange(Ho) * stride)[None, None, :, None] + arg // window
    cols = (np.arange(Wo) * stride)[None, None, None, :] + arg % window

    def bw(g):
        gx = np.zeros((B, C, H, W))
        bi = np.arange(B)[:, None, None, None]
        ci = np.arange(C)[None, :, None, None]
        if stride >= window:
            gx[bi, ci, rows, cols] = g
        else:
            np.add.at(gx, (bi, ci, rows, cols), g)
        return (gx,)

    res = _make(out, (x,), bw)
    return res.reshape(res.shape[1:]) if squeeze else res


def batch_norm2d(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
                 running: tuple[np.ndarray, np.ndarray] | None = None,
                 momentum: float = 0.1, training: bool = True) -> Tensor:
    """Batch normalisation over (B, H, W) per channel.

    In training mode batch statistics are used and, if ``running`` is given,
    the running mean/variance arrays are updated in place. In eval mode the
    running statistics are used as constants.
    """
    x = as_tensor(x)
    B, C, H, W = x.shape
    g4 = gain.data.reshape(1, C, 1, 1)
    b4 = bias.data.reshape(1, C, 1, 1)
    if not training:
        if running is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        rm, rv = running
        inv = 1.0 / np.sqrt(rv.reshape(1, C, 1, 1) + eps)
        xhat = (x.data - rm.reshape(1, C, 1, 1)) * inv
        out = xhat * g4 + b4

        def bw_eval(g):
            return g * g4 * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return _make(out, (x, gain, bias), bw_eval)

    n = B * H * W
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * g4 + b4
    if running is not None:
        rm, rv = running
        unbiased = var.reshape(C) * (n / max(n - 1, 1))
        rm *= 1.0 - momentum
        rm += momentum * mu.reshape(C)
        rv *= 1.0 - momentum
        rv += momentum * unbiased

    def bw(g):
        gx = g * g4
        dx = inv * (gx - gx.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gx * xhat).mean(axis=(0, 2, 3), keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, (x, gain, bias), bw)


def max_pool_nhwc(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pool of a [B,H,W,C] map (trailing rows/columns that
    do not fill a window are dropped). Ties go to the first window element in
    row-major order, as in :func:`max_pool2d`."""
    x = as_tensor(x)
    B, H, W, C = x.shape
    if window > H or window > W:
        raise DimensionError(f"pool window {window} exceeds input {H}x{W}")
    Ho, Wo = H // window, W // window
    blocks = x.data[:, :Ho * window, :Wo * window].reshape(B, Ho, window, Wo, window, C)
    views = [blocks[:, :, i, :, j] for i in range(window) for j in range(window)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def bw(g):
        gx = np.zeros((B, H, W, C))
        gblocks = gx[:, :Ho * window, :Wo * window].reshape(B, Ho, window, Wo, window, C)
        taken = np.zeros(out.shape, dtype=bool)
        for k, v in enumerate(views):
            hit = (v == out) & ~taken
            taken |= hit
            gblocks[:, :, k // window, :, k % window] = g * hit
        return (gx,)

    return _make(out, (x,), bw)


def batch_norm_nhwc(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
                    running: tuple[np.ndarray, np.ndarray] | None = None,
                    momentum: float = 0.1, training: bool = True,
                    relu: bool = False) -> Tensor:
    """Batch norm over every axis but the last, optionally fused with a ReLU.

    Same statistics and running-average rule as :func:`batch_norm2d`.
    """
    x = as_tensor(x)
    C = x.shape[-1]
    rows = x.data.reshape(-1, C)
    n = rows.shape[0]
    if training:
        mu = rows.mean(axis=0)
        xc = rows - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc
        xhat *= inv
        if running is not None:
            rm, rv = running
            rm *= 1.0 - momentum
            rm += momentum * mu
            rv *= 1.0 - momentum
            rv += momentum * var * (n / max(n - 1, 1))
    else:
        if running is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        rm, rv = running
        inv = 1.0 / np.sqrt(rv + eps)
        xhat = (rows - rm) * inv
    out = xhat * gain.data
    out += bias.data
    if relu:
        np.maximum(out, 0.0, out=out)
    out = out.reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, C)
        g2 = g2 * (out.reshape(-1, C) > 0) if relu else g2.copy()
        gg = np.einsum("ij,ij->j", g2, xhat)
        gb = g2.sum(axis=0)
        scale = gain.data * inv
        dx = g2
        dx *= scale
        if training:
            # d/dx of the normalised value with batch statistics
            dx -= xhat * (scale * gg / n)
            dx -= scale * gb / n
        return dx.reshape(x.shape), gg, gb

    return _make(out, (x, gain, bias), bw)


def batch_norm_relu_pool_nhwc(x: Tensor, gain: Tensor, bias: Tensor, window: int,
                              eps: float = 1e-5,
                              running: tuple[np.ndarray, np.ndarray] | None = None,
                              momentum: float = 0.1, training: bool = True) -> Tensor:
    """``max_pool_nhwc(batch_norm_nhwc(x, ..., relu=True), window)`` in fewer passes.

    The per-channel affine map ``a * x + c`` followed by ReLU is monotone, so
    pooling can run on the raw input: the max for ``a > 0``, the min for
    ``a < 0`` and simply the first window element for ``a == 0`` (where the
    whole window ties). The normalised full-resolution map is never built.
    The backward of the batch statistics collapses to ``x * k1 + k0`` plus a
    scatter into the selected positions. Values and tie routing match the
    unfused composition.
    """
    x = as_tensor(x)
    B, H, W, C = x.shape
    if window > H or window > W:
        raise DimensionError(f"pool window {window} exceeds input {H}x{W}")
    rows = x.data.reshape(-1, C)
    n = rows.shape[0]
    if training:
        mu = rows.mean(axis=0)
        xc = rows - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        del xc
        if running is not None:
            rm, rv = running
            rm *= 1.0 - momentum
            rm += momentum * mu
            rv *= 1.0 - momentum
            rv += momentum * var * (n / max(n - 1, 1))
    else:
        if running is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        mu, var = running[0].copy(), running[1].copy()
    inv = 1.0 / np.sqrt(var + eps)
    scale = gain.data * inv

    Ho, Wo = H // window, W // window
    blocks = x.data[:, :Ho * window, :Wo * window].reshape(B, Ho, window, Wo, window, C)
    views = [blocks[:, :, i, :, j] for i in range(window) for j in range(window)]
    sel = views[0].copy()
    for v in views[1:]:
        np.maximum(sel, v, out=sel)
    neg, flat = scale < 0, scale == 0
    if neg.any():
        low = views[0].copy()
        for v in views[1:]:
            np.minimum(low, v, out=low)
        sel = np.where(neg, low, sel)
    if flat.any():
        sel = np.where(flat, views[0], sel)
    xhat = (sel - mu) * inv
    pre = xhat * gain.data + bias.data
    mask = pre > 0
    out = pre * mask

    def bw(g):
        gp = g * mask
        gg = np.einsum("bhwc,bhwc->c", gp, xhat)
        gb = gp.sum(axis=(0, 1, 2))
        gx = np.empty((B, H, W, C))
        if training:
            k1 = -scale * inv * gg / n
            np.multiply(x.data, k1, out=gx)
            gx += -k1 * mu - scale * gb / n
        else:
            gx.fill(0.0)
        gblocks = gx[:, :Ho * window, :Wo * window].reshape(B, Ho, window, Wo, window, C)
        val = gp * scale
        taken = np.zeros(sel.shape, dtype=bool)
        for k, v in enumerate(views):
            hit = (v == sel) & ~taken
            taken |= hit
            gblocks[:, :, k // window, :, k % window] += val * hit
        return gx, gg, gb

    return _make(out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------


def gather_bilinear(values: Tensor, height: int, width: int, x, y) -> Tensor:
    """Bilinear reads from flattened channels-last maps.

    ``values`` is [G, height*width, C]; ``x`` (column) and ``y`` (row) are
    [G, P] pixel coordinates. Coordinates are clamped to the border, so the
    gradient with respect to a clamped coordinate is zero. Returns [G, P, C].
    """
    values, x, y = as_tensor(values), as_tensor(x), as_tensor(y)
    G, HW, C = values.shape
    if HW != height * width:
        raise DimensionError(f"values rows {HW} != {height}x{width}")
    xd = np.clip(x.data, 0.0, width - 1)
    yd = np.clip(y.data, 0.0, height - 1)
    x0 = np.floor(xd).astype(np.int64)
    y0 = np.floor(yd).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (xd - x0)[..., None]
    fy = (yd - y0)[..., None]
    gi = np.arange(G)[:, None]
    v = values.data
    v00 = v[gi, y0 * width + x0]
    v01 = v[gi, y0 * width + x1]
    v10 = v[gi, y1 * width + x0]
    v11 = v[gi, y1 * width + x1]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
    inside_x = (x.data >= 0.0) & (x.data <= width - 1)
    inside_y = (y.data >= 0.0) & (y.data <= height - 1)

    def bw(g):
        gv = gxs = gys = None
        if values.requires_grad:
            # one CSR row per sample point holding its four corner weights;
            # the value gradient is the transpose product, which needs no sort
            base = gi * HW
            cols = np.stack([base + y0 * width + x0, base + y0 * width + x1,
                             base + y1 * width + x0, base + y1 * width + x1], axis=-1)
            wts = np.concatenate([w00, w01, w10, w11], axis=-1)
            P = cols.size // 4
            interp = sparse.csr_matrix((wts.ravel(), cols.ravel(), np.arange(0, 4 * P + 1, 4)),
                                       shape=(P, G * HW))
            gv = np.asarray(interp.T @ np.ascontiguousarray(g).reshape(P, C)).reshape(G, HW, C)
        if x.requires_grad:
            dvdx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
            gxs = (g * dvdx).sum(axis=-1) * inside_x
        if y.requires_grad:
            dvdy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
            gys = (g * dvdy).sum(axis=-1) * inside_y
        return gv, gxs, gys

    return _make(out, (values, x, y), bw)


def bilinear_sample(fmap: Tensor, x, y) -> Tensor:
    """Sample a [C,H,W] (or [B,C,H,W]) map at column ``x``, row ``y``.

    Scalar coordinates give a [C] result; coordinate arrays of shape [P]
    (or [B,P]) give [P,C] (or [B,P,C]).
    """
    fmap = as_tensor(fmap)
    batched = fmap.ndim == 4
    m = fmap if batched else fmap.reshape((1,) + fmap.shape)
    B, C, H, W = m.shape
    x, y = as_tensor(x), as_tensor(y)
    scalar = x.ndim == 0
    xs = x.reshape((B, -1)) if batched else x.reshape((1, -1))
    ys = y.reshape((B, -1)) if batched else y.reshape((1, -1))
    vals = m.reshape((B, C, H * W)).transpose((0, 2, 1))
    out = gather_bilinear(vals, H, W, xs, ys)
    if batched:
        return out
    out = out.reshape(out.shape[1:])
    return out.reshape((C,)) if scalar else out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row cross-entropy for integer class targets; returns [B]."""
    targets = np.asarray(targets, dtype=np.int64)
    lsm = log_softmax(logits, axis=-1)
    rows = np.arange(targets.shape[0])
    return -lsm[rows, targets]


def frobenius_norm(x: Tensor, axes=(-2, -1)) -> Tensor:
    """sqrt of the sum of squares over ``axes``; zero gradient at the origin."""
    x = as_tensor(x)
    sq = (x.data * x.data).sum(axis=axes, keepdims=True)
    norm = np.sqrt(sq)

    def bw(g):
        safe = np.where(norm > 0, norm, 1.0)
        scale = np.where(norm > 0, 1.0 / safe, 0.0)
        return (np.expand_dims(g, axes) * x.data * scale,)

    return _make(norm.squeeze(axis=axes), (x,), bw)


def binary_cross_entropy(p: Tensor, target, eps: float = 1e-12) -> Tensor:
    """Elementwise BCE with probabilities clamped to [eps, 1-eps]."""
    p = as_tensor(p)
    t = np.asarray(target, dtype=np.float64)
    pc = np.clip(p.data, eps, 1.0 - eps)
    out = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def bw(g):
        return (g * (-t / pc + (1.0 - t) / (1.0 - pc)) * inside,)

    return _make(out, (p,), bw)
