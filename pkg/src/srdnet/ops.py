"""Network primitives with hand-written backward rules.

Layouts are batch-free: 2D feature maps are ``C x H x W`` and 3D feature
volumes are ``C x B x H x W`` (channel, band, height, width).  All
convolutions are stride-1 cross-correlations with zero "same" padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, _make, kaiming, matmul, zeros

# ---------------------------------------------------------------------------
# layers


@dataclass
class Conv2dLayer:
    weight: Tensor  # C_out x C_in x k x k
    bias: Tensor  # C_out

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, k: int = 3) -> "Conv2dLayer":
        if k % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {k}")
        return cls(kaiming(rng, (c_out, c_in, k, k), c_in * k * k), zeros((c_out,), True))


@dataclass
class Conv3dLayer:
    weight: Tensor  # C_out x C_in x kd x kh x kw
    bias: Tensor

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, kernel=(1, 1, 1)) -> "Conv3dLayer":
        fan_in = c_in * int(np.prod(kernel))
        return cls(kaiming(rng, (c_out, c_in, *kernel), fan_in), zeros((c_out,), True))


@dataclass
class SepConv3dLayer:
    """A 3x3x3 kernel factored into a 1x3x3 spatial and a 3x1x1 spectral pass."""

    spatial: Conv3dLayer
    spectral: Conv3dLayer

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, k: int = 3) -> "SepConv3dLayer":
        return cls(Conv3dLayer.init(rng, c_in, c_out, (1, k, k)),
                   Conv3dLayer.init(rng, c_out, c_out, (k, 1, 1)))


@dataclass
class TransposedConv2dLayer:
    weight: Tensor  # C_in x C_out x k x k
    bias: Tensor
    stride: int
    padding: int = 1

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, stride: int) -> "TransposedConv2dLayer":
        # k = s + 2 with padding 1 gives an output of exactly s * input
        k = stride + 2
        fan_in = c_in * k * k // (stride * stride)
        return cls(kaiming(rng, (c_in, c_out, k, k), max(fan_in, 1)), zeros((c_out,), True), stride)


# ---------------------------------------------------------------------------
# convolution


def _correlate_same(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded same-size correlation; returns (output, windows)."""
    k = w.shape[2:]
    nd = len(k)
    pads = [(0, 0)] + [((kk - 1) // 2, (kk - 1) // 2) for kk in k]
    xp = np.pad(x, pads)
    win = sliding_window_view(xp, k, axis=tuple(range(1, nd + 1)))
    # win: C_in x *S x *k
    out = np.tensordot(w, win, axes=([1] + list(range(2, 2 + nd)),
                                      [0] + list(range(1 + nd, 1 + 2 * nd))))
    return out, win


def conv_nd(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Same-size correlation over the trailing ``weight.ndim - 2`` axes of ``x``."""
    nd = weight.ndim - 2
    if x.ndim != nd + 1:
        raise ShapeError(f"expected a rank-{nd + 1} input, got shape {x.shape}")
    if x.shape[0] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {weight.shape[1]}")
    if any(kk % 2 == 0 for kk in weight.shape[2:]):
        raise ShapeError(f"kernel sizes must be odd, got {weight.shape[2:]}")
    out, win = _correlate_same(x.data, weight.data)
    if bias is not None:
        out = out + bias.data.reshape((-1,) + (1,) * nd)
    wd = weight.data
    spatial = tuple(range(1, nd + 1))

    def grad_fn(g):
        gw = np.tensordot(g, win, axes=(spatial, spatial)) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            flipped = np.flip(wd, axis=tuple(range(2, 2 + nd))).swapaxes(0, 1)
            gx, _ = _correlate_same(g, np.ascontiguousarray(flipped))
        gb = g.sum(axis=spatial) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, grad_fn, f"conv{nd}d")


def conv2d(x: Tensor, layer: Conv2dLayer) -> Tensor:
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects C x H x W, got {x.shape}")
    return conv_nd(x, layer.weight, layer.bias)


def conv3d(x: Tensor, layer: Conv3dLayer) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"conv3d expects C x B x H x W, got {x.shape}")
    return conv_nd(x, layer.weight, layer.bias)


def sepconv3d(x: Tensor, layer: SepConv3dLayer, activation=None) -> Tensor:
    """Spatial 1x3x3 pass then spectral 3x1x1 pass.

    ``activation`` (if given) is applied after each pass, which is how the
    3D unit uses this layer.
    """
    if x.ndim != 4:
        raise ShapeError(f"sepconv3d expects C x B x H x W, got {x.shape}")
    y = conv3d(x, layer.spatial)
    if activation is not None:
        y = activation(y)
    y = conv3d(y, layer.spectral)
    if activation is not None:
        y = activation(y)
    return y


def transposed_conv2d(x: Tensor, layer: TransposedConv2dLayer) -> Tensor:
    if x.ndim != 3:
        raise ShapeError(f"transposed_conv2d expects C x H x W, got {x.shape}")
    w = layer.weight
    c_in, c_out, k, _ = w.shape
    s, p = layer.stride, layer.padding
    if s < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    if x.shape[0] != c_in:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {c_in}")
    if k - 2 * p != s:
        raise ShapeError(f"kernel {k} / padding {p} do not give an exact x{s} output")
    _, h, wd = x.shape
    full_h, full_w = (h - 1) * s + k, (wd - 1) * s + k
    xd, wdat = x.data, w.data
    cols = np.tensordot(wdat, xd, axes=([0], [0]))  # C_out x k x k x H x W
    full = np.zeros((c_out, full_h, full_w))
    for a in range(k):
        for b in range(k):
            full[:, a:a + (h - 1) * s + 1:s, b:b + (wd - 1) * s + 1:s] += cols[:, a, b]
    out = full[:, p:p + s * h, p:p + s * wd] + layer.bias.data[:, None, None]

    def grad_fn(g):
        gfull = np.zeros((c_out, full_h, full_w))
        gfull[:, p:p + s * h, p:p + s * wd] = g
        gcols = np.empty((c_out, k, k, h, wd))
        for a in range(k):
            for b in range(k):
                gcols[:, a, b] = gfull[:, a:a + (h - 1) * s + 1:s, b:b + (wd - 1) * s + 1:s]
        gx = np.tensordot(wdat, gcols, axes=([1, 2, 3], [0, 1, 2])) if x.requires_grad else None
        gw = np.tensordot(xd, gcols, axes=([1, 2], [3, 4])) if w.requires_grad else None
        return gx, gw, g.sum(axis=(1, 2))

    return _make(np.ascontiguousarray(out), (x, w, layer.bias), grad_fn, "transposed_conv2d")


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def activation(kind: str, x: Tensor, axis: int = -1) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# pooling


def pool2d(kind: str, x: Tensor) -> Tensor:
    """2x2 stride-2 pooling; odd H or W is replicate-padded first."""
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pooling {kind!r}")
    if x.ndim != 3:
        raise ShapeError(f"pool2d expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw)), mode="edge") if ph or pw else x.data
    h2, w2 = (h + ph) // 2, (w + pw) // 2
    blocks = xp.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    if kind == "max":
        idx = blocks.argmax(axis=-1)  # first maximum wins ties
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    else:
        idx = None
        out = blocks.mean(axis=-1)

    def grad_fn(g):
        if kind == "max":
            gb = np.zeros((c, h2, w2, 4))
            np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        else:
            gb = np.repeat(g[..., None] * 0.25, 4, axis=-1)
        gxp = gb.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)
        if pw:
            gxp[:, :, w - 1] += gxp[:, :, w]
        if ph:
            gxp[:, h - 1, :] += gxp[:, h, :]
        return (np.ascontiguousarray(gxp[:, :h, :w]),)

    return _make(out, (x,), grad_fn, f"{kind}pool2d")


# ---------------------------------------------------------------------------
# resampling


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
                    np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0))


def _linear(t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(t))


_KERNELS = {"bicubic": (_cubic, 2.0), "bilinear": (_linear, 1.0)}


def _reflect(j: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: -1 -> 0, n -> n - 1
    period = 2 * n
    j = np.mod(j, period)
    return np.where(j < n, j, period - 1 - j)


@lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """Row-stochastic ``n_out x n_in`` interpolation matrix for one axis.

    Pixel centres are aligned (half-pixel convention).  When shrinking, the
    kernel is widened by ``1/scale`` to antialias.
    """
    kernel, radius = _KERNELS[kind]
    scale = n_out / n_in
    stretch = 1.0 / scale if scale < 1 else 1.0
    support = radius * stretch
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) / scale - 0.5
        taps = np.arange(math.floor(centre - support), math.ceil(centre + support) + 1)
        wts = kernel((centre - taps) / stretch)
        np.add.at(m[i], _reflect(taps, n_in), wts)
    m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


def _out_dim(n: int, factor: float) -> int:
    d = int(math.floor(n * factor + 0.5))
    if d < 1:
        raise ShapeError(f"resampling {n} by {factor} gives an empty axis")
    return d


def resample(kind: str, x: Tensor, factor: float | None = None,
             size: tuple[int, int] | None = None) -> Tensor:
    """Separable kernel interpolation of the last two axes.

    Either ``factor`` (output = round(factor * input)) or an explicit ``size``.
    """
    if kind not in _KERNELS:
        raise ValueError(f"unknown resampling kernel {kind!r}")
    if x.ndim < 2:
        raise ShapeError(f"resample needs at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    if size is None:
        if factor is None or factor <= 0:
            raise ShapeError("resample needs a positive factor or an explicit size")
        size = (_out_dim(h, factor), _out_dim(w, factor))
    oh, ow = size
    if oh < 1 or ow < 1:
        raise ShapeError(f"resample target {size} is empty")
    if (oh, ow) == (h, w):
        return _make(x.data.copy(), (x,), lambda g: (g,), "identity")
    y = x
    if oh != h:
        y = matmul(Tensor(resample_matrix(h, oh, kind)), y)
    if ow != w:
        y = matmul(y, Tensor(resample_matrix(w, ow, kind).T))
    return y


def bicubic(x: Tensor, factor: float) -> Tensor:
    return resample("bicubic", x, factor)


def resize_array(arr: np.ndarray, size: tuple[int, int], kind: str = "bicubic") -> np.ndarray:
    """Plain-array counterpart of :func:`resample` for data preparation."""
    h, w = arr.shape[-2:]
    out = arr
    if size[0] != h:
        out = resample_matrix(h, size[0], kind) @ out
    if size[1] != w:
        out = out @ resample_matrix(w, size[1], kind).T
    return np.array(out, dtype=np.float64)
