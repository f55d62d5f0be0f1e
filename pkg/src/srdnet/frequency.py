"""Per-band 2D DFT, the dynamically weighted frequency loss and power spectra."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, absolute, add, matmul, mean, mul, scalar_mul, square, sub
from .tensor import sum as tsum


@dataclass
class ComplexGrid:
    re: np.ndarray
    im: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def abs2(self) -> np.ndarray:
        return self.re * self.re + self.im * self.im


@dataclass
class FreqLossConfig:
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")


# ---------------------------------------------------------------------------
# transforms


@lru_cache(maxsize=64)
def dft_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """cos and sin of 2*pi*u*x/n, with u*x reduced mod n before scaling."""
    ux = np.outer(np.arange(n), np.arange(n)) % n
    theta = 2.0 * np.pi * ux / n
    c, s = np.cos(theta), np.sin(theta)
    c.setflags(write=False)
    s.setflags(write=False)
    return c, s


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _fft_axis0(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along axis 0 (length a power of 2)."""
    n = x.shape[0]
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2) if bits else 0
    a = x[rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size).reshape((half,) + (1,) * (x.ndim - 1))
        a = a.reshape((n // size, size) + x.shape[1:])
        even = a[:, :half].copy()
        odd = a[:, half:] * tw
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape((n,) + x.shape[1:])
        size *= 2
    return a


def _dft_axis0(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if _is_pow2(n):
        return _fft_axis0(x)
    c, s = dft_basis(n)
    m = c - 1j * s
    return np.tensordot(m, x, axes=([1], [0]))


def dft2(band) -> ComplexGrid:
    """F(u, v) = sum_x sum_y f(x, y) exp(-i 2 pi (u x / H + v y / W)).

    Radix-2 FFT along power-of-two axes, a direct matrix DFT otherwise.
    """
    f = np.asarray(band.data if isinstance(band, Tensor) else band, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"dft2 expects an H x W band, got {f.shape}")
    out = _dft_axis0(f)
    out = _dft_axis0(out.T).T
    return ComplexGrid(np.ascontiguousarray(out.real), np.ascontiguousarray(out.imag))


def fftshift(a: np.ndarray) -> np.ndarray:
    return np.roll(a, (a.shape[-2] // 2, a.shape[-1] // 2), axis=(-2, -1))


def spectral_parts(x: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable (Re F, Im F) of every band of a ``... x H x W`` tensor."""
    h, w = x.shape[-2:]
    ch, sh = (Tensor(m) for m in dft_basis(h))
    cw, sw = (Tensor(m) for m in dft_basis(w))
    # exp(-i(a+b)) = cos a cos b - sin a sin b - i (sin a cos b + cos a sin b)
    xc, xs = matmul(x, cw), matmul(x, sw)
    re = sub(matmul(ch, xc), matmul(sh, xs))
    im = scalar_mul(add(matmul(sh, xc), matmul(ch, xs)), -1.0)
    return re, im


# ---------------------------------------------------------------------------
# distances and weights


def _plain(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def freq_distance_band(gt, sr) -> tuple[np.ndarray, float]:
    """|F_gt - F_sr|^2 per frequency and its mean over the grid."""
    g, s = _plain(gt), _plain(sr)
    if g.shape != s.shape:
        raise ShapeError(f"band shapes differ: {g.shape} vs {s.shape}")
    fg, fs = dft2(g), dft2(s)
    dist = (fg.re - fs.re) ** 2 + (fg.im - fs.im) ** 2
    return dist, float(dist.mean())


def weights_from_distance(dist: np.ndarray, alpha: float) -> np.ndarray:
    """Per-band ``|dF|^alpha`` scaled so each band's maximum is 1.

    ``dist`` holds squared magnitudes over the last two axes.  A band with
    no difference at all gets all-zero weights.
    """
    dist = np.asarray(dist, dtype=np.float64)
    w = np.sqrt(dist) ** alpha
    peak = w.max(axis=(-2, -1), keepdims=True)
    degenerate = dist.max(axis=(-2, -1), keepdims=True) == 0
    return np.where(degenerate, 0.0, w / np.where(degenerate, 1.0, peak))


def weight_matrix(gt, sr, alpha: float = 1.0) -> np.ndarray:
    dist, _ = freq_distance_band(gt, sr)
    return weights_from_distance(dist, alpha)


def hfl(gt_cube, sr_cube, cfg: FreqLossConfig | None = None,
        weights: np.ndarray | None = None) -> Tensor:
    """Frequency loss summed over bands, differentiable w.r.t. ``sr_cube``.

    The weight matrix is recomputed from the current pair and treated as a
    constant.  Pass ``weights`` (B x H x W) to freeze it explicitly.
    """
    cfg = cfg or FreqLossConfig()
    sr = sr_cube if isinstance(sr_cube, Tensor) else Tensor(sr_cube)
    gt = gt_cube if isinstance(gt_cube, Tensor) else Tensor(gt_cube)
    if gt.shape != sr.shape or sr.ndim != 3:
        raise ShapeError(f"hfl needs equal B x H x W cubes, got {gt.shape} and {sr.shape}")
    h, w = sr.shape[1:]
    re, im = spectral_parts(sub(sr, gt.detach()))
    dist = add(square(re), square(im))
    if weights is None:
        weights = weights_from_distance(dist.data, cfg.alpha)
    elif np.shape(weights) != sr.shape:
        raise ShapeError(f"weights {np.shape(weights)} do not match {sr.shape}")
    return scalar_mul(tsum(mul(dist, Tensor(weights))), 1.0 / (h * w))


def total_loss(gt_cube, sr_cube, cfg: FreqLossConfig | None = None,
               weights: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(l1 + beta * hfl, l1, hfl) with l1 the mean absolute error over voxels."""
    cfg = cfg or FreqLossConfig()
    sr = sr_cube if isinstance(sr_cube, Tensor) else Tensor(sr_cube)
    gt = gt_cube if isinstance(gt_cube, Tensor) else Tensor(gt_cube)
    if gt.shape != sr.shape:
        raise ShapeError(f"cube shapes differ: {gt.shape} vs {sr.shape}")
    l1 = mean(absolute(sub(sr, gt.detach())))
    freq = hfl(gt, sr, cfg, weights)
    return add(l1, scalar_mul(freq, cfg.beta)), l1, freq


def spectrum_power(band, eps: float = 1e-12) -> np.ndarray:
    """Centre-shifted power spectrum in dB."""
    grid = dft2(band)
    return 10.0 * np.log10(fftshift(grid.abs2()) + eps)
