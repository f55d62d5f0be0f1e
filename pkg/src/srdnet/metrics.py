"""Image quality measures for hyperspectral cubes (B x H x W arrays).

PSNR, SSIM and CC are computed per band and averaged over bands; SAM is
averaged over pixels and reported in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricUndefinedError, ShapeError

IDENTICAL = float("inf")


def _pair(gt, sr) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    s = np.asarray(getattr(sr, "data", sr), dtype=np.float64)
    if g.shape != s.shape:
        raise ShapeError(f"cube shapes differ: {g.shape} vs {s.shape}")
    if g.ndim == 2:
        g, s = g[None], s[None]
    if g.ndim != 3:
        raise ShapeError(f"expected B x H x W cubes, got {g.shape}")
    return g, s


def psnr_per_band(gt, sr, peak: float = 1.0) -> np.ndarray:
    g, s = _pair(gt, sr)
    mse = ((g - s) ** 2).mean(axis=(1, 2))
    with np.errstate(divide="ignore"):
        return np.where(mse == 0, np.inf, 10.0 * np.log10(peak * peak / np.where(mse == 0, 1, mse)))


def psnr(gt, sr, peak: float = 1.0, mode: str = "band") -> float:
    """Mean of per-band PSNR (``mode="band"``) or PSNR of the global MSE.

    Returns ``inf`` when the cubes are identical.  With ``mode="band"`` a
    single identical band also makes the mean infinite.
    """
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    g, s = _pair(gt, sr)
    if mode == "band":
        return float(psnr_per_band(g, s, peak).mean())
    if mode == "global":
        mse = float(((g - s) ** 2).mean())
        return IDENTICAL if mse == 0 else 10.0 * math.log10(peak * peak / mse)
    raise ValueError(f"unknown psnr mode {mode!r}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ win
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ win


def ssim_per_band(gt, sr, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g, s = _pair(gt, sr)
    if min(g.shape[1:]) < win_size:
        raise ShapeError(f"SSIM window {win_size} is larger than the image {g.shape[1:]}")
    win = gaussian_window(win_size, sigma)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_g, mu_s = _filter_valid(g, win), _filter_valid(s, win)
    var_g = _filter_valid(g * g, win) - mu_g * mu_g
    var_s = _filter_valid(s * s, win) - mu_s * mu_s
    cov = _filter_valid(g * s, win) - mu_g * mu_s
    num = (2 * mu_g * mu_s + c1) * (2 * cov + c2)
    den = (mu_g ** 2 + mu_s ** 2 + c1) * (var_g + var_s + c2)
    out = (num / den).mean(axis=(1, 2))
    # exact 1 for identical bands; the float path can miss it by an ulp
    same = np.all(g == s, axis=(1, 2))
    return np.where(same, 1.0, out)


def ssim(gt, sr, peak: float = 1.0) -> float:
    return float(ssim_per_band(gt, sr, peak).mean())


def sam(gt, sr, return_skipped: bool = False):
    """Mean spectral angle in degrees; pixels with a zero-norm spectrum are skipped."""
    g, s = _pair(gt, sr)
    gv = g.reshape(g.shape[0], -1)
    sv = s.reshape(s.shape[0], -1)
    ng, ns = np.linalg.norm(gv, axis=0), np.linalg.norm(sv, axis=0)
    ok = (ng > 0) & (ns > 0)
    if not ok.any():
        raise MetricUndefinedError("SAM undefined: every pixel has a zero spectrum")
    cos = (gv[:, ok] * sv[:, ok]).sum(axis=0) / (ng[ok] * ns[ok])
    angles = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    same = np.all(gv[:, ok] == sv[:, ok], axis=0)
    value = float(np.where(same, 0.0, angles).mean())
    skipped = int((~ok).sum())
    return (value, skipped) if return_skipped else value


def cc_per_band(gt, sr) -> np.ndarray:
    """Pearson correlation per band; NaN where either band has zero variance."""
    g, s = _pair(gt, sr)
    gc = g.reshape(g.shape[0], -1)
    sc = s.reshape(s.shape[0], -1)
    gc = gc - gc.mean(axis=1, keepdims=True)
    sc = sc - sc.mean(axis=1, keepdims=True)
    den = np.sqrt((gc * gc).sum(axis=1) * (sc * sc).sum(axis=1))
    num = (gc * sc).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)
    return np.clip(out, -1.0, 1.0)


def cc(gt, sr, return_skipped: bool = False):
    per = cc_per_band(gt, sr)
    ok = ~np.isnan(per)
    if not ok.any():
        raise MetricUndefinedError("CC undefined: every band has zero variance")
    value = float(per[ok].mean())
    return (value, int((~ok).sum())) if return_skipped else value


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    cc: float
    sam_degrees: float
    psnr_mode: str = "band"
    per_band: dict[str, list[float]] | None = field(default=None)

    def line(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in
                        (("psnr", self.psnr_db), ("ssim", self.ssim),
                         ("cc", self.cc), ("sam", self.sam_degrees)))


def _fmt(v: float) -> str:
    if v == IDENTICAL:
        return "identical"
    return f"{v:.10g}"


def evaluate(gt, sr, peak: float = 1.0, per_band: bool = False, psnr_mode: str = "band") -> MetricReport:
    g, s = _pair(gt, sr)
    report = MetricReport(psnr(g, s, peak, psnr_mode), ssim(g, s, peak), cc(g, s), sam(g, s), psnr_mode)
    if per_band:
        report.per_band = {
            "psnr": psnr_per_band(g, s, peak).tolist(),
            "ssim": ssim_per_band(g, s, peak).tolist(),
            "cc": cc_per_band(g, s).tolist(),
        }
    return report
