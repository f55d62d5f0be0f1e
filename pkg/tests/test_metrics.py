import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from srdnet.errors import MetricUndefinedError, ShapeError
from srdnet.metrics import (MetricReport, cc, cc_per_band, evaluate, gaussian_window, psnr, psnr_per_band, sam,
                            ssim, ssim_per_band)
from srdnet.tensor import make_rng


def brute_psnr(g, s, peak):
    vals = []
    for b in range(g.shape[0]):
        acc = 0.0
        for i in range(g.shape[1]):
            for j in range(g.shape[2]):
                acc += (g[b, i, j] - s[b, i, j]) ** 2
        vals.append(10 * math.log10(peak ** 2 / (acc / (g.shape[1] * g.shape[2]))))
    return sum(vals) / len(vals)


def brute_sam(g, s):
    angles = []
    for i in range(g.shape[1]):
        for j in range(g.shape[2]):
            a, b = g[:, i, j], s[:, i, j]
            dot = sum(x * y for x, y in zip(a, b))
            na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(y * y for y in b))
            angles.append(math.degrees(math.acos(max(-1.0, min(1.0, dot / (na * nb))))))
    return sum(angles) / len(angles)


def brute_cc(g, s):
    vals = []
    for b in range(g.shape[0]):
        x, y = g[b].ravel().tolist(), s[b].ravel().tolist()
        mx, my = sum(x) / len(x), sum(y) / len(y)
        num = sum((p - mx) * (q - my) for p, q in zip(x, y))
        den = math.sqrt(sum((p - mx) ** 2 for p in x) * sum((q - my) ** 2 for q in y))
        vals.append(num / den)
    return sum(vals) / len(vals)


def brute_ssim(g, s, peak=1.0):
    win = [math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(11)]
    tot = sum(win)
    win = [v / tot for v in win]
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    bands = []
    for b in range(g.shape[0]):
        vals = []
        for i in range(g.shape[1] - 10):
            for j in range(g.shape[2] - 10):
                mg = ms = gg = ss = gs = 0.0
                for a in range(11):
                    for c in range(11):
                        wt = win[a] * win[c]
                        x, y = g[b, i + a, j + c], s[b, i + a, j + c]
                        mg += wt * x
                        ms += wt * y
                        gg += wt * x * x
                        ss += wt * y * y
                        gs += wt * x * y
                vg, vs, cov = gg - mg * mg, ss - ms * ms, gs - mg * ms
                vals.append((2 * mg * ms + c1) * (2 * cov + c2) / ((mg * mg + ms * ms + c1) * (vg + vs + c2)))
        bands.append(sum(vals) / len(vals))
    return sum(bands) / len(bands)


# ssim of checker(4x24x24) against itself plus U(-1, 1) noise from seed 17
GOLDEN_NOISY_SSIM = 0.17602976746452467


@pytest.fixture
def pair():
    rng = make_rng(11)
    gt = rng.uniform(0.1, 1.0, (4, 8, 8))
    return gt, np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1)


def test_golden_cube_against_brute_force(pair):
    gt, sr = pair
    assert abs(psnr(gt, sr) - brute_psnr(gt, sr, 1.0)) < 1e-10
    assert abs(sam(gt, sr) - brute_sam(gt, sr)) < 1e-10
    assert abs(cc(gt, sr) - brute_cc(gt, sr)) < 1e-10
    with pytest.raises(ShapeError):  # 8x8 is smaller than the 11x11 window
        ssim(gt, sr)


def test_ssim_against_brute_force():
    rng = make_rng(16)
    gt = rng.uniform(0.1, 1.0, (4, 16, 16))
    sr = np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1)
    assert abs(ssim(gt, sr) - brute_ssim(gt, sr)) < 1e-10


def test_ssim_heavy_noise_golden_and_symmetry():
    from srdnet.data import synth_cube

    gt = synth_cube("checker", 4, 24, 24).voxels
    noisy = gt + make_rng(17).uniform(-1, 1, gt.shape)
    value = ssim(gt, noisy)
    assert value < 0.5
    assert value == pytest.approx(GOLDEN_NOISY_SSIM, abs=1e-12)
    assert value == pytest.approx(brute_ssim(gt, noisy), abs=1e-10)
    assert ssim(noisy, gt) == pytest.approx(value, abs=1e-15)


def test_psnr_closed_forms():
    zero = np.zeros((3, 4, 5))
    assert abs(psnr(zero, np.full_like(zero, 0.1)) - 20.0) <= 1e-9
    assert abs(psnr(zero, np.full_like(zero, 0.1), mode="global") - 20.0) <= 1e-9
    assert abs(psnr(zero, np.full_like(zero, 25.5), peak=255) - 20.0) <= 1e-9
    assert psnr(zero, zero) == math.inf


def test_psnr_band_vs_global_modes():
    gt = np.zeros((2, 2, 2))
    sr = np.stack([np.full((2, 2), 0.1), np.full((2, 2), 0.01)])
    assert psnr(gt, sr) == pytest.approx(30.0)  # mean of 20 dB and 40 dB
    assert psnr(gt, sr, mode="global") == pytest.approx(10 * math.log10(1 / ((0.01 + 0.0001) / 2)))
    assert psnr_per_band(gt, sr).tolist() == pytest.approx([20.0, 40.0])
    with pytest.raises(ValueError):
        psnr(gt, sr, mode="median")
    with pytest.raises(ValueError):
        psnr(gt, sr, peak=0)


def test_ssim_identity_and_skimage_agreement():
    rng = make_rng(12)
    gt = rng.uniform(0, 1, (3, 20, 17))
    sr = np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1)
    assert ssim(gt, gt) == 1.0
    ours = ssim_per_band(gt, sr)
    for b in range(3):
        ref = structural_similarity(gt[b], sr[b], data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
        assert abs(ours[b] - ref) < 1e-10


def test_ssim_window_and_size_guard():
    w = gaussian_window()
    assert w.size == 11 and w.sum() == pytest.approx(1.0) and w.argmax() == 5
    with pytest.raises(ShapeError):
        ssim(np.zeros((1, 8, 20)), np.zeros((1, 8, 20)))


def test_sam_orthogonal_and_scale_invariant():
    gt = np.zeros((2, 3, 3))
    gt[0] = 1
    sr = np.zeros((2, 3, 3))
    sr[1] = 2
    assert abs(sam(gt, sr) - 90.0) <= 1e-9
    assert sam(gt, 7 * gt) == 0.0


def test_sam_skips_zero_pixels():
    gt = np.ones((3, 2, 2))
    sr = np.ones((3, 2, 2))
    sr[:, 0, 0] = 0
    value, skipped = sam(gt, sr, return_skipped=True)
    assert value == 0.0 and skipped == 1
    with pytest.raises(MetricUndefinedError):
        sam(np.zeros((3, 2, 2)), sr)


def test_cc_affine_invariance_and_anticorrelation():
    rng = make_rng(13)
    x = rng.normal(size=(3, 6, 6))
    assert cc(x, 3.0 * x + 2.0) == pytest.approx(1.0, abs=1e-12)
    centred = x - x.mean(axis=(1, 2), keepdims=True)
    assert cc(x, -centred) == pytest.approx(-1.0, abs=1e-12)
    y = rng.normal(size=(3, 6, 6))
    assert cc(x, y) == pytest.approx(cc(2 * x - 1, 0.5 * y + 4), abs=1e-12)


def test_cc_skips_flat_bands():
    x = make_rng(14).normal(size=(2, 4, 4))
    y = x.copy()
    y[1] = 5.0
    assert np.isnan(cc_per_band(x, y)[1])
    assert cc(x, y, return_skipped=True) == (pytest.approx(1.0), 1)
    with pytest.raises(MetricUndefinedError):
        cc(np.ones((2, 3, 3)), np.ones((2, 3, 3)))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


def test_report_line_for_identical_cubes():
    x = make_rng(15).uniform(0.1, 1, (3, 12, 12))
    rep = evaluate(x, x)
    assert rep.line() == "psnr=identical ssim=1 cc=1 sam=0"
    detailed = evaluate(x, x * 0.9, per_band=True)
    assert set(detailed.per_band) == {"psnr", "ssim", "cc"} and len(detailed.per_band["psnr"]) == 3
    assert MetricReport(20.0, 0.5, 0.25, 1.5).line() == "psnr=20 ssim=0.5 cc=0.25 sam=1.5"
