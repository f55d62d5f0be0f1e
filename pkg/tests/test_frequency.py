import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srdnet.errors import ConfigError, ShapeError
from srdnet.frequency import (FreqLossConfig, dft2, fftshift, freq_distance_band, hfl, spectral_parts,
                              spectrum_power, total_loss, weight_matrix, weights_from_distance)
from srdnet.tensor import Tensor, backward, make_rng


def naive_dft2(f):
    h, w = f.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for x in range(h):
                for y in range(w):
                    acc += f[x, y] * np.exp(-2j * np.pi * (u * x / h + v * y / w))
            out[u, v] = acc
    return out


@pytest.mark.parametrize("h", range(1, 9))
@pytest.mark.parametrize("w", range(1, 9))
def test_dft2_matches_double_sum(h, w):
    f = make_rng(10 * h + w).normal(size=(h, w))
    got = dft2(f).to_complex()
    assert np.abs(got - naive_dft2(f)).max() < 1e-9


def test_dft2_hand_cases():
    g = dft2(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(g.re, [[10, -2], [-4, 0]], atol=1e-12) and np.allclose(g.im, 0, atol=1e-12)
    const = dft2(np.full((3, 5), 2.0)).to_complex()
    assert abs(const[0, 0] - 30) < 1e-9
    const[0, 0] = 0
    assert np.abs(const).max() < 1e-9
    impulse = np.zeros((4, 6))
    impulse[0, 0] = 1
    assert np.allclose(dft2(impulse).to_complex(), 1, atol=1e-12)


def test_dft2_agrees_with_numpy_fft_on_larger_grids():
    for shape in [(16, 32), (12, 20), (64, 64)]:
        f = make_rng(0).normal(size=shape)
        assert np.allclose(dft2(f).to_complex(), np.fft.fft2(f), atol=1e-9)


def test_parseval_and_conjugate_symmetry():
    for shape in [(8, 8), (3, 5), (7, 4)]:
        f = make_rng(1).normal(size=shape)
        grid = dft2(f).to_complex()
        h, w = shape
        lhs, rhs = (f ** 2).sum(), np.abs(grid) ** 2
        assert abs(lhs - rhs.sum() / (h * w)) / lhs < 1e-9
        flipped = grid[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
        assert np.allclose(grid, np.conj(flipped), atol=1e-9)


def test_dft2_rejects_non_2d():
    with pytest.raises(ShapeError):
        dft2(np.zeros((2, 3, 4)))


def test_spectral_parts_match_dft2_per_band():
    x = make_rng(2).normal(size=(3, 5, 6))
    re, im = spectral_parts(Tensor(x))
    for b in range(3):
        g = dft2(x[b])
        assert np.allclose(re.data[b], g.re, atol=1e-10) and np.allclose(im.data[b], g.im, atol=1e-10)


def test_freq_distance_matches_vector_oracle():
    rng = make_rng(3)
    gt, sr = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    fg, fs = naive_dft2(gt), naive_dft2(sr)
    want = np.array([[np.linalg.norm([a.real - b.real, a.imag - b.imag]) ** 2 for a, b in zip(ra, rb)]
                     for ra, rb in zip(fg, fs)])
    dist, m = freq_distance_band(gt, sr)
    assert np.allclose(dist, want, atol=1e-9) and m == pytest.approx(want.mean(), abs=1e-9)
    assert freq_distance_band(np.ones((1, 1)), np.zeros((1, 1)))[0].tolist() == [[1.0]]
    with pytest.raises(ShapeError):
        freq_distance_band(np.zeros((2, 2)), np.zeros((2, 3)))


def test_weight_matrix_properties():
    rng = make_rng(4)
    gt, sr = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    w = weight_matrix(gt, sr, 1.0)
    dist, _ = freq_distance_band(gt, sr)
    assert w.max() == 1.0 and np.argmax(w) == np.argmax(dist)
    assert np.all(weight_matrix(gt, sr, 0.0) == 1.0)
    assert np.all(weight_matrix(gt, gt, 1.0) == 0.0)


def test_weights_normalized_per_band():
    dist = np.stack([np.full((2, 2), 4.0), np.zeros((2, 2)), np.array([[1.0, 0], [0, 16.0]])])
    w = weights_from_distance(dist, 1.0)
    assert w[0].tolist() == [[1, 1], [1, 1]]
    assert w[1].tolist() == [[0, 0], [0, 0]]
    assert w[2].tolist() == [[0.25, 0], [0, 1]]


def test_hfl_hand_cases_and_properties():
    assert hfl(np.ones((1, 1, 1)), np.zeros((1, 1, 1))).item() == 1.0
    rng = make_rng(5)
    a, b = rng.uniform(size=(3, 4, 5)), rng.uniform(size=(3, 4, 5))
    assert hfl(a, a).item() == 0.0
    assert hfl(a, b).item() > 0
    assert hfl(a, b).item() == pytest.approx(hfl(b, a).item(), rel=1e-12)
    with pytest.raises(ShapeError):
        hfl(a, b[:, :, :4])
    with pytest.raises(ShapeError):
        hfl(a, b, weights=np.ones((3, 4, 4)))


def test_hfl_dc_shift_touches_only_the_dc_term():
    rng = make_rng(6)
    gt, sr = rng.uniform(size=(4, 5)), rng.uniform(size=(4, 5))
    d0, _ = freq_distance_band(gt, sr)
    d1, _ = freq_distance_band(gt, sr + 0.7)
    mask = np.ones_like(d0, dtype=bool)
    mask[0, 0] = False
    assert np.allclose(d0[mask], d1[mask], atol=1e-10) and not np.isclose(d0[0, 0], d1[0, 0])


def test_hfl_gradient_treats_weights_as_constants():
    # d/dsr sum_k (1/HW) sum w |F(sr-gt)|^2 = (2/HW) * F^H(w * F(sr-gt)), real part
    rng = make_rng(7)
    gt, sr0 = rng.uniform(size=(2, 3, 4)), rng.uniform(size=(2, 3, 4))
    sr = Tensor(sr0, requires_grad=True)
    backward(hfl(gt, sr))
    d = sr0 - gt
    f = np.fft.fft2(d)
    w = weights_from_distance(np.abs(f) ** 2, 1.0)
    want = (2 / 12) * np.real(np.fft.ifft2(w * f) * 12)
    assert np.allclose(sr.grad, want, atol=1e-10)


def test_total_loss_mix():
    rng = make_rng(8)
    gt, sr = rng.uniform(size=(2, 4, 4)), rng.uniform(size=(2, 4, 4))
    total, l1, freq = total_loss(gt, sr, FreqLossConfig(beta=0.1))
    assert l1.item() == pytest.approx(np.abs(gt - sr).mean(), abs=1e-15)
    assert abs(total.item() - (l1.item() + 0.1 * freq.item())) <= 1e-12
    total0, l10, _ = total_loss(gt, sr, FreqLossConfig(beta=0.0))
    assert total0.item() == l10.item()
    assert [t.item() for t in total_loss(gt, gt)] == [0.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        FreqLossConfig(alpha=-1)


def test_spectrum_power():
    p = spectrum_power(np.ones((4, 4)))
    assert p.shape == (4, 4)
    assert p[2, 2] == pytest.approx(10 * np.log10(256), abs=1e-9)
    assert round(p[2, 2], 3) == 24.082
    rest = np.delete(p.ravel(), 2 * 4 + 2)
    assert np.all(rest < -100)
    f = make_rng(9).normal(size=(5, 6))
    assert np.allclose(spectrum_power(10 * f, eps=0.0) - spectrum_power(f, eps=0.0), 20.0)


def test_fftshift_matches_numpy():
    a = np.arange(35.0).reshape(5, 7)
    assert np.array_equal(fftshift(a), np.fft.fftshift(a))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-5, 5)),
       arrays(np.float64, (2, 3, 4), elements=st.floats(-5, 5)))
def test_hfl_nonnegative_and_symmetric(a, b):
    ab, ba = hfl(a, b).item(), hfl(b, a).item()
    assert ab >= 0 and ab == pytest.approx(ba, rel=1e-9, abs=1e-12)


def test_hfl_gradient_on_1x2x2_against_finite_differences():
    from srdnet.gradcheck import _frozen_hfl

    rng = make_rng(10)
    gt = Tensor(rng.uniform(size=(1, 2, 2)))
    sr = Tensor(rng.uniform(-1, 1, size=(1, 2, 2)), requires_grad=True)
    res = _frozen_hfl("hfl 1x2x2", gt, sr, probes=4, seed=0)
    assert res.probes == 4 and res.max_rel_err < 1e-4
