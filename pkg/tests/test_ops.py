import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from srdnet import ops
from srdnet.errors import ShapeError
from srdnet.tensor import Tensor, backward, make_rng
from srdnet.tensor import sum as tsum


def naive_conv2d(x, w, b):
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            acc += w[o, c, a, bb] * xp[c, i + a, j + bb]
                out[o, i, j] = acc
    return out


def naive_conv3d(x, w, b):
    c_out, c_in, kd, kh, kw = w.shape
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))
    _, d, h, wd = x.shape
    out = np.zeros((c_out, d, h, wd))
    for o in range(c_out):
        for z in range(d):
            for i in range(h):
                for j in range(wd):
                    out[o, z, i, j] = b[o] + np.sum(w[o] * xp[:, z:z + kd, i:i + kh, j:j + kw])
    return out


def naive_transposed(x, w, b, s, p):
    c_in, c_out, k, _ = w.shape
    _, h, wd = x.shape
    full = np.zeros((c_out, (h - 1) * s + k, (wd - 1) * s + k))
    for c in range(c_in):
        for i in range(h):
            for j in range(wd):
                full[:, i * s:i * s + k, j * s:j * s + k] += x[c, i, j] * w[c]
    return full[:, p:p + s * h, p:p + s * wd] + b[:, None, None]


@pytest.mark.parametrize("k,shape", [(3, (2, 5, 6)), (5, (3, 4, 7)), (1, (2, 3, 3))])
def test_conv2d_matches_loop_oracle(k, shape):
    rng = make_rng(k)
    layer = ops.Conv2dLayer.init(rng, shape[0], 3, k)
    layer.bias.data[:] = rng.normal(size=3)
    x = rng.normal(size=shape)
    assert np.abs(ops.conv2d(Tensor(x), layer).data - naive_conv2d(x, layer.weight.data, layer.bias.data)).max() < 1e-12


def test_conv2d_rejects_even_kernel_and_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.Conv2dLayer.init(make_rng(0), 2, 2, 4)
    layer = ops.Conv2dLayer.init(make_rng(0), 3, 2)
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((2, 4, 4))), layer)


def test_conv2d_single_pixel_identity_kernel():
    layer = ops.Conv2dLayer.init(make_rng(0), 1, 1)
    layer.weight.data[:] = 0
    layer.weight.data[0, 0, 1, 1] = 1
    x = Tensor(np.array([[[5.0]]]))
    assert ops.conv2d(x, layer).data.tolist() == [[[5.0]]]


def test_conv3d_and_sepconv_match_loop_oracle():
    rng = make_rng(7)
    x = rng.normal(size=(2, 4, 5, 5))
    layer = ops.Conv3dLayer.init(rng, 2, 3, (3, 3, 3))
    layer.bias.data[:] = rng.normal(size=3)
    got = ops.conv3d(Tensor(x), layer).data
    assert np.abs(got - naive_conv3d(x, layer.weight.data, layer.bias.data)).max() < 1e-12

    sep = ops.SepConv3dLayer.init(rng, 2, 3)
    mid = naive_conv3d(x, sep.spatial.weight.data, sep.spatial.bias.data)
    want = naive_conv3d(mid, sep.spectral.weight.data, sep.spectral.bias.data)
    assert np.abs(ops.sepconv3d(Tensor(x), sep).data - want).max() < 1e-12
    relu = lambda a: np.maximum(a, 0)
    want_act = relu(naive_conv3d(relu(mid), sep.spectral.weight.data, sep.spectral.bias.data))
    assert np.abs(ops.sepconv3d(Tensor(x), sep, ops.relu).data - want_act).max() < 1e-12


def test_sepconv_is_rank_one_3d_kernel_without_bias():
    # spectral(spatial(x)) equals a full 3x3x3 conv whose kernel is the outer product
    rng = make_rng(8)
    x = rng.normal(size=(1, 5, 4, 4))
    sep = ops.SepConv3dLayer.init(rng, 1, 1)
    full = np.einsum("d,hw->dhw", sep.spectral.weight.data[0, 0, :, 0, 0], sep.spatial.weight.data[0, 0, 0])
    want = naive_conv3d(x, full[None, None], np.zeros(1))
    assert np.abs(ops.sepconv3d(Tensor(x), sep).data - want).max() < 1e-12


@pytest.mark.parametrize("stride", [1, 2, 3, 4])
def test_transposed_conv_matches_scatter_oracle(stride):
    rng = make_rng(stride)
    layer = ops.TransposedConv2dLayer.init(rng, 2, 3, stride)
    layer.bias.data[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 4, 3))
    got = ops.transposed_conv2d(Tensor(x), layer).data
    assert got.shape == (3, 4 * stride, 3 * stride)
    want = naive_transposed(x, layer.weight.data, layer.bias.data, stride, 1)
    assert np.abs(got - want).max() < 1e-12


def test_pooling_values_ties_and_odd_sizes():
    x = Tensor(np.array([[[1.0, 3.0, 2.0], [3.0, 0.0, 1.0], [4.0, 4.0, 9.0]]]), requires_grad=True)
    mx = ops.pool2d("max", x)
    assert mx.data.tolist() == [[[3.0, 2.0], [4.0, 9.0]]]
    backward(tsum(mx))
    # first of the tied 3s wins; replicate padding routes the border gradient back
    assert x.grad.tolist() == [[[0, 1, 1], [0, 0, 0], [1, 0, 1]]]
    avg = ops.pool2d("avg", Tensor(np.arange(16.0).reshape(1, 4, 4)))
    assert avg.data.tolist() == [[[2.5, 4.5], [10.5, 12.5]]]
    with pytest.raises(ValueError):
        ops.pool2d("median", x)


def test_sigmoid_stable_at_extremes():
    y = ops.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert y.tolist() == [0.0, 0.5, 1.0]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-500, 500)))
def test_softmax_rows_sum_to_one(a):
    y = ops.softmax(Tensor(a), axis=1).data
    assert np.all(y >= 0) and np.allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_activation_dispatch():
    x = Tensor(np.array([-1.0, 2.0]))
    assert ops.activation("relu", x).data.tolist() == [0.0, 2.0]
    with pytest.raises(ValueError):
        ops.activation("tanh", x)


def test_cubic_kernel_hand_values():
    t = np.array([0.0, 0.25, 0.75, 1.0, 1.25, 2.0])
    # (a+2)|t|^3-(a+3)|t|^2+1 and a|t|^3-5a|t|^2+8a|t|-4a with a=-1/2
    want = [1.0, 0.8671875, 0.2265625, 0.0, -0.0703125, 0.0]
    assert np.allclose(ops._cubic(t), want, atol=1e-15)
    # the four taps at offsets 0.25 + {-1, 0, 1, 2} form a partition of unity
    assert ops._cubic(np.array([1.25, 0.25, 0.75, 1.75])).sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("kind", ["bicubic", "bilinear"])
@pytest.mark.parametrize("n_in,n_out", [(5, 10), (8, 3), (7, 7), (1, 4)])
def test_resample_matrix_rows_sum_to_one(kind, n_in, n_out):
    m = ops.resample_matrix(n_in, n_out, kind)
    assert m.shape == (n_out, n_in)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_resample_preserves_constants_and_factor_one_is_identity():
    x = Tensor(np.full((2, 5, 7), 0.3))
    assert np.allclose(ops.bicubic(x, 3).data, 0.3)
    assert np.allclose(ops.bicubic(x, 0.5).data, 0.3)
    y = Tensor(make_rng(0).normal(size=(2, 5, 7)))
    assert np.array_equal(ops.bicubic(y, 1).data, y.data)


def test_resample_shape_rules():
    x = Tensor(np.zeros((1, 5, 7)))
    assert ops.bicubic(x, 2).shape == (1, 10, 14)
    assert ops.bicubic(x, 0.5).shape == (1, 3, 4)  # round half up
    assert ops.resample("bilinear", x, size=(2, 9)).shape == (1, 2, 9)
    with pytest.raises(ShapeError):
        ops.resample("bicubic", x, size=(0, 3))
    with pytest.raises(ShapeError):
        ops.bicubic(x, 0.01)


@pytest.mark.parametrize("src,dst", [((12, 10), (24, 20)), ((12, 10), (36, 30)),
                                     ((48, 40), (24, 20)), ((48, 40), (12, 10))])
def test_bicubic_interior_matches_pillow(src, dst):
    # Pillow's BICUBIC is the same a=-1/2 kernel with antialiasing; edges differ
    # (it clamps instead of reflecting) so only the interior is compared
    a = make_rng(0).uniform(0, 1, src).astype(np.float32).astype(np.float64)
    pil = np.asarray(Image.fromarray(a.astype(np.float32), "F").resize(dst[::-1], Image.BICUBIC), dtype=np.float64)
    ours = ops.resize_array(a, dst)
    m = 4 if dst[0] > src[0] else 3
    assert np.abs(pil - ours)[m:-m, m:-m].max() < 1e-6


def test_resize_array_matches_tensor_path():
    a = make_rng(1).normal(size=(3, 6, 8))
    assert np.allclose(ops.resize_array(a, (12, 4)), ops.resample("bicubic", Tensor(a), size=(12, 4)).data)
