"""Central finite-difference checks of tape gradients.

Each check builds a scalar loss from fresh random inputs, takes the tape
gradient once, then perturbs ``probes`` randomly chosen input entries by
``+-h`` and compares.  The error of a probe is
``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the floor keeps
gradients that are zero up to finite-difference noise from dominating.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks, ops
from .frequency import FreqLossConfig, hfl, spectral_parts, total_loss, weights_from_distance
from .model import ModelConfig, forward, init_parameters, residual_block
from .tensor import (Tensor, absolute, add, backward, concat, make_rng, matmul, mean, mul,
                     no_grad, reshape, scalar_mul, slice_axis, square, sub, transpose)
from .tensor import sum as tsum

H = 1e-5
TOL = 1e-4
FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    probes: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOL

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name:<28} max_rel_err={self.max_rel_err:.2e} probes={self.probes}"


def check(name: str, loss_fn: Callable[[], Tensor], inputs: list[Tensor], probes: int = 20,
          seed: int = 0, h: float = H) -> CheckResult:
    t0 = time.perf_counter()
    for t in inputs:
        t.grad = None
    backward(loss_fn())
    rng = make_rng(seed)
    sizes = np.array([t.size for t in inputs])
    flat = rng.choice(int(sizes.sum()), size=min(probes, int(sizes.sum())), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    live = 0
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        t, j = inputs[i], int(f - offsets[i])
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[j])
        view = t.data.reshape(-1)
        orig = view[j]
        with no_grad():
            view[j] = orig + h
            up = loss_fn().item()
            view[j] = orig - h
            down = loss_fn().item()
        view[j] = orig
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric))
        live += scale >= FLOOR
        worst = max(worst, abs(analytic - numeric) / max(scale, FLOOR))
    if not live:  # every probe dead: the check proves nothing
        worst = float("inf")
    return CheckResult(name, worst, len(flat), time.perf_counter() - t0)


def _rand(rng, shape, grad=True, scale=1.0) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), grad)


def _probe(out: Tensor, rng) -> Tensor:
    """Generic scalar readout: <out, R> for a fixed random R."""
    return tsum(mul(out, Tensor(rng.uniform(-1, 1, size=out.shape))))


def _layer_tensors(obj) -> list[Tensor]:
    from .model import _walk

    return [t for _, t in _walk(obj, "")]


def _jitter_biases(tensors: list[Tensor], rng, scale: float = 0.1) -> None:
    # zero biases put dead-ReLU voxels exactly on the kink, where one-sided
    # and central differences legitimately disagree
    for t in tensors:
        if t.ndim == 1:
            t.data = rng.uniform(-scale, scale, t.shape)


def suite_ops(probes: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed)
    res = []

    def add_check(name, fn, inputs):
        res.append(check(name, fn, inputs, probes, seed))

    a, b = _rand(rng, (3, 4)), _rand(rng, (3, 4))
    col = _rand(rng, (3, 1))
    R = Tensor(rng.uniform(-1, 1, (3, 4)))
    add_check("add/sub broadcast", lambda: tsum(mul(sub(add(a, col), b), R)), [a, b, col])
    add_check("mul/scalar_mul", lambda: tsum(mul(scalar_mul(mul(a, b), 1.7), R)), [a, b])
    m1, m2 = _rand(rng, (4, 5)), _rand(rng, (5, 3))
    add_check("matmul", lambda: _probe(matmul(m1, m2), make_rng(1)), [m1, m2])
    bm = _rand(rng, (2, 4, 5))
    add_check("matmul batched", lambda: _probe(matmul(bm, m2), make_rng(1)), [bm, m2])
    c1, c2 = _rand(rng, (2, 3, 4)), _rand(rng, (1, 3, 4))
    add_check("reshape/concat/slice/transpose",
        lambda: _probe(transpose(reshape(slice_axis(concat([c1, c2], 0), 0, 1, 3), (3, 2, 4)), (2, 0, 1)),
                       make_rng(2)), [c1, c2])
    s = _rand(rng, (4, 5))
    weights = Tensor(np.arange(5.0))
    add_check("sum/mean/abs/square",
        lambda: add(mean(absolute(s)), tsum(mul(tsum(square(s), 0), weights))), [s])

    x = _rand(rng, (2, 5, 6))
    conv = ops.Conv2dLayer.init(rng, 2, 3, 3)
    add_check("conv2d", lambda: _probe(ops.conv2d(x, conv), make_rng(3)), [x, conv.weight, conv.bias])
    conv5 = ops.Conv2dLayer.init(rng, 2, 2, 5)
    add_check("conv2d k=5", lambda: _probe(ops.conv2d(x, conv5), make_rng(3)), [x, conv5.weight, conv5.bias])
    v = _rand(rng, (2, 4, 5, 5))
    sep = ops.SepConv3dLayer.init(rng, 2, 3)
    add_check("sepconv3d", lambda: _probe(ops.sepconv3d(v, sep), make_rng(4)),
        [v] + _layer_tensors(sep))
    for stride in (1, 2, 3):
        xt = _rand(rng, (2, 3, 3))
        tc = ops.TransposedConv2dLayer.init(rng, 2, 3, stride)
        tc.bias.data[:] = rng.uniform(-1, 1, 3)
        add_check(f"transposed_conv2d r={stride}", lambda xt=xt, tc=tc: _probe(ops.transposed_conv2d(xt, tc), make_rng(5)),
            [xt, tc.weight, tc.bias])
    z = _rand(rng, (2, 4, 4), scale=2.0)
    add_check("relu", lambda: _probe(ops.relu(z), make_rng(6)), [z])
    add_check("sigmoid", lambda: _probe(ops.sigmoid(z), make_rng(6)), [z])
    add_check("softmax", lambda: _probe(ops.softmax(z, axis=2), make_rng(6)), [z])
    p = _rand(rng, (2, 5, 7))
    add_check("maxpool2d", lambda: _probe(ops.pool2d("max", p), make_rng(7)), [p])
    add_check("avgpool2d", lambda: _probe(ops.pool2d("avg", p), make_rng(7)), [p])
    q = _rand(rng, (2, 6, 5))
    add_check("bicubic x2", lambda: _probe(ops.resample("bicubic", q, 2), make_rng(8)), [q])
    add_check("bicubic x0.5", lambda: _probe(ops.resample("bicubic", q, 0.5), make_rng(8)), [q])
    add_check("bilinear to 9x4", lambda: _probe(ops.resample("bilinear", q, size=(9, 4)), make_rng(8)), [q])
    return res


def suite_blocks(probes: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed + 100)
    res = []

    def add_check(name, fn, inputs):
        res.append(check(name, fn, inputs, probes, seed))

    c = 4
    x0 = _rand(rng, (c, 8, 8))
    igm = blocks.IgmParams.init(rng, c, width=2)
    _jitter_biases(_layer_tensors(igm), rng)
    add_check("igm", lambda: _probe(blocks.igm_forward(x0, igm), make_rng(1)), [x0] + _layer_tensors(igm))
    hsl = blocks.HslParams.init(rng, c)
    fb = _rand(rng, (c, 8, 8))
    add_check("hsl spectral attention",
        lambda: _probe(blocks.hsl_spectral_attention(x0, hsl)[1], make_rng(2)),
        [x0] + _layer_tensors(hsl)[:6])
    add_check("hsl spatial attention",
        lambda: _probe(blocks.hsl_spatial_attention(x0, hsl), make_rng(3)),
        [x0] + _layer_tensors(hsl)[6:])
    add_check("hsl", lambda: _probe(blocks.hsl_forward(x0, fb, hsl), make_rng(4)),
        [x0, fb] + _layer_tensors(hsl))
    u3d = blocks.Unit3dParams.init(rng, c, c_3d=2, n_units=3)
    _jitter_biases(_layer_tensors(u3d), rng)
    u3d.fuse.bias.data[:] = 0.5  # keep the single fused channel out of the dead zone
    y_igm = _rand(rng, (c, 4, 4))
    x_small = _rand(rng, (c, 4, 4))
    for r_l in (1, 2):
        add_check(f"branch3d r_l={r_l}",
            lambda r_l=r_l: _probe(blocks.branch3d_forward(x_small, y_igm, u3d, r_l), make_rng(5)),
            [x_small, y_igm] + _layer_tensors(u3d))
    pam = blocks.PamParams(igm, hsl, u3d, ops.Conv2dLayer.init(rng, c, c))
    add_check("pam", lambda: _probe(blocks.pam_forward(x0, pam, 2), make_rng(6)), [x0] + _layer_tensors(pam))
    return res


def suite_model(probes: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed + 200)
    res = []
    x = _rand(rng, (4, 6, 7))
    rb = init_parameters(ModelConfig(bands=1, c_feat=4, use_pam=False, use_2d=False, use_3d=False,
                                     use_igm=False, use_hsl=False), seed).res1
    res.append(check("residual block", lambda: _probe(residual_block(x, rb), make_rng(1)),
                     [x] + _layer_tensors(rb), probes, seed))
    cfg = toy_config()
    params = init_parameters(cfg, seed)
    _jitter_biases(params.tensors(), rng)
    lr = Tensor(rng.uniform(0, 1, (cfg.bands, 8, 8)))
    res.append(check("full model (8b 8x8 r=2)", lambda: _probe(forward(lr, cfg, params), make_rng(2)),
                     params.tensors(), probes, seed))
    return res


def toy_config(**kw) -> ModelConfig:
    base = dict(bands=8, scale=2, c_feat=4, c_3d=2, igm_width=2, n_units=3)
    base.update(kw)
    return ModelConfig(**base)


def suite_freq(probes: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed + 300)
    res = []
    img = _rand(rng, (2, 4, 6))
    res.append(check("dft (re, im)",
                     lambda: add(_probe(spectral_parts(img)[0], make_rng(1)),
                                 _probe(spectral_parts(img)[1], make_rng(2))), [img], probes, seed))
    gt = Tensor(rng.uniform(0, 1, (5, 2, 2)))
    sr = _rand(rng, (5, 2, 2))
    res.append(_frozen_hfl("hfl 5x2x2", gt, sr, probes, seed))
    gt3 = Tensor(rng.uniform(0, 1, (3, 5, 4)))
    sr3 = _rand(rng, (3, 5, 4))
    res.append(_frozen_hfl("hfl 3x5x4", gt3, sr3, probes, seed))
    w = _frozen_weights(gt3, sr3, FreqLossConfig())
    res.append(check("total loss", lambda: total_loss(gt3, sr3, FreqLossConfig(), w)[0], [sr3], probes, seed))
    return res


def _frozen_weights(gt: Tensor, sr: Tensor, cfg: FreqLossConfig) -> np.ndarray:
    with no_grad():
        re, im = spectral_parts(sub(sr, gt))
    return weights_from_distance(re.data ** 2 + im.data ** 2, cfg.alpha)


def _frozen_hfl(name, gt, sr, probes, seed) -> CheckResult:
    # the weight matrix carries no gradient, so it is frozen at the base point
    cfg = FreqLossConfig()
    w = _frozen_weights(gt, sr, cfg)
    return check(name, lambda: hfl(gt, sr, cfg, w), [sr], probes, seed)


SUITES = {"ops": suite_ops, "blocks": suite_blocks, "model": suite_model, "freq": suite_freq}


def run(module: str = "all", probes: int = 20, seed: int = 0) -> list[CheckResult]:
    names = list(SUITES) if module == "all" else [module]
    out = []
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown gradcheck module {n!r}; choose from all, {', '.join(SUITES)}")
        out.extend(SUITES[n](probes, seed))
    return out
