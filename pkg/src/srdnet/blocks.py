"""Building blocks of the parallel 2D/3D module (PAM).

The 2D branch is IGM followed by HSL attention; the 3D branch is a stack of
separable 3D units.  IGM runs first: its output feeds the 3D branch entry,
and the 3D stack's squeezed (pre-upsampling) output is projected and fed back
into the HSL spectral attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ops
from .errors import ConfigError, ShapeError
from .ops import Conv2dLayer, Conv3dLayer, SepConv3dLayer
from .tensor import Tensor, concat, matmul, mul, reshape, transpose


@dataclass
class IgmParams:
    entry: Conv2dLayer  # C_feat -> C_feat, produces the residual term
    sgb_a: list[Conv2dLayer]  # C_feat -> w -> w -> w
    sgb_b: list[Conv2dLayer]
    cb: list[Conv2dLayer]  # C_feat -> 2w -> 2w -> 2w
    fuse: Conv2dLayer  # 2w -> C_feat

    @classmethod
    def init(cls, rng, c_feat: int, width: int = 32) -> "IgmParams":
        def subnet(c_out):
            return [Conv2dLayer.init(rng, c_feat, c_out),
                    Conv2dLayer.init(rng, c_out, c_out),
                    Conv2dLayer.init(rng, c_out, c_out)]

        entry = Conv2dLayer.init(rng, c_feat, c_feat)
        return cls(entry, subnet(width), subnet(width), subnet(2 * width),
                   Conv2dLayer.init(rng, 2 * width, c_feat))


@dataclass
class HslParams:
    q: Conv2dLayer  # C -> 1, 1x1
    k: Conv2dLayer  # C -> C/2, 1x1
    v: Conv2dLayer  # C/2 -> C, 1x1
    fusion: Conv2dLayer  # C -> C, 3x3
    down1: Conv2dLayer  # 2C -> C over [maxpool, avgpool]
    down2: Conv2dLayer

    @classmethod
    def init(cls, rng, c: int) -> "HslParams":
        if c % 2:
            raise ConfigError(f"HSL needs an even channel count, got {c}")
        return cls(Conv2dLayer.init(rng, c, 1, 1), Conv2dLayer.init(rng, c, c // 2, 1),
                   Conv2dLayer.init(rng, c // 2, c, 1), Conv2dLayer.init(rng, c, c),
                   Conv2dLayer.init(rng, 2 * c, c), Conv2dLayer.init(rng, 2 * c, c))


@dataclass
class Unit3dParams:
    entry: Conv3dLayer  # 1 -> C_3d pointwise
    units: list[SepConv3dLayer]
    fuse: Conv3dLayer  # N * C_3d -> 1 pointwise
    feedback: Conv2dLayer | None = field(default=None)  # C_feat -> C_feat 1x1 into HSL

    @classmethod
    def init(cls, rng, c_feat: int, c_3d: int = 16, n_units: int = 3,
             feedback: bool = True) -> "Unit3dParams":
        if n_units < 1:
            raise ConfigError(f"need at least one 3D unit, got {n_units}")
        entry = Conv3dLayer.init(rng, 1, c_3d)
        units = [SepConv3dLayer.init(rng, c_3d, c_3d) for _ in range(n_units)]
        fuse = Conv3dLayer.init(rng, n_units * c_3d, 1)
        fb = Conv2dLayer.init(rng, c_feat, c_feat, 1) if feedback else None
        return cls(entry, units, fuse, fb)


def _conv_relu(x: Tensor, layers: list[Conv2dLayer]) -> Tensor:
    for layer in layers:
        x = ops.relu(ops.conv2d(x, layer))
    return x


def igm_forward(x0: Tensor, p: IgmParams) -> Tensor:
    if x0.ndim != 3 or x0.shape[0] != p.entry.weight.shape[1]:
        raise ShapeError(f"IGM expects {p.entry.weight.shape[1]} x H x W, got {x0.shape}")
    x_entry = ops.relu(ops.conv2d(x0, p.entry))
    sgb = concat([_conv_relu(x_entry, p.sgb_a), _conv_relu(x_entry, p.sgb_b)], axis=0)
    cb = _conv_relu(x_entry, p.cb)
    return ops.conv2d(cb + sgb, p.fuse) + x_entry


def hsl_spectral_attention(x: Tensor, p: HslParams,
                           target: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Channel attention from a spatially-softmaxed query.

    Weights are computed from ``x`` and applied to ``target`` (``x`` by
    default).  Returns ``(weights C x 1 x 1, target * weights)``.
    """
    c, h, w = x.shape
    if c % 2:
        raise ConfigError(f"spectral attention needs an even channel count, got {c}")
    q = ops.softmax(reshape(ops.conv2d(x, p.q), (1, h * w)), axis=1)  # 1 x HW
    k = reshape(ops.conv2d(x, p.k), (c // 2, h * w))  # C/2 x HW
    v = matmul(k, transpose(q, (1, 0)))  # C/2 x 1
    weights = ops.sigmoid(ops.conv2d(reshape(v, (c // 2, 1, 1)), p.v))
    target = x if target is None else target
    return weights, mul(target, weights)


def _pool_pair(x: Tensor, conv: Conv2dLayer) -> Tensor:
    return ops.conv2d(concat([ops.pool2d("max", x), ops.pool2d("avg", x)], axis=0), conv)


def hsl_spatial_attention(y_spectral: Tensor, p: HslParams, return_map: bool = False):
    """Two-level pooling pyramid producing a per-pixel sigmoid mask."""
    _, h, w = y_spectral.shape
    if h < 4 or w < 4:
        raise ConfigError(f"spatial attention pools twice and needs H, W >= 4, got {h}x{w}")
    y_fusion = ops.conv2d(y_spectral, p.fusion)
    down1 = _pool_pair(y_fusion, p.down1)
    down2 = _pool_pair(down1, p.down2)
    pyramid = ops.resample("bilinear", down2, size=down1.shape[1:]) + down1
    mask = ops.sigmoid(ops.resample("bilinear", pyramid, size=(h, w)) + y_fusion)
    out = mul(y_fusion, mask)
    return (out, mask) if return_map else out


def hsl_forward(y_igm: Tensor, y_3d_feedback: Tensor | None, p: HslParams,
                residual: bool = True) -> Tensor:
    if y_3d_feedback is not None and y_3d_feedback.shape != y_igm.shape:
        raise ShapeError(f"feedback {y_3d_feedback.shape} does not match {y_igm.shape}")
    attn_in = y_igm if y_3d_feedback is None else y_igm + y_3d_feedback
    _, y_spectral = hsl_spectral_attention(attn_in, p, target=y_igm)
    y_spatial = hsl_spatial_attention(y_spectral, p)
    out = y_spectral + y_spatial
    return out + y_igm if residual else out


def lift_to_3d(x: Tensor) -> Tensor:
    """C_feat x H x W -> 1 x C_feat x H x W (feature axis becomes the band axis)."""
    return reshape(x, (1, *x.shape))


def unit3d_stack(x: Tensor, p: Unit3dParams) -> Tensor:
    """Entry conv, N separable units, concat + pointwise fuse + ReLU; squeezed to C x H x W."""
    y = ops.conv3d(lift_to_3d(x), p.entry)
    outs = []
    for unit in p.units:
        y = ops.sepconv3d(y, unit, activation=ops.relu)
        outs.append(y)
    fused = ops.relu(ops.conv3d(concat(outs, axis=0), p.fuse))
    return reshape(fused, fused.shape[1:])


def branch3d_forward(x0: Tensor, y_igm: Tensor | None, p: Unit3dParams, r_l: int,
                     return_feedback: bool = False):
    if r_l < 1:
        raise ConfigError(f"local upsampling factor must be >= 1, got {r_l}")
    if y_igm is not None and y_igm.shape != x0.shape:
        raise ShapeError(f"IGM output {y_igm.shape} does not match {x0.shape}")
    squeezed = unit3d_stack(x0 if y_igm is None else x0 + y_igm, p)
    y3d = ops.bicubic(squeezed, r_l)
    if not return_feedback:
        return y3d
    fb = ops.conv2d(squeezed, p.feedback) if p.feedback is not None else None
    return y3d, fb


@dataclass
class PamParams:
    igm: IgmParams | None
    hsl: HslParams | None
    unit3d: Unit3dParams | None
    out2d: Conv2dLayer | None  # conv before the 2D branch's local upsampling


def pam_forward(x0: Tensor, p: PamParams, r_l: int) -> Tensor:
    """Sum of the 2D and 3D branch outputs; a missing branch is simply skipped."""
    has_2d = p.out2d is not None
    if not has_2d and p.unit3d is None:
        raise ConfigError("PAM needs at least one branch")
    y_igm = igm_forward(x0, p.igm) if has_2d and p.igm is not None else None
    y3d = fb = None
    if p.unit3d is not None:
        y3d, fb = branch3d_forward(x0, y_igm, p.unit3d, r_l, return_feedback=True)
    if not has_2d:
        return y3d
    h = y_igm if y_igm is not None else x0
    if p.hsl is not None:
        h = hsl_forward(h, fb, p.hsl)
    y2d = ops.bicubic(ops.relu(ops.conv2d(h, p.out2d)), r_l)
    if y3d is None:
        return y2d
    if y2d.shape != y3d.shape:
        raise AssertionError(f"branch shapes diverged: {y2d.shape} vs {y3d.shape}")
    return y2d + y3d

