"""Full network assembly, parameter bookkeeping and checkpoint files."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import ops
from .blocks import HslParams, IgmParams, PamParams, Unit3dParams, pam_forward
from .errors import ConfigError, DecodeError, ShapeError
from .ops import Conv2dLayer, TransposedConv2dLayer
from .tensor import Tensor, make_rng

ABLATIONS = ("pam", "2d", "3d", "igm", "hsl")

# Structural rows of the component ablation: flag values for (pam, 2d, 3d, igm, hsl).
PRESETS: dict[str, dict[str, bool]] = {
    "baseline": dict(use_pam=False, use_2d=False, use_3d=False, use_igm=False, use_hsl=False),
    "full": dict(use_pam=True, use_2d=True, use_3d=True, use_igm=True, use_hsl=True),
    "3d-only": dict(use_pam=True, use_2d=False, use_3d=True, use_igm=False, use_hsl=False),
    "2d-igm": dict(use_pam=True, use_2d=True, use_3d=False, use_igm=True, use_hsl=False),
    "2d-hsl": dict(use_pam=True, use_2d=True, use_3d=False, use_igm=False, use_hsl=True),
    "2d-only": dict(use_pam=True, use_2d=True, use_3d=False, use_igm=True, use_hsl=True),
}


def split_scale(r: int) -> tuple[int, int]:
    """Closest factor pair a <= b with a * b = r, returned as (local, global)."""
    a = int(math.isqrt(r))
    while r % a:
        a -= 1
    return a, r // a


@dataclass
class ModelConfig:
    bands: int
    scale: int = 4
    n_units: int = 3
    c_feat: int = 64
    c_3d: int = 16
    igm_width: int = 32
    use_pam: bool = True
    use_2d: bool = True
    use_3d: bool = True
    use_igm: bool = True
    use_hsl: bool = True
    # "balanced": r = r_l * r_g as the closest factor pair; "local": r_l = r, r_g = 1
    upsample_split: str = "balanced"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("bands", "scale", "n_units", "c_feat", "c_3d", "igm_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.upsample_split not in ("balanced", "local"):
            raise ConfigError(f"unknown upsample_split {self.upsample_split!r}")
        if (self.use_2d or self.use_3d) and not self.use_pam:
            raise ConfigError("2D/3D branches are part of PAM; enable use_pam")
        if self.use_pam and not (self.use_2d or self.use_3d):
            raise ConfigError("PAM needs at least one of the 2D and 3D branches")
        if (self.use_igm or self.use_hsl) and not self.use_2d:
            raise ConfigError("IGM and HSL live in the 2D branch; enable use_2d")
        if self.use_hsl and self.c_feat % 2:
            raise ConfigError(f"HSL needs an even c_feat, got {self.c_feat}")

    @property
    def local_scale(self) -> int:
        return self.scale if self.upsample_split == "local" else split_scale(self.scale)[0]

    @property
    def global_scale(self) -> int:
        return self.scale // self.local_scale

    @classmethod
    def from_preset(cls, name: str, **kw) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**kw, **PRESETS[name]})

    def ablate(self, flags) -> "ModelConfig":
        """Copy with the named components switched off (dependents follow)."""
        kw = dataclasses.asdict(self)
        for flag in flags:
            if flag not in ABLATIONS:
                raise ConfigError(f"unknown ablation {flag!r}; choose from {ABLATIONS}")
            kw[f"use_{flag}"] = False
        if not kw["use_pam"]:
            kw.update(use_2d=False, use_3d=False)
        if not kw["use_2d"]:
            kw.update(use_igm=False, use_hsl=False)
        if kw["use_pam"] and not (kw["use_2d"] or kw["use_3d"]):
            kw["use_pam"] = False
        return ModelConfig(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ResBlockParams:
    conv1: Conv2dLayer
    conv2: Conv2dLayer

    @classmethod
    def init(cls, rng, c: int) -> "ResBlockParams":
        return cls(Conv2dLayer.init(rng, c, c), Conv2dLayer.init(rng, c, c))


@dataclass
class ModelParameters:
    head: Conv2dLayer
    res1: ResBlockParams
    proj: Conv2dLayer  # 1x1 projection of x0 before local upsampling
    pam: PamParams | None
    res2: ResBlockParams
    upsample: TransposedConv2dLayer
    tail: Conv2dLayer
    _cache: list = field(default=None, repr=False, compare=False)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        if self._cache is None:
            self._cache = list(_walk(self, ""))
        return self._cache

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        names = [n for n, _ in self.named_tensors()]
        missing = set(names) - set(state)
        if missing:
            raise DecodeError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for name, t in self.named_tensors():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model {t.shape}")
            t.data = arr.copy()


def _walk(obj, prefix: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(item, f"{prefix}.{i}")
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.name.startswith("_"):
                continue
            value = getattr(obj, f.name)
            if value is not None:
                yield from _walk(value, f"{prefix}.{f.name}" if prefix else f.name)


def init_parameters(cfg: ModelConfig, seed: int = 0) -> ModelParameters:
    rng = make_rng(seed)
    c = cfg.c_feat
    head = Conv2dLayer.init(rng, cfg.bands, c)
    res1 = ResBlockParams.init(rng, c)
    proj = Conv2dLayer.init(rng, c, c, 1)
    pam = None
    if cfg.use_pam:
        pam = PamParams(
            igm=IgmParams.init(rng, c, cfg.igm_width) if cfg.use_igm else None,
            hsl=HslParams.init(rng, c) if cfg.use_hsl else None,
            unit3d=Unit3dParams.init(rng, c, cfg.c_3d, cfg.n_units,
                                     feedback=cfg.use_2d and cfg.use_hsl) if cfg.use_3d else None,
            out2d=Conv2dLayer.init(rng, c, c) if cfg.use_2d else None,
        )
    res2 = ResBlockParams.init(rng, c)
    upsample = TransposedConv2dLayer.init(rng, c, c, cfg.global_scale)
    tail = Conv2dLayer.init(rng, c, cfg.bands)
    return ModelParameters(head, res1, proj, pam, res2, upsample, tail)


def count_parameters(params) -> int:
    if isinstance(params, ModelParameters):
        return sum(t.size for t in params.tensors())
    return sum(t.size for _, t in _walk(params, ""))


def residual_block(x: Tensor, p: ResBlockParams) -> Tensor:
    return ops.conv2d(ops.relu(ops.conv2d(x, p.conv1)), p.conv2) + x


def forward(lr: Tensor | np.ndarray, cfg: ModelConfig, params: ModelParameters) -> Tensor:
    """Super-resolve one ``B x h x w`` cube to ``B x rh x rw``."""
    x = lr if isinstance(lr, Tensor) else Tensor(lr)
    if x.ndim != 3 or x.shape[0] != cfg.bands:
        raise ShapeError(f"expected {cfg.bands} x h x w input, got {x.shape}")
    if cfg.use_hsl and min(x.shape[1:]) < 4:
        raise ShapeError(f"input {x.shape[1]}x{x.shape[2]} too small for the attention pyramid")
    r_l = cfg.local_scale
    x0 = residual_block(ops.conv2d(x, params.head), params.res1)
    skip = ops.bicubic(ops.conv2d(x0, params.proj), r_l)
    xt_in = pam_forward(x0, params.pam, r_l) + skip if params.pam is not None else skip
    xt = residual_block(xt_in, params.res2)
    x_rec = ops.conv2d(ops.transposed_conv2d(xt, params.upsample), params.tail)
    return x_rec + ops.bicubic(x, cfg.scale)


# ---------------------------------------------------------------------------
# checkpoint container: "SRDN" | u16 version | u32 len + JSON | u32 count |
# per tensor: u32 len + name | u32 rank | u64 dims | f64 data (all little-endian)

MAGIC = b"SRDN"
VERSION = 1


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d rank; tobytes is C-ordered
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise DecodeError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise DecodeError(f"{path}: not a checkpoint (bad magic)")
    version, blob_len = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise DecodeError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(take(blob_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{path}: corrupt metadata ({exc})") from None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode()
        except UnicodeDecodeError:
            raise DecodeError(f"{path}: corrupt tensor name") from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise DecodeError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, meta


def save_model(path, cfg: ModelConfig, params: ModelParameters, extra: dict | None = None,
               extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    meta = {"model": cfg.to_dict(), **(extra or {})}
    tensors = params.state_dict()
    tensors.update(extra_tensors or {})
    write_checkpoint(path, tensors, meta)


def load_model(path) -> tuple[ModelConfig, ModelParameters, dict, dict[str, np.ndarray]]:
    """Returns (config, parameters, metadata, tensors not belonging to the model)."""
    tensors, meta = read_checkpoint(path)
    cfg = ModelConfig(**meta["model"])
    params = init_parameters(cfg)
    params.load_state_dict(tensors)
    own = {n for n, _ in params.named_tensors()}
    return cfg, params, meta, {k: v for k, v in tensors.items() if k not in own}
