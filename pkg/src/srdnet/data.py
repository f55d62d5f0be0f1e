"""Cube persistence, synthetic cubes, degradation, patches and augmentation.

HSIC file layout (little-endian)::

    "HSIC" | u16 version | u32 B | u32 H | u32 W | u8 flags
    [B x f64 wavelengths if flags & 1] | B*H*W x f64 voxels, band-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DecodeError, ShapeError
from .ops import resize_array
from .tensor import make_rng

MAGIC = b"HSIC"
VERSION = 1
HEADER = struct.Struct("<4sHIIIB")
_MAX_VOXELS = 1 << 34


@dataclass
class HsiCube:
    voxels: np.ndarray  # B x H x W
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ShapeError(f"a cube is B x H x W with positive sizes, got {self.voxels.shape}")
        if self.wavelengths is not None:
            self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
            if self.wavelengths.shape != (self.bands,):
                raise ShapeError(f"{len(self.wavelengths)} wavelengths for {self.bands} bands")

    @property
    def bands(self) -> int:
        return self.voxels.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


def write_hsic(cube: HsiCube | np.ndarray, path) -> None:
    if not isinstance(cube, HsiCube):
        cube = HsiCube(cube)
    b, h, w = cube.shape
    flags = 1 if cube.wavelengths is not None else 0
    parts = [HEADER.pack(MAGIC, VERSION, b, h, w, flags)]
    if flags:
        parts.append(np.ascontiguousarray(cube.wavelengths, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(cube.voxels, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_hsic(path) -> HsiCube:
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size:
        raise DecodeError(f"{path}: truncated header")
    magic, version, b, h, w, flags = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DecodeError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DecodeError(f"{path}: unsupported version {version}")
    if min(b, h, w) < 1 or b * h * w > _MAX_VOXELS:
        raise DecodeError(f"{path}: implausible dimensions {b}x{h}x{w}")
    pos = HEADER.size
    wl = None
    if flags & 1:
        end = pos + 8 * b
        if len(buf) < end:
            raise DecodeError(f"{path}: truncated wavelengths")
        wl = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64)
        pos = end
    need = pos + 8 * b * h * w
    if len(buf) != need:
        raise DecodeError(f"{path}: expected {need} bytes, found {len(buf)}")
    vox = np.frombuffer(buf[pos:need], dtype="<f8").astype(np.float64).reshape(b, h, w)
    return HsiCube(vox, wl)


def normalize(voxels: np.ndarray) -> np.ndarray:
    """Min-max scale a whole cube to [0, 1]; a flat cube maps to zeros."""
    lo, hi = float(voxels.min()), float(voxels.max())
    return np.zeros_like(voxels) if hi == lo else (voxels - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# synthetic cubes

SYNTH_KINDS = ("gradient", "sinusoid", "checker", "mixture")


def synth_cube(kind: str, bands: int, height: int, width: int, seed: int = 0) -> HsiCube:
    """Deterministic test cube in [0, 1] whose bands vary smoothly with band index."""
    if min(bands, height, width) < 1:
        raise ShapeError("cube dimensions must be >= 1")
    rng = make_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    t = np.linspace(0.0, 1.0, bands)[:, None, None]
    if kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * x / max(width - 1, 1) + np.sin(angle) * y / max(height - 1, 1))
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        vox = (1 - t) * ramp + t * (1 - ramp) * 0.5 + 0.25 * t
    elif kind == "sinusoid":
        fx, fy = rng.uniform(0.02, 0.15, size=2)
        phase = 2 * np.pi * t * rng.uniform(0.2, 0.6)
        vox = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
    elif kind == "checker":
        cell = max(2, min(height, width) // 4)
        board = ((x // cell + y // cell) % 2)[None]
        vox = board * (0.3 + 0.6 * t) + (1 - board) * (0.7 - 0.5 * t)
    elif kind == "mixture":
        vox = _mixture(rng, bands, x, y)
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    return HsiCube(np.clip(vox, 0.0, 1.0))


def _mixture(rng, bands: int, x: np.ndarray, y: np.ndarray, n_end: int = 4) -> np.ndarray:
    # smooth endmember spectra mixed by sinusoidal abundance maps
    lam = np.linspace(0.0, 1.0, bands)
    # distinct base levels keep every band contrasted; smooth bumps add spectral shape
    levels = np.linspace(0.15, 0.85, n_end)[rng.permutation(n_end)]
    centres = rng.uniform(0.0, 1.0, n_end)
    widths = rng.uniform(0.3, 0.6, n_end)
    bumps = np.exp(-((lam[None] - centres[:, None]) ** 2) / (2 * widths[:, None] ** 2))
    spectra = levels[:, None] + 0.15 * (bumps - 0.5)
    maps = []
    for _ in range(n_end):
        fx, fy = rng.uniform(0.03, 0.2, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        maps.append(np.exp(1.5 * np.sin(2 * np.pi * (fx * x + fy * y) + ph)))
    abund = np.stack(maps)
    abund /= abund.sum(axis=0, keepdims=True)
    return np.tensordot(spectra.T, abund, axes=([1], [0]))


# ---------------------------------------------------------------------------
# degradation, patches, augmentation


def _as_array(cube) -> np.ndarray:
    return cube.voxels if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)


def degrade(hr, r: int) -> np.ndarray:
    """Bicubic downsampling by ``r`` after cropping H, W to multiples of ``r``."""
    if r < 1:
        raise ConfigError(f"scale must be >= 1, got {r}")
    vox = _as_array(hr)
    h, w = (vox.shape[1] // r) * r, (vox.shape[2] // r) * r
    if h == 0 or w == 0:
        raise ShapeError(f"cube {vox.shape} is smaller than the scale {r}")
    vox = vox[:, :h, :w]
    return resize_array(vox, (h // r, w // r), "bicubic")


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    source: str = ""
    offset: tuple[int, int] = (0, 0)
    augmentation: tuple[str, ...] = field(default_factory=tuple)

    @property
    def scale(self) -> int:
        return self.hr.shape[1] // self.lr.shape[1]


def extract_patches(cube, count: int = 24, p: int = 32, r: int = 4, rng=None,
                    source: str = "") -> list[PatchPair]:
    vox = _as_array(cube)
    size = r * p
    _, h, w = vox.shape
    if h < size or w < size:
        raise ShapeError(f"cube {h}x{w} is smaller than one {size}x{size} patch")
    rng = rng if rng is not None else make_rng(0)
    pairs = []
    for _ in range(count):
        oy = int(rng.integers(0, h - size + 1))
        ox = int(rng.integers(0, w - size + 1))
        hr = vox[:, oy:oy + size, ox:ox + size].copy()
        pairs.append(PatchPair(degrade(hr, r), hr, source, (oy, ox)))
    return pairs


AUGMENTATIONS = ("rot90", "rot180", "rot270", "hflip", "scale1", "scale0.75", "scale0.5")


def _geometric(a: np.ndarray, op: str) -> np.ndarray:
    if op.startswith("rot"):
        return np.rot90(a, int(op[3:]) // 90, axes=(1, 2)).copy()
    if op == "hflip":
        return a[:, :, ::-1].copy()
    raise ConfigError(f"unknown augmentation {op!r}")


def augment(pair: PatchPair, ops: tuple[str, ...] | list[str]) -> PatchPair:
    """Apply the listed ops in order to both halves of a pair."""
    lr, hr = pair.lr, pair.hr
    r = pair.scale
    for op in ops:
        if op.startswith("scale"):
            s = float(op[5:])
            if s == 1.0:
                continue
            side_h = int(math.floor(hr.shape[1] * s / r)) * r
            side_w = int(math.floor(hr.shape[2] * s / r)) * r
            if side_h < r or side_w < r:
                raise ShapeError(f"scaling {hr.shape} by {s} leaves nothing at scale {r}")
            scaled = resize_array(hr, (round(hr.shape[1] * s), round(hr.shape[2] * s)))
            hr = scaled[:, :side_h, :side_w].copy()
            lr = degrade(hr, r)
        else:
            lr, hr = _geometric(lr, op), _geometric(hr, op)
    return PatchPair(lr, hr, pair.source, pair.offset, pair.augmentation + tuple(ops))


def random_augmentation(rng) -> tuple[str, ...]:
    geo = ("none", "rot90", "rot180", "rot270", "hflip")[int(rng.integers(0, 5))]
    scale = ("scale1", "scale0.75", "scale0.5")[int(rng.integers(0, 3))]
    return tuple(op for op in (geo, scale) if op != "none")


# ---------------------------------------------------------------------------
# manifest: one "path<TAB>split" per line


SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    entries: list[tuple[str, str]]
    seed: int = 0

    def paths(self, split: str) -> list[str]:
        return [p for p, s in self.entries if s == split]

    def write(self, path) -> None:
        Path(path).write_text("".join(f"{p}\t{s}\n" for p, s in self.entries))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        entries = []
        base = Path(path).parent
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in SPLITS:
                raise DecodeError(f"{path}:{n}: expected 'path<TAB>train|val|test'")
            p = Path(parts[0])
            entries.append((str(p if p.is_absolute() else base / p), parts[1]))
        return cls(entries)

    @classmethod
    def split(cls, paths: list[str], seed: int = 0) -> "DatasetManifest":
        """Random 80/10/10 split; val and test round half down so ties go to train."""
        order = make_rng(seed).permutation(len(paths))
        n = len(paths)
        n_val = n_test = (n + 4) // 10
        labels = ["val"] * n_val + ["test"] * n_test + ["train"] * (n - n_val - n_test)
        return cls([(paths[i], labels[k]) for k, i in enumerate(order)], seed)
