"""Adam, the training loop and its log/checkpoint side effects."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, PatchPair, augment, degrade, extract_patches, random_augmentation, read_hsic
from .errors import ConfigError, NonFiniteError, ShapeError
from .frequency import FreqLossConfig, total_loss
from .metrics import MetricReport, evaluate
from .model import ModelConfig, ModelParameters, forward, init_parameters, load_model, save_model
from .tensor import Tensor, backward, make_rng, no_grad, scalar_mul, zero_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 4
    beta: float = 0.1
    alpha: float = 1.0
    seed: int = 0
    patch_size: int = 32
    patches_per_cube: int = 24
    checkpoint_every: int = 10
    augment: bool = True
    peak: float = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        FreqLossConfig(self.alpha, self.beta)

    @property
    def freq(self) -> FreqLossConfig:
        return FreqLossConfig(self.alpha, self.beta)


@dataclass
class TrainRecord:
    step: int
    epoch: int
    l1: float
    hfl: float
    total: float
    wall_time: float = 0.0
    val: MetricReport | None = None

    def line(self) -> str:
        # wall time stays out of the log so identical runs give identical files
        return f"{self.step} {self.epoch} {self.l1!r} {self.hfl!r} {self.total!r}"


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: list[Tensor]) -> "AdamState":
        return cls([np.zeros(t.shape) for t in tensors], [np.zeros(t.shape) for t in tensors])


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)


class Trainer:
    """Owns parameters and optimizer state; one call to :meth:`step` per batch."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 params: ModelParameters | None = None, adam: AdamState | None = None):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.params = params if params is not None else init_parameters(model_cfg, train_cfg.seed)
        self.tensors = self.params.tensors()
        self.adam = adam if adam is not None else AdamState.zeros_like(self.tensors)
        self.epoch = 0

    @property
    def step_count(self) -> int:
        return self.adam.step

    def step(self, batch: list[PatchPair], epoch: int | None = None) -> TrainRecord:
        t0 = time.perf_counter()
        zero_grad(self.tensors)
        n = len(batch)
        l1_sum = hfl_sum = total_sum = 0.0
        for pair in batch:
            sr = forward(pair.lr, self.model_cfg, self.params)
            if not np.isfinite(sr.data).all():
                raise NonFiniteError(f"step {self.step_count + 1}: network output is non-finite")
            total, l1, freq = total_loss(pair.hr, sr, self.cfg.freq)
            for name, t in (("total loss", total), ("l1 loss", l1), ("frequency loss", freq)):
                if not math.isfinite(t.item()):
                    raise NonFiniteError(f"step {self.step_count + 1}: {name} is non-finite")
            l1_sum += l1.item()
            hfl_sum += freq.item()
            total_sum += total.item()
            backward(scalar_mul(total, 1.0 / n))
        for name, t in self.params.named_tensors():
            if t.grad is not None and not np.isfinite(t.grad).all():
                raise NonFiniteError(f"step {self.step_count + 1}: gradient of {name} is non-finite")
        adam_step(self.tensors, [t.grad for t in self.tensors], self.adam, self.cfg.lr)
        for name, t in self.params.named_tensors():
            if not np.isfinite(t.data).all():
                raise NonFiniteError(f"step {self.step_count}: parameter {name} is non-finite")
        return TrainRecord(self.step_count, self.epoch if epoch is None else epoch,
                           l1_sum / n, hfl_sum / n, total_sum / n, time.perf_counter() - t0)

    def predict(self, lr: np.ndarray) -> np.ndarray:
        with no_grad():
            return forward(lr, self.model_cfg, self.params).data

    def save(self, path) -> None:
        extra = {"train": dataclasses.asdict(self.cfg), "step": self.adam.step, "epoch": self.epoch}
        tensors = {}
        for (name, _), m, v in zip(self.params.named_tensors(), self.adam.m, self.adam.v):
            tensors[f"adam.m.{name}"] = m
            tensors[f"adam.v.{name}"] = v
        save_model(path, self.model_cfg, self.params, extra, tensors)

    @classmethod
    def load(cls, path, train_cfg: TrainConfig | None = None) -> "Trainer":
        cfg, params, meta, rest = load_model(path)
        tcfg = train_cfg or TrainConfig(**meta.get("train", {}))
        names = [n for n, _ in params.named_tensors()]
        adam = None
        if all(f"adam.m.{n}" in rest for n in names):
            adam = AdamState([rest[f"adam.m.{n}"] for n in names],
                             [rest[f"adam.v.{n}"] for n in names], int(meta.get("step", 0)))
        trainer = cls(cfg, tcfg, params, adam)
        trainer.epoch = int(meta.get("epoch", 0))
        return trainer


def epoch_patches(cubes: list[tuple[str, np.ndarray]], model_cfg: ModelConfig,
                  cfg: TrainConfig, epoch: int) -> list[PatchPair]:
    """Patches for one epoch, fully determined by (seed, epoch)."""
    rng = make_rng([cfg.seed, epoch])
    r = model_cfg.scale
    pairs = []
    for source, vox in cubes:
        p = min(cfg.patch_size, vox.shape[1] // r, vox.shape[2] // r)
        for pair in extract_patches(vox, cfg.patches_per_cube, p, r, rng, source):
            if cfg.augment:
                ops = random_augmentation(rng)
                try:
                    pair = augment(pair, ops)
                except ShapeError:  # scaled below one LR pixel
                    pass
            if min(pair.lr.shape[1:]) >= 8:
                pairs.append(pair)
    return pairs


def validate(trainer: Trainer, cubes: list[tuple[str, np.ndarray]], peak: float) -> MetricReport | None:
    reports = []
    r = trainer.model_cfg.scale
    for _, vox in cubes:
        lr = degrade(vox, r)
        hr = vox[:, :lr.shape[1] * r, :lr.shape[2] * r]
        reports.append(evaluate(hr, trainer.predict(lr), peak))
    if not reports:
        return None
    return MetricReport(*(float(np.mean([getattr(rep, f) for rep in reports]))
                          for f in ("psnr_db", "ssim", "cc", "sam_degrees")))


@dataclass
class TrainResult:
    checkpoint: Path
    records: list[TrainRecord] = field(default_factory=list)


def train(manifest: DatasetManifest, model_cfg: ModelConfig, cfg: TrainConfig, out_dir) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_cubes = [(p, read_hsic(p).voxels) for p in manifest.paths("train")]
    if not train_cubes:
        raise ConfigError("manifest has no training cubes")
    for _, vox in train_cubes:
        if vox.shape[0] != model_cfg.bands:
            raise ConfigError(f"cube has {vox.shape[0]} bands, model expects {model_cfg.bands}")
    val_cubes = [(p, read_hsic(p).voxels) for p in manifest.paths("val")]
    trainer = Trainer(model_cfg, cfg)
    result = TrainResult(out / "final.ckpt")
    with open(out / "train.log", "w") as fh:
        fh.write("# step epoch l1 hfl total\n")
        for epoch in range(1, cfg.epochs + 1):
            trainer.epoch = epoch
            pairs = epoch_patches(train_cubes, model_cfg, cfg, epoch)
            for i in range(0, len(pairs), cfg.batch_size):
                rec = trainer.step(pairs[i:i + cfg.batch_size], epoch)
                result.records.append(rec)
                fh.write(rec.line() + "\n")
            fh.flush()
            if val_cubes and result.records:
                result.records[-1].val = validate(trainer, val_cubes, cfg.peak)
                log.info("epoch %d val %s", epoch, result.records[-1].val.line())
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
                trainer.save(out / f"epoch{epoch:04d}.ckpt")
    trainer.save(result.checkpoint)
    return result
