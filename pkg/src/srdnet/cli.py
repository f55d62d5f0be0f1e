"""Command-line entry point: ``srdnet <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import SYNTH_KINDS, DatasetManifest, HsiCube, read_hsic, synth_cube, write_hsic
from .errors import ConfigError, ShapeError, SrdnetError, UsageError
from .frequency import freq_distance_band, spectrum_power
from .metrics import evaluate
from .model import ABLATIONS, PRESETS, ModelConfig, count_parameters, init_parameters, load_model, forward
from .tensor import no_grad
from .train import TrainConfig, train

PROG = "srdnet"


class _Parser(argparse.ArgumentParser):
    # argparse prints full usage and exits; we want a single diagnostic line
    def error(self, message):
        raise UsageError(message)


def _ablations(text: str) -> tuple[str, ...]:
    flags = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown ablation {bad[0]!r}; choose from {','.join(ABLATIONS)}")
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Hyperspectral super-resolution toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-dataset", help="write synthetic cubes and a manifest")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--size", type=int, default=64, help="height and width of each cube")
    p.add_argument("--kind", choices=SYNTH_KINDS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="run", help="directory for train.log and checkpoints")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patch-size", type=int, default=32, help="LR patch side")
    p.add_argument("--patches-per-cube", type=int, default=24)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--ablate", type=_ablations, default=(), metavar="FLAG,...",
                   help=f"switch off components: {','.join(ABLATIONS)}")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--c-feat", type=int, default=64)
    p.add_argument("--c-3d", type=int, default=16)
    p.add_argument("--n-units", type=int, default=3)
    p.add_argument("--igm-width", type=int, default=32)
    p.add_argument("--peak", type=float, default=1.0)

    p = sub.add_parser("super-resolve", help="run a checkpoint on one cube")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("evaluate", help="compare a reconstruction against ground truth")
    p.add_argument("gt")
    p.add_argument("sr")
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--per-band", action="store_true")
    p.add_argument("--psnr-mode", choices=("band", "global"), default="band")
    p.add_argument("--error-map", metavar="PATH", help="write |gt - sr| as an HSIC cube")

    p = sub.add_parser("freq-analyze", help="power spectra and band-wise frequency distance")
    p.add_argument("gt")
    p.add_argument("sr")
    p.add_argument("--out", default="freq", help="directory for the power maps and summary")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=("all",) + tuple(gradcheck.SUITES), default="all")
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("params", help="report the parameter count of a configuration")
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--ablate", type=_ablations, default=(), metavar="FLAG,...")
    p.add_argument("--preset", choices=sorted(PRESETS))
    return parser


def _model_config(args, bands: int) -> ModelConfig:
    kw = dict(bands=bands, scale=args.scale)
    for name in ("c_feat", "c_3d", "n_units", "igm_width"):
        if hasattr(args, name):
            kw[name] = getattr(args, name)
    cfg = ModelConfig.from_preset(args.preset, **kw) if args.preset else ModelConfig(**kw)
    return cfg.ablate(args.ablate) if args.ablate else cfg


def cmd_make_dataset(args) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = SYNTH_KINDS if args.kind == "all" else (args.kind,)
    names = []
    for i in range(args.count):
        cube = synth_cube(kinds[i % len(kinds)], args.bands, args.size, args.size, seed=args.seed * 100003 + i)
        name = f"cube{i:03d}.hsic"
        write_hsic(cube, out / name)
        names.append(name)
    manifest = DatasetManifest.split(names, args.seed)
    manifest.write(out / "manifest.tsv")
    print(f"wrote {args.count} cubes and {out / 'manifest.tsv'}")
    return 0


def cmd_train(args) -> int:
    manifest = DatasetManifest.read(args.manifest)
    train_paths = manifest.paths("train")
    if not train_paths:
        raise ConfigError(f"{args.manifest}: no training entries")
    bands = read_hsic(train_paths[0]).bands
    model_cfg = _model_config(args, bands)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, beta=args.beta,
                      alpha=args.alpha, seed=args.seed, patch_size=args.patch_size,
                      patches_per_cube=args.patches_per_cube, checkpoint_every=args.checkpoint_every,
                      augment=not args.no_augment, peak=args.peak)
    result = train(manifest, model_cfg, cfg, args.out)
    last = result.records[-1] if result.records else None
    summary = f"steps={len(result.records)} checkpoint={result.checkpoint}"
    if last is not None:
        summary += f" total={last.total:.6g}"
        if last.val is not None:
            summary += " val " + last.val.line()
    print(summary)
    return 0


def cmd_super_resolve(args) -> int:
    cfg, params, _, _ = load_model(args.checkpoint)
    cube = read_hsic(args.input)
    with no_grad():
        sr = forward(cube.voxels, cfg, params).data
    write_hsic(HsiCube(sr, cube.wavelengths), args.output)
    print(f"{'x'.join(map(str, cube.shape))} -> {'x'.join(map(str, sr.shape))}")
    return 0


def _load_pair(gt_path, sr_path) -> tuple[np.ndarray, np.ndarray]:
    gt, sr = read_hsic(gt_path).voxels, read_hsic(sr_path).voxels
    if gt.shape != sr.shape:
        raise ShapeError(f"cube shapes differ: {gt.shape} vs {sr.shape}")
    return gt, sr


def cmd_evaluate(args) -> int:
    gt, sr = _load_pair(args.gt, args.sr)
    report = evaluate(gt, sr, args.peak, per_band=args.per_band, psnr_mode=args.psnr_mode)
    print(report.line())
    if report.per_band:
        for b in range(gt.shape[0]):
            vals = " ".join(f"{k}={report.per_band[k][b]:.10g}" for k in ("psnr", "ssim", "cc"))
            print(f"band={b} {vals}".replace("=inf", "=identical"))
    if args.error_map:
        write_hsic(np.abs(gt - sr), args.error_map)
    return 0


def cmd_freq_analyze(args) -> int:
    gt, sr = _load_pair(args.gt, args.sr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_hsic(np.stack([spectrum_power(b) for b in gt]), out / "gt_power.hsic")
    write_hsic(np.stack([spectrum_power(b) for b in sr]), out / "sr_power.hsic")
    lines = ["# band mean_distance"]
    lines += [f"{b} {freq_distance_band(gt[b], sr[b])[1]!r}" for b in range(gt.shape[0])]
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.module, args.probes, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise SrdnetError(f"{len(failed)} gradient check(s) failed: {', '.join(failed)}")
    return 0


def cmd_params(args) -> int:
    args.preset = getattr(args, "preset", None)
    cfg = _model_config(args, args.bands)
    print(f"parameters={count_parameters(init_parameters(cfg))} config={json.dumps(cfg.to_dict(), sort_keys=True)}")
    return 0


COMMANDS = {
    "make-dataset": cmd_make_dataset, "train": cmd_train, "super-resolve": cmd_super_resolve,
    "evaluate": cmd_evaluate, "freq-analyze": cmd_freq_analyze, "gradcheck": cmd_gradcheck,
    "params": cmd_params,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (SrdnetError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1
