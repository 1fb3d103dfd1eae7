"""``srclique`` command line: train, sr, eval, dwt, gradcheck, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data
from .ablation import CELLS, ablation_matrix
from .autograd import DimensionError, NumericalError, UsageError
from .checkpoint import CheckpointError
from .config import ConfigError, ModelConfig, dump_config, load_config
from .data import ImageFormatError
from .gradcheck import run_suite
from .metrics import evaluate
from .model import build_model
from .train import split_train_val, super_resolve, train
from .wavelet import BANDS, histogram_csv, subband_histogram

log = logging.getLogger("srclique")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = (".png", ".ppm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, *, inputs: bool = True, out: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--set", dest="overrides", metavar="K=V", action="append", default=[], help="config override (repeatable)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--mode", type=int, choices=(1, 2, 3, 4), help="preprocessing mode (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if inputs:
        p.add_argument("--in", dest="inputs", metavar="PATH", nargs="+", default=[], help="images, directories or a manifest CSV")
    if out:
        p.add_argument("--out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srclique", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model; writes train_log.csv, config.txt and checkpoints")
    _common(p)

    p = sub.add_parser("sr", help="super-resolve images with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--ensemble", action="store_true", help="average over the 8 dihedral transforms")

    p = sub.add_parser("eval", help="PSNR/SSIM report; bicubic baseline without --checkpoint")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--pred", metavar="DIR", help="score existing predictions (same file names) instead of running a model")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--scale", type=int, help="magnification for the bicubic baseline (default: 2**J)")

    p = sub.add_parser("dwt", help="per-band Haar coefficient histograms")
    _common(p)
    p.add_argument("--bins", type=int, default=100)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite on the tiny config")
    _common(p, inputs=False)

    p = sub.add_parser("ablate", help="block x up-sampler matrix at toy scale")
    _common(p)
    p.add_argument("--cells", nargs="+", metavar="CELL", help=f"subset of {list(CELLS)}")
    return parser


# ------------------------------------------------------------------ helpers


def _config(args) -> ModelConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    if getattr(args, "mode", None) is not None:
        overrides.append(f"mode = {args.mode}")
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out DIR is required")
    return Path(args.out)


def _collect(paths) -> list[tuple[str, str]]:
    """(path, split) pairs from image files, directories and manifest CSVs."""
    entries = []
    for raw in paths:
        p = Path(raw)
        if p.suffix.lower() == ".csv":
            entries.extend(data.read_manifest(p).entries)
        elif p.is_dir():
            entries.extend((str(f), "") for f in sorted(p.iterdir()) if f.suffix.lower() in IMAGE_SUFFIXES)
        elif p.exists():
            entries.append((str(p), ""))
        else:
            raise FileNotFoundError(f"no such input: {p}")
    return entries


def _load_named(entries) -> list[tuple[str, np.ndarray]]:
    return [(Path(path).stem, data.load_image(path)) for path, _ in entries]


def _training_images(args, cfg: ModelConfig) -> tuple[list, list]:
    """(train, val) lists of (name, uint8 image); bundled photos when no --in is given."""
    if args.inputs:
        entries = _collect(args.inputs)
        if any(split for _, split in entries):
            train_set = _load_named([e for e in entries if e[1] == "train"])
            val_set = _load_named([e for e in entries if e[1] == "val"])
            return train_set, val_set
        images = _load_named(entries)
    else:
        images = sorted(data.sample_images().items())
    if not images:
        raise UsageError("no training images")
    return split_train_val(images, cfg.val_fraction, cfg.seed)


def _patches(images, cfg: ModelConfig):
    samples = []
    for _, img in images:
        samples.extend(data.extract_patches(data.to_float(img), cfg.J, cfg.patch, stride=max(1, cfg.patch // 2)))
    return samples


def _lr_hr(images, r: int):
    out = []
    for name, img in images:
        lr, levels = data.build_pyramid(data.to_float(img), int(round(math.log2(r))))
        out.append((name, data.to_uint8(lr), data.to_uint8(levels[-1])))
    return out


def _model_from_checkpoint(args):
    ckpt = Path(args.checkpoint)
    if args.config is None:
        sibling = ckpt.parent / "config.txt"
        if sibling.exists():
            args.config = str(sibling)
    cfg = _config(args)
    model = build_model(cfg)
    checkpoint.load(model, ckpt)
    return model


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    train_imgs, val_imgs = _training_images(args, cfg)
    samples = _patches(train_imgs, cfg)
    if not samples:
        raise UsageError(f"no training patches: every image is smaller than the {cfg.patch}px LR patch")
    val = _lr_hr(val_imgs, cfg.magnification)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    log.info("model: %d parameters, %d training patches, %d validation images",
             model.num_parameters(), len(samples), len(val))
    if cfg.mode >= 3 and not cfg.means:
        cfg.means = data_means(train_imgs)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    result = train(model, samples, cfg, val=val, log_path=out / "train_log.csv", checkpoint_dir=out,
                   on_epoch=lambda r: log.info("epoch %d step %d loss %.5f lr %.3g", r.epoch, r.step, r.loss, r.lr))
    best = f", best validation PSNR {result.best_psnr:.4f} dB" if val else ""
    print(f"trained {result.steps} steps{best}")
    return EXIT_OK


def data_means(images) -> list[float]:
    total = np.zeros(3)
    count = 0
    for _, img in images:
        total += img.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        count += img.shape[0] * img.shape[1]
    return [float(v) for v in total / count / 255.0]


def cmd_sr(args) -> int:
    out = _out_dir(args)
    entries = _collect(args.inputs)
    if not entries:
        raise UsageError("sr needs --in images")
    model = _model_from_checkpoint(args)
    images = [(Path(p), data.load_image(p)) for p, _ in entries]
    out.mkdir(parents=True, exist_ok=True)
    r = model.magnification
    for path, img in images:
        sr = super_resolve(model, img, ensemble=args.ensemble)
        target = out / f"{path.stem}_x{r}{path.suffix.lower()}"
        data.save_image(sr, target)
        print(f"{target} {sr.shape[1]}x{sr.shape[0]}")
    return EXIT_OK


def cmd_eval(args) -> int:
    entries = _collect(args.inputs)
    if not entries:
        raise UsageError("eval needs --in ground-truth images")
    if args.pred and args.checkpoint:
        raise UsageError("give either --pred or --checkpoint, not both")
    settings: dict = {}
    if args.checkpoint:
        model = _model_from_checkpoint(args)
        r = model.magnification
        upscale = lambda lr: super_resolve(model, lr, ensemble=args.ensemble)
        settings["method"] = "model+ensemble" if args.ensemble else "model"
    else:
        cfg = _config(args)
        r = args.scale or cfg.magnification
        if args.pred:
            pred_dir = Path(args.pred)
            settings["method"] = f"files:{pred_dir.name}"
        else:
            upscale = lambda lr: data.to_uint8(data.upscale(data.to_float(lr), r))
            settings["method"] = "bicubic"
    if r < 2 or r & (r - 1):
        raise UsageError(f"scale must be a power of two >= 2, got {r}")
    out = Path(args.out) if args.out else None
    hr_images = _load_named(entries)
    dataset = []
    for name, hr in hr_images:
        hr = data.to_uint8(data.modcrop(data.to_float(hr), r))
        if args.pred:
            matches = sorted(pred_dir.glob(f"{name}*"))
            if not matches:
                raise FileNotFoundError(f"no prediction for {name} in {pred_dir}")
            pred = data.load_image(matches[0])
            dataset.append((name, pred, hr))
        else:
            dataset.append((name, data.to_uint8(data.downscale(data.to_float(hr), r)), hr))
    if args.pred:
        # the stored prediction stands in for the LR input and passes through unchanged
        upscale = lambda pred: pred
    report = evaluate(upscale, dataset, r, extra_settings=settings)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    print(f"mean over {len(report.rows)} images: PSNR {report.mean_psnr:.4f} dB, SSIM {report.mean_ssim:.6f}")
    return EXIT_OK


def cmd_dwt(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    images = _load_named(_collect(args.inputs)) if args.inputs else sorted(data.sample_images().items())
    if not images:
        raise UsageError("dwt needs images")
    means = cfg.means or data_means(images)
    # the Haar transform needs even sizes; drop a trailing row/column where necessary
    arrays = [data.preprocess(data.modcrop(data.to_float(img), 2), cfg.mode, means, cfg.ll_scale, target=True)
              for _, img in images]
    hists = subband_histogram(arrays, bins=args.bins)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dwt_histogram.csv").write_text(histogram_csv(hists), encoding="utf-8")
    lines = ["band,mean,std"] + [f"{b},{hists[b].mean!r},{hists[b].std!r}" for b in BANDS]
    (out / "dwt_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for b in BANDS:
        print(f"{b}: mean {hists[b].mean:.6g} std {hists[b].std:.6g}")
    hh_std = hists["hh"].std
    ratio = f"{hists['ll'].std / hh_std:.6g}" if hh_std > 0 else "undefined (HH is flat)"
    print(f"std(LL)/std(HH) = {ratio} (mode {cfg.mode})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    overrides = ["preset = gradcheck_tiny", *args.overrides]
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    if args.mode is not None:
        overrides.append(f"mode = {args.mode}")
    cfg = load_config(args.config, overrides)
    report = run_suite(cfg)
    worst = max(report, key=report.get)
    limit = 1e-4
    failing = sorted(k for k, v in report.items() if not v < limit)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = "".join(f"{k},{report[k]:.3e}\n" for k in sorted(report))
        (out / "gradcheck.csv").write_text("check,max_rel_error\n" + rows, encoding="utf-8")
    print(f"{len(report)} checks, worst {worst}: {report[worst]:.3e}")
    if failing:
        print(f"{len(failing)} checks at or above {limit:g}: {', '.join(failing[:10])}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ablate(args) -> int:
    overrides = list(args.overrides)
    cfg_base = load_config(args.config, ["preset = ablation_toy", *overrides] if args.config is None else overrides)
    if args.seed is not None:
        cfg_base = cfg_base.replace(seed=args.seed)
    if args.mode is not None:
        cfg_base = cfg_base.replace(mode=args.mode)
    if args.cells:
        unknown = [c for c in args.cells if c not in CELLS]
        if unknown:
            raise UsageError(f"unknown ablation variant(s) {unknown}; choose from {list(CELLS)}")
    out = _out_dir(args)
    train_imgs, val_imgs = _training_images(args, cfg_base)
    if cfg_base.mode >= 3 and not cfg_base.means:
        cfg_base.means = data_means(train_imgs)
    samples = _patches(train_imgs, cfg_base)
    val = _lr_hr(val_imgs, cfg_base.magnification)
    report = ablation_matrix(cfg_base, samples, val, args.cells, progress=lambda m: log.info("%s", m))
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "ablation.txt").write_text(report.to_table(), encoding="utf-8")
    print(report.to_table(), end="")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sr": cmd_sr,
    "eval": cmd_eval,
    "dwt": cmd_dwt,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"srclique: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"srclique: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageFormatError, CheckpointError, DimensionError, OSError) as exc:
        print(f"srclique: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"srclique: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
