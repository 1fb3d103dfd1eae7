"""Training loop, validation and image-level inference helpers."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import NumericalError, Tensor, UsageError
from .config import ModelConfig
from .data import SamplePair, augment, postprocess, preprocess, to_float, to_uint8
from .metrics import psnr, ssim
from .model import SRCliqueNet, forward_pyramid, pyramid_loss, self_ensemble_infer

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "step", "loss", "lr", "elapsed_s")


@dataclass
class LogRecord:
    epoch: int
    step: int
    loss: float
    lr: float
    elapsed_s: float


@dataclass
class TrainResult:
    records: list[LogRecord] = field(default_factory=list)
    steps: int = 0
    best_psnr: float = -math.inf
    best_ssim: float = -math.inf
    best_epoch: int = -1

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for r in self.records:
            writer.writerow([r.epoch, r.step, repr(r.loss), repr(r.lr), f"{r.elapsed_s:.3f}"])
        return buf.getvalue()


def split_train_val(items: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the last ``fraction`` of the items become validation."""
    order = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in order]
    n_val = int(round(fraction * len(items)))
    if fraction > 0 and n_val == 0 and len(items) > 1:
        n_val = 1
    cut = len(items) - n_val
    return shuffled[:cut], shuffled[cut:]


def channel_means(samples: Sequence[SamplePair]) -> list[float]:
    """Per-channel mean of the finest targets, in 0..1 units."""
    total = np.zeros(3)
    count = 0
    for s in samples:
        hr = s.hr_levels[-1]
        total += hr.reshape(3, -1).sum(axis=1)
        count += hr[0].size
    return [float(v) for v in total / count / 255.0]


def make_batch(samples: Sequence[SamplePair], config: ModelConfig) -> tuple[Tensor, list[np.ndarray]]:
    dtype = np.dtype(config.dtype)
    prep = lambda x, target: preprocess(x, config.mode, config.means, config.ll_scale, target).astype(dtype)
    x = np.stack([prep(s.lr, False) for s in samples])
    targets = [np.stack([prep(s.hr_levels[j], True) for s in samples]) for j in range(config.J)]
    return Tensor(x), targets


def _diagnose(model: SRCliqueNet, preds: list[Tensor], loss: Tensor) -> str:
    named = [(name, p.data) for name, p in model.named_parameters()]
    named += [(f"prediction level {j}", p.data) for j, p in enumerate(preds, start=1)]
    named += [(f"gradient of {name}", p.grad) for name, p in model.named_parameters()]
    named.append(("loss", loss.data))
    return ag.first_nonfinite(named) or "loss"


def _check_finite(model: SRCliqueNet, preds, loss, step: int) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"non-finite loss at step {step}; first non-finite tensor: {_diagnose(model, preds, loss)}")


def train(
    model: SRCliqueNet,
    samples: Sequence[SamplePair],
    config: ModelConfig | None = None,
    val: Sequence[tuple[str, np.ndarray, np.ndarray]] = (),
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[LogRecord], None] | None = None,
) -> TrainResult:
    """Adam on the pyramid loss with a halving step schedule.

    ``samples`` are 0..255 patch pairs; each epoch visits them once in a
    seeded random order with a random dihedral augmentation. ``val`` holds
    (name, lr uint8, hr uint8) images scored after every epoch; the best one
    is checkpointed as ``best.ckpt``.
    """
    config = config or model.config
    if not samples:
        raise UsageError("training set is empty")
    if config.mode >= 3 and not config.means:
        config.means = channel_means(samples)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = ag.Adam(params, lr=config.base_lr)
    batch = min(config.batch, len(samples))
    per_epoch = len(samples) // batch
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "w", encoding="utf-8", newline="") if log_path is not None else None
    if log_file is not None:
        log_file.write(",".join(LOG_FIELDS) + "\n")
    result = TrainResult()
    start = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            if config.max_steps and result.steps >= config.max_steps:
                break
            opt.lr = ag.lr_schedule(epoch, config.base_lr, config.lr_period)
            order = rng.permutation(len(samples))
            losses = []
            for b in range(per_epoch):
                if config.max_steps and result.steps >= config.max_steps:
                    break
                chunk = [augment(samples[i], rng) for i in order[b * batch : (b + 1) * batch]]
                x, targets = make_batch(chunk, config)
                # overflow is reported through the finiteness checks below, not as warnings
                with np.errstate(over="ignore", invalid="ignore"):
                    preds = forward_pyramid(model, x)
                    loss = pyramid_loss(preds, targets)
                    _check_finite(model, preds, loss, result.steps)
                    model.zero_grad()
                    loss.backward()
                bad = ag.first_nonfinite((name, p.grad) for name, p in model.named_parameters())
                if bad is not None:
                    raise NumericalError(f"non-finite gradient at step {result.steps}; first non-finite tensor: gradient of {bad}")
                opt.step()
                result.steps += 1
                losses.append(loss.item())
            elapsed = 0.0 if config.deterministic else time.perf_counter() - start
            record = LogRecord(epoch, result.steps, float(np.mean(losses)), float(opt.lr), elapsed)
            result.records.append(record)
            if log_file is not None:
                log_file.write(result.to_csv().splitlines()[-1] + "\n")
                log_file.flush()
            if on_epoch is not None:
                on_epoch(record)
            if val:
                score, structure = validate_metrics(model, val, config)
                result.best_ssim = max(result.best_ssim, structure)
                if score > result.best_psnr:
                    result.best_psnr, result.best_epoch = score, epoch
                    if ckpt_dir is not None:
                        checkpoint.save(model, ckpt_dir / "best.ckpt")
            if ckpt_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                checkpoint.save(model, ckpt_dir / f"epoch{epoch + 1:04d}.ckpt")
    finally:
        if log_file is not None:
            log_file.close()
    if ckpt_dir is not None:
        checkpoint.save(model, ckpt_dir / "last.ckpt")
    return result


def super_resolve(model: SRCliqueNet, lr: np.ndarray, ensemble: bool = False) -> np.ndarray:
    """uint8 (h, w, 3) -> uint8 (r h, r w, 3) using the finest prediction."""
    cfg = model.config
    x = preprocess(to_float(lr), cfg.mode, cfg.means, cfg.ll_scale)[None].astype(model.dtype)
    y = self_ensemble_infer(model.predict, x) if ensemble else model.predict(x)
    return to_uint8(postprocess(y[0], cfg.mode, cfg.means, cfg.ll_scale))


def validate_metrics(model: SRCliqueNet, val, config: ModelConfig) -> tuple[float, float]:
    """Mean Y-channel (PSNR, SSIM), border shave = magnification, over (name, lr, hr) uint8 images."""
    r = config.magnification
    scores = []
    for _, lr, hr in val:
        sr = super_resolve(model, lr)
        scores.append((psnr(sr, hr, "y", r), ssim(sr, hr, "y", r)))
    return tuple(float(v) for v in np.mean(scores, axis=0))


def validate(model: SRCliqueNet, val, config: ModelConfig) -> float:
    return validate_metrics(model, val, config)[0]
