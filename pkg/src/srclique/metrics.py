"""PSNR / SSIM and dataset-level evaluation reports."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import DimensionError, UsageError

PSNR_INF = math.inf


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma (16..235) of a uint8/float (H, W, 3) RGB image, as float64."""
    x = np.asarray(img, dtype=np.float64)
    return 16.0 + (65.481 * x[..., 0] + 128.553 * x[..., 1] + 24.966 * x[..., 2]) / 255.0


def _prepare(a: np.ndarray, b: np.ndarray, channel_mode: str, shave: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"image sizes differ: {a.shape} vs {b.shape}")
    if shave < 0:
        raise UsageError("shave must be >= 0")
    if channel_mode == "y":
        a, b = rgb_to_y(a), rgb_to_y(b)
    elif channel_mode == "rgb":
        a, b = a.astype(np.float64), b.astype(np.float64)
    else:
        raise UsageError(f"channel mode must be 'y' or 'rgb', got {channel_mode!r}")
    if shave:
        h, w = a.shape[:2]
        if 2 * shave >= min(h, w):
            raise DimensionError(f"shave {shave} leaves nothing of a {h}x{w} image")
        a = a[shave : h - shave, shave : w - shave]
        b = b[shave : h - shave, shave : w - shave]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, channel_mode: str = "y", shave: int = 0) -> float:
    """10 log10(255^2 / MSE); identical inputs give ``inf``."""
    a, b = _prepare(a, b, channel_mode, shave)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(255.0**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    k = g.size
    rows = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def _ssim_channel(a: np.ndarray, b: np.ndarray, g: np.ndarray, c1: float, c2: float) -> float:
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    channel_mode: str = "y",
    shave: int = 0,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 255.0,
) -> float:
    """Mean SSIM over all fully-contained Gaussian windows (RGB: mean over channels)."""
    a, b = _prepare(a, b, channel_mode, shave)
    if min(a.shape[:2]) < window:
        raise DimensionError(f"image {a.shape[:2]} smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    if a.ndim == 2:
        return _ssim_channel(a, b, g, c1, c2)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], g, c1, c2) for c in range(a.shape[2])]))


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.settings):
            buf.write(f"# {key} = {self.settings[key]}\n")
        buf.write("name,psnr_db,ssim\n")
        for name, p, s in self.rows:
            buf.write(f"{name},{_fmt(p)},{s:.6f}\n")
        buf.write(f"mean,{_fmt(self.mean_psnr)},{self.mean_ssim:.6f}\n")
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def evaluate(
    upscale: Callable[[np.ndarray], np.ndarray],
    dataset: Sequence[tuple[str, np.ndarray, np.ndarray]],
    scale: int,
    channel_mode: str = "y",
    shave: int | None = None,
    extra_settings: dict | None = None,
) -> EvalReport:
    """Score ``upscale(lr) -> sr`` (uint8 in, uint8 out) on (name, lr, hr) triples.

    Rows are ordered by name; border shave defaults to the scale.
    """
    if not dataset:
        raise UsageError("evaluation dataset is empty")
    shave = scale if shave is None else shave
    report = EvalReport(settings={"channel_mode": channel_mode, "shave": shave, "scale": scale})
    report.settings.update(extra_settings or {})
    for name, lr, hr in sorted(dataset, key=lambda item: item[0]):
        sr = upscale(lr)
        if sr.shape != hr.shape:
            raise DimensionError(f"{name}: output {sr.shape} does not match ground truth {hr.shape}")
        report.rows.append((name, psnr(sr, hr, channel_mode, shave), ssim(sr, hr, channel_mode, shave)))
    return report
