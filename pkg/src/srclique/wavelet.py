"""Single-level orthonormal 2-D Haar transform over (N, C, H, W) tensors.

For each 2x2 block [[a, b], [c, d]]:

    ll = (a + b + c + d) / 2      hl = (a + b - c - d) / 2   (horizontal edges)
    lh = (a - b + c - d) / 2      hh = (a - b - c + d) / 2   (vertical edges: lh)

The transform is orthonormal, so the inverse is its transpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor, UsageError

Array = Union[np.ndarray, Tensor]
BANDS = ("ll", "hl", "lh", "hh")


@dataclass
class SubbandQuad:
    ll: Array
    hl: Array
    lh: Array
    hh: Array

    def __post_init__(self):
        shapes = {b: _shape(getattr(self, b)) for b in BANDS}
        if len(set(shapes.values())) != 1:
            raise DimensionError(f"sub-band shapes differ: {shapes}")

    @property
    def shape(self) -> tuple[int, ...]:
        return _shape(self.ll)

    def bands(self) -> tuple[Array, Array, Array, Array]:
        return (self.ll, self.hl, self.lh, self.hh)

    def energy(self) -> float:
        return float(sum(np.sum(_raw(b) ** 2) for b in self.bands()))


def _shape(x: Array) -> tuple[int, ...]:
    return x.shape


def _raw(x: Array) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _analysis(x: np.ndarray) -> tuple[np.ndarray, ...]:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    hl = (a + b - c - d) * 0.5
    lh = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, hl, lh, hh


def _synthesis(ll, hl, lh, hh) -> np.ndarray:
    *lead, h, w = ll.shape
    out = np.empty((*lead, 2 * h, 2 * w), dtype=np.result_type(ll, hl, lh, hh))
    out[..., 0::2, 0::2] = (ll + hl + lh + hh) * 0.5
    out[..., 0::2, 1::2] = (ll + hl - lh - hh) * 0.5
    out[..., 1::2, 0::2] = (ll - hl + lh - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - hl - lh + hh) * 0.5
    return out


def dwt2(image: Array) -> SubbandQuad:
    """Haar analysis. Odd spatial sizes are rejected, never padded."""
    h, w = image.shape[-2:]
    if h % 2:
        raise DimensionError(f"dwt2: axis -2 (height) is odd ({h})")
    if w % 2:
        raise DimensionError(f"dwt2: axis -1 (width) is odd ({w})")
    if not isinstance(image, Tensor):
        return SubbandQuad(*_analysis(np.asarray(image, dtype=np.float64)))

    bands = _analysis(image.data)
    out = []
    for idx, band in enumerate(bands):
        def grad_fn(g, idx=idx):
            zero = np.zeros_like(g)
            parts = [zero, zero, zero, zero]
            parts[idx] = g
            return (_synthesis(*parts),)

        out.append(ag._make(band, (image,), grad_fn))
    return SubbandQuad(*out)


def idwt2(quad: SubbandQuad) -> Array:
    """Haar synthesis; exact inverse of :func:`dwt2`, output spatially doubled."""
    bands = quad.bands()
    if not any(isinstance(b, Tensor) for b in bands):
        return _synthesis(*(np.asarray(b, dtype=np.float64) for b in bands))
    tensors = tuple(b if isinstance(b, Tensor) else Tensor(b) for b in bands)
    out = _synthesis(*(t.data for t in tensors))
    return ag._make(out, tensors, lambda g: _analysis(g))


def scale_ll(quad: SubbandQuad, s: float) -> SubbandQuad:
    """Divide the LL band by ``s``; other bands pass through untouched."""
    if not s > 0:
        raise UsageError(f"LL scale must be positive, got {s}")
    ll = ag.scale(quad.ll, 1.0 / s) if isinstance(quad.ll, Tensor) else quad.ll / s
    return SubbandQuad(ll, quad.hl, quad.lh, quad.hh)


def unscale_ll(quad: SubbandQuad, s: float) -> SubbandQuad:
    if not s > 0:
        raise UsageError(f"LL scale must be positive, got {s}")
    ll = ag.scale(quad.ll, s) if isinstance(quad.ll, Tensor) else quad.ll * s
    return SubbandQuad(ll, quad.hl, quad.lh, quad.hh)


def rescale_ll_image(x: np.ndarray, s: float) -> np.ndarray:
    """Image whose Haar LL band is divided by ``s`` (mode-4 target domain)."""
    return idwt2(scale_ll(dwt2(x), s))


def restore_ll_image(x: np.ndarray, s: float) -> np.ndarray:
    return idwt2(unscale_ll(dwt2(x), s))


@dataclass
class BandHistogram:
    band: str
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float


def subband_histogram(
    images: Sequence[Array],
    bins: int = 100,
    value_range: tuple[float, float] | None = None,
) -> dict[str, BandHistogram]:
    """Pooled per-band coefficient histograms over a set of images.

    Each image is (C, H, W) or (N, C, H, W); odd trailing rows/cols are
    cropped so every image contributes. With no range given, the common range
    is the min/max over all four bands.
    """
    if not images:
        raise UsageError("subband_histogram needs at least one image")
    if bins < 2:
        raise UsageError("bins must be >= 2")
    pooled: dict[str, list[np.ndarray]] = {b: [] for b in BANDS}
    for img in images:
        arr = _raw(img)
        h, w = arr.shape[-2:]
        arr = arr[..., : h - h % 2, : w - w % 2]
        quad = dwt2(arr)
        for b in BANDS:
            pooled[b].append(np.ravel(getattr(quad, b)))
    values = {b: np.concatenate(v) for b, v in pooled.items()}
    if value_range is None:
        lo = min(float(v.min()) for v in values.values())
        hi = max(float(v.max()) for v in values.values())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        value_range = (lo, hi)
    out = {}
    for b in BANDS:
        counts, edges = np.histogram(values[b], bins=bins, range=value_range)
        out[b] = BandHistogram(b, edges, counts, float(values[b].mean()), float(values[b].std()))
    return out


def histogram_csv(hists: dict[str, BandHistogram]) -> str:
    lines = ["band,bin_left,bin_right,count"]
    for b in BANDS:
        h = hists[b]
        for i, count in enumerate(h.counts):
            lines.append(f"{b},{float(h.edges[i])!r},{float(h.edges[i + 1])!r},{int(count)}")
    return "\n".join(lines) + "\n"
