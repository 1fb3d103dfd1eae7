"""Image reconstruction net: clique up-sampling in the Haar domain plus the RGB head.

Clique up-sampling predicts the four sub-bands jointly in three stages:

* extraction   LL <- F;  HL, LH <- [F, LL];  HH <- [F, LL, HL, LH]
* self residual  each band through its own chain of residual blocks
* refinement   HH kept;  LH <- [HH, LH];  HL <- [HH, HL];  LL <- [HH, LH, HL, LL]

and the refined quad is merged by the inverse Haar transform, channel by
channel, doubling the resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor
from .nn import Conv2d, ConvPReLU, Module, PReLU, ResidualBlock
from .wavelet import BANDS, SubbandQuad, idwt2


@dataclass(frozen=True)
class BandCounts:
    ll: int = 2
    hl: int = 3
    lh: int = 3
    hh: int = 4

    def __getitem__(self, band: str) -> int:
        return getattr(self, band)


class CliqueUpsample(Module):
    def __init__(self, c: int, p: int, counts: BandCounts = BandCounts(), rng=None, init: str = "kaiming"):
        if c < 1 or p < 1:
            raise DimensionError(f"clique up-sampling needs c, p >= 1, got c={c}, p={p}")
        for b in BANDS:
            if counts[b] < 0:
                raise DimensionError(f"residual block count for {b} must be >= 0")
        self.c, self.p, self.counts = c, p, counts
        self.ext = {
            "ll": ConvPReLU(c, p, rng, init),
            "hl": ConvPReLU(c + p, p, rng, init),
            "lh": ConvPReLU(c + p, p, rng, init),
            "hh": ConvPReLU(c + 3 * p, p, rng, init),
        }
        self.res = {b: [ResidualBlock(p, rng, init) for _ in range(counts[b])] for b in BANDS}
        self.ref = {
            "lh": ConvPReLU(2 * p, p, rng, init),
            "hl": ConvPReLU(2 * p, p, rng, init),
            "ll": ConvPReLU(4 * p, p, rng, init),
        }

    @property
    def out_channels(self) -> int:
        return self.p

    def __call__(self, f: Tensor) -> Tensor:
        return clique_upsample(f, self)


def subband_extraction(f_fen: Tensor, cu: CliqueUpsample) -> SubbandQuad:
    if f_fen.shape[1] != cu.c:
        raise DimensionError(f"sub-band extraction: axis 1 (channels) is {f_fen.shape[1]}, expected c={cu.c}")
    ll = cu.ext["ll"](f_fen)
    # HL and LH read the same input, so their convolutions share one unfolding
    both = ag.conv2d_multi(
        ag.concat([f_fen, ll]),
        [cu.ext["hl"].conv.weight, cu.ext["lh"].conv.weight],
        [cu.ext["hl"].conv.bias, cu.ext["lh"].conv.bias],
        padding=1,
    )
    hl_pre, lh_pre = ag.split_channels(both, [cu.p, cu.p])
    hl = cu.ext["hl"].act(hl_pre)
    lh = cu.ext["lh"].act(lh_pre)
    hh = cu.ext["hh"](ag.concat([f_fen, ll, hl, lh]))
    return SubbandQuad(ll, hl, lh, hh)


def _check_quad(quad: SubbandQuad, p: int, stage: str) -> None:
    if quad.shape[1] != p:
        raise DimensionError(f"{stage}: axis 1 (channels) is {quad.shape[1]}, expected p={p}")


def self_residual(quad: SubbandQuad, cu: CliqueUpsample) -> SubbandQuad:
    _check_quad(quad, cu.p, "self residual")
    out = {}
    for b in BANDS:
        x = getattr(quad, b)
        for block in cu.res[b]:
            x = block(x)
        out[b] = x
    return SubbandQuad(**out)


def subband_refinement(quad: SubbandQuad, cu: CliqueUpsample) -> SubbandQuad:
    _check_quad(quad, cu.p, "sub-band refinement")
    hh = quad.hh
    lh = cu.ref["lh"](ag.concat([hh, quad.lh]))
    hl = cu.ref["hl"](ag.concat([hh, quad.hl]))
    ll = cu.ref["ll"](ag.concat([hh, lh, hl, quad.ll]))
    return SubbandQuad(ll, hl, lh, hh)


def clique_stages(f_fen: Tensor, cu: CliqueUpsample) -> list[SubbandQuad]:
    """The quads after extraction, self residual learning and refinement."""
    q1 = subband_extraction(f_fen, cu)
    q2 = self_residual(q1, cu)
    q3 = subband_refinement(q2, cu)
    return [q1, q2, q3]


def clique_upsample(f_fen: Tensor, cu: CliqueUpsample) -> Tensor:
    return idwt2(clique_stages(f_fen, cu)[-1])


class CliqueUpsampleNoJoint(Module):
    """Up-sampler without joint learning: every band comes from F alone,
    runs its residual chain and a band-local refinement map; no cross-band edges."""

    def __init__(self, c: int, p: int, counts: BandCounts = BandCounts(), rng=None, init: str = "kaiming"):
        self.c, self.p, self.counts = c, p, counts
        self.ext = {b: ConvPReLU(c, p, rng, init) for b in BANDS}
        self.res = {b: [ResidualBlock(p, rng, init) for _ in range(counts[b])] for b in BANDS}
        self.ref = {b: ConvPReLU(p, p, rng, init) for b in ("lh", "hl", "ll")}

    @property
    def out_channels(self) -> int:
        return self.p

    def bands(self, f: Tensor) -> SubbandQuad:
        if f.shape[1] != self.c:
            raise DimensionError(f"CU-: axis 1 (channels) is {f.shape[1]}, expected c={self.c}")
        out = {}
        for b in BANDS:
            x = self.ext[b](f)
            for block in self.res[b]:
                x = block(x)
            out[b] = self.ref[b](x) if b in self.ref else x
        return SubbandQuad(**out)

    def __call__(self, f: Tensor) -> Tensor:
        return idwt2(self.bands(f))


class DeconvUpsample(Module):
    """Stride-2 transposed convolution (kernel 4, padding 1) followed by PReLU.

    Realized as zero insertion then a padded correlation, which is the same
    linear map with a re-indexed (learned) kernel.
    """

    def __init__(self, c: int, p: int, rng=None, init: str = "kaiming"):
        self.c, self.p = c, p
        self.conv = Conv2d(c, p, 4, rng, padding=2, init=init)
        # only a quarter of the taps see non-zero input after zero insertion
        self.conv.weight.data *= 2.0
        self.act = PReLU(p)

    @property
    def out_channels(self) -> int:
        return self.p

    def __call__(self, f: Tensor) -> Tensor:
        return self.act(self.conv(ag.zero_insert(f, 2)))


class SubPixelUpsample(Module):
    """Convolution to 4p channels, then periodic shuffle by 2."""

    def __init__(self, c: int, p: int, rng=None, init: str = "kaiming"):
        self.c, self.p = c, p
        self.conv = ConvPReLU(c, 4 * p, rng, init)

    @property
    def out_channels(self) -> int:
        return self.p

    def __call__(self, f: Tensor) -> Tensor:
        return ag.pixel_shuffle(self.conv(f), 2)


class IRN(Module):
    def __init__(self, upsample: Module, out_channels: int = 3, rng=None, init: str = "kaiming"):
        self.upsample = upsample
        self.final = Conv2d(upsample.out_channels, out_channels, 3, rng, init=init)

    def features(self, f_fen: Tensor) -> Tensor:
        return self.upsample(f_fen)

    def __call__(self, f_fen: Tensor) -> Tensor:
        return irn_forward(f_fen, self)


def irn_forward(f_fen: Tensor, irn: IRN) -> Tensor:
    return irn.final(irn.features(f_fen))


def channel_mean(f) -> np.ndarray:
    """Per-pixel mean over the channel axis: (N, C, H, W) -> (N, 1, H, W)."""
    arr = f.data if isinstance(f, Tensor) else np.asarray(f)
    if arr.shape[1] < 1:
        raise DimensionError("channel_mean needs at least one channel")
    return arr.mean(axis=1, keepdims=True)
