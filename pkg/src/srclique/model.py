"""Full 2^J model: FEN, per-level up-samplers and heads, pyramid loss, self-ensemble."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor
from .config import ConfigError, ModelConfig
from .fen import FEN
from .irn import (
    IRN,
    CliqueUpsample,
    CliqueUpsampleNoJoint,
    DeconvUpsample,
    SubPixelUpsample,
)
from .nn import Conv2d, Module


def make_upsampler(kind: str, c: int, p: int, counts, rng, init: str) -> Module:
    if kind == "clique":
        return CliqueUpsample(c, p, counts, rng, init)
    if kind == "clique_nojoint":
        return CliqueUpsampleNoJoint(c, p, counts, rng, init)
    if kind == "deconv":
        return DeconvUpsample(c, p, rng, init)
    if kind == "subpixel":
        return SubPixelUpsample(c, p, rng, init)
    raise ConfigError(f"unknown up-sampler kind {kind!r}")


class Level(Module):
    """One pyramid level: optional 1x1 adapter, up-sampler and 3-channel head."""

    def __init__(self, adapter: Conv2d | None, irn: IRN):
        self.adapter = adapter
        self.irn = irn

    def features(self, x: Tensor) -> Tensor:
        if self.adapter is not None:
            x = self.adapter(x)
        return self.irn.features(x)

    def head(self, feats: Tensor) -> Tensor:
        return self.irn.final(feats)


class SRCliqueNet(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        with ag.default_dtype(config.dtype):
            self._build(config)

    def _build(self, config: ModelConfig) -> None:
        rng = np.random.default_rng(config.seed)
        init = config.init
        self.fen = FEN(config.n_blocks, config.layers, config.growth, rng, config.fen_kind, init)
        self.level = []
        prev = self.fen.out_channels
        for j in range(1, config.J + 1):
            c, p = config.level_c(j), config.cu_p[j - 1]
            adapter = None
            if j > 1 or c != prev:
                adapter = Conv2d(prev, c, 1, rng, init=init)
            up = make_upsampler(config.up_kind, c, p, config.counts(j), rng, init)
            self.level.append(Level(adapter, IRN(up, 3, rng, init)))
            prev = up.out_channels

    @property
    def magnification(self) -> int:
        return self.config.magnification

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def __call__(self, lr: Tensor) -> list[Tensor]:
        return forward_pyramid(self, lr)

    def predict(self, lr: np.ndarray) -> np.ndarray:
        """Inference on a preprocessed (N, 3, h, w) array; returns the finest level."""
        with ag.no_grad():
            return forward_pyramid(self, Tensor(np.asarray(lr, dtype=self.dtype)))[-1].data

    def layout(self) -> list[dict]:
        """Channel arithmetic per level, for reports."""
        out = []
        for j, lvl in enumerate(self.level, start=1):
            up = lvl.irn.upsample
            out.append({
                "level": j,
                "adapter": None if lvl.adapter is None else (lvl.adapter.c_in, lvl.adapter.c_out),
                "c": up.c,
                "p": up.p,
            })
        return out


def build_model(config: ModelConfig) -> SRCliqueNet:
    config.validate()
    return SRCliqueNet(config)


def forward_pyramid(model: SRCliqueNet, lr: Tensor) -> list[Tensor]:
    """Predictions for every level; level j+1 consumes level j's pre-head features."""
    if lr.data.ndim != 4:
        raise DimensionError(f"expected (N, 3, h, w) input, got {lr.shape}")
    feats = model.fen(lr)
    preds = []
    for lvl in model.level:
        feats = lvl.features(feats)
        preds.append(lvl.head(feats))
    return preds


def pyramid_loss(preds: Sequence[Tensor], targets: Sequence) -> Tensor:
    """Sum over levels of the per-level mean absolute error."""
    if len(preds) != len(targets):
        raise DimensionError(f"pyramid_loss: {len(preds)} predictions vs {len(targets)} targets")
    losses = []
    for j, (p, t) in enumerate(zip(preds, targets), start=1):
        t = t if isinstance(t, Tensor) else Tensor(t)
        if p.shape != t.shape:
            raise DimensionError(f"pyramid_loss: level {j} shape {p.shape} vs target {t.shape}")
        losses.append(ag.mae_loss(p, t))
    return ag.add_n(losses)


# ------------------------------------------------------------ self-ensemble

# (k quarter turns, flip) with flip applied first
DIHEDRAL = tuple((k, flip) for flip in (False, True) for k in range(4))


def dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """Apply a dihedral transform to the last two axes."""
    if flip:
        x = x[..., ::-1]
    return np.rot90(x, k, axes=(-2, -1))


def dihedral_inverse(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    x = np.rot90(x, -k, axes=(-2, -1))
    if flip:
        x = x[..., ::-1]
    return x


def self_ensemble_infer(
    predict: Callable[[np.ndarray], np.ndarray],
    lr: np.ndarray,
    transforms: Sequence[tuple[int, bool]] = DIHEDRAL,
) -> np.ndarray:
    """Average of inverse-transformed predictions over the given transforms."""
    total = None
    for k, flip in transforms:
        out = dihedral_inverse(predict(np.ascontiguousarray(dihedral(lr, k, flip))), k, flip)
        total = out.copy() if total is None else total + out
    return total / len(transforms)
