"""Feature embedding net: entry convolutions, res-clique blocks, block group."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor
from .nn import Conv2d, Module, PReLU, ResidualBlock


def _zeros_like_layer(x0: Tensor, g: int) -> Tensor:
    n, _, h, w = x0.shape
    return Tensor(np.zeros((n, g, h, w), dtype=x0.data.dtype))


class CliqueBlock(Module):
    """Res-clique block with ``layers`` layers of ``growth`` channels each.

    ``w[(i, j)]`` is the g->g convolution from layer i to layer j (1-based);
    ``w[(0, j)]`` maps the block input (l*g channels) into layer j. The same
    pairwise weights serve both propagation stages, and each layer has one
    PReLU shared by both stages.
    """

    def __init__(self, layers: int, growth: int, rng=None, init: str = "kaiming"):
        if layers < 1 or growth < 1:
            raise DimensionError(f"clique block needs l, g >= 1, got l={layers}, g={growth}")
        self.layers, self.growth = layers, growth
        c_in = layers * growth
        self.w: dict[str, Conv2d] = {}
        for j in range(1, layers + 1):
            self.w[f"0{j}"] = Conv2d(c_in, growth, 3, rng, init=init)
        for i in range(1, layers + 1):
            for j in range(1, layers + 1):
                if i != j:
                    self.w[f"{i}{j}"] = Conv2d(growth, growth, 3, rng, init=init)
        self.act = [PReLU(growth) for _ in range(layers)]

    def weight(self, i: int, j: int) -> Conv2d:
        return self.w[f"{i}{j}"]

    def _check_input(self, x0: Tensor) -> None:
        expect = self.layers * self.growth
        if x0.shape[1] != expect:
            raise DimensionError(f"clique block: axis 1 (channels) is {x0.shape[1]}, expected l*g={expect}")

    def __call__(self, x0: Tensor) -> Tensor:
        return res_clique_block(x0, self)


def _fanout(block: CliqueBlock, src: int, x: Tensor, targets: list[int]) -> dict[int, Tensor]:
    """W_{src,t} * x for every t in targets, sharing one unfolding of x."""
    if not targets:
        return {}
    convs = [block.weight(src, t) for t in targets]
    out = ag.conv2d_multi(x, [c.weight for c in convs], [c.bias for c in convs], 1, convs[0].padding)
    if len(targets) == 1:
        return {targets[0]: out}
    return dict(zip(targets, ag.split_channels(out, [block.growth] * len(targets))))


def clique_stage_one(x0: Tensor, block: CliqueBlock) -> list[Tensor]:
    """X_i = act_i(sum_{k<i} W_ki * X_k + W_0i * X_0), for i = 1..l in order."""
    block._check_input(x0)
    l = block.layers
    terms: dict[int, list[Tensor]] = {i: [] for i in range(1, l + 1)}
    for i, t in _fanout(block, 0, x0, list(range(1, l + 1))).items():
        terms[i].append(t)
    xs: list[Tensor] = []
    for i in range(1, l + 1):
        x = block.act[i - 1](ag.add_n(terms[i]))
        xs.append(x)
        for j, t in _fanout(block, i, x, list(range(i + 1, l + 1))).items():
            terms[j].append(t)
    return xs


def clique_stage_two(stage1: list[Tensor], block: CliqueBlock) -> list[Tensor]:
    """X_i' = act_i(sum_{k<i} W_ki * X_k' + sum_{k>i} W_ki * X_k), i = 1..l.

    Layers below i are the already refreshed ones; no block-input term. With
    l = 1 both sums are empty and the layer is act(0) = 0.
    """
    l = block.layers
    if len(stage1) != l:
        raise DimensionError(f"stage two expects {l} layers, got {len(stage1)}")
    for x in stage1:
        if x.shape[1] != block.growth:
            raise DimensionError(f"stage two: axis 1 (channels) is {x.shape[1]}, expected g={block.growth}")
    terms: dict[int, list[Tensor]] = {i: [] for i in range(1, l + 1)}
    for k in range(2, l + 1):
        for i, t in _fanout(block, k, stage1[k - 1], list(range(1, k))).items():
            terms[i].append(t)
    xs: list[Tensor] = []
    for i in range(1, l + 1):
        pre = ag.add_n(terms[i]) if terms[i] else _zeros_like_layer(stage1[0], block.growth)
        x = block.act[i - 1](pre)
        xs.append(x)
        for j, t in _fanout(block, i, x, list(range(i + 1, l + 1))).items():
            terms[j].append(t)
    return xs


def res_clique_block(x0: Tensor, block: CliqueBlock) -> Tensor:
    stage2 = clique_stage_two(clique_stage_one(x0, block), block)
    return ag.add(ag.concat(stage2), x0)


class ResBlockUnit(Module):
    """Ablation stand-in for a res-clique block: a plain residual block on l*g channels."""

    def __init__(self, layers: int, growth: int, rng=None, init: str = "kaiming"):
        self.layers, self.growth = layers, growth
        self.body = ResidualBlock(layers * growth, rng, init=init)

    def __call__(self, x0: Tensor) -> Tensor:
        return self.body(x0)


class DenseBlockUnit(CliqueBlock):
    """Ablation stand-in: stage one only (a dense block) with the residual skip."""

    def __init__(self, layers: int, growth: int, rng=None, init: str = "kaiming"):
        super().__init__(layers, growth, rng, init)
        # stage two is never run, so only the forward (k < j) and input weights exist
        for i in range(1, layers + 1):
            for j in range(1, i):
                del self.w[f"{i}{j}"]

    def __call__(self, x0: Tensor) -> Tensor:
        return ag.add(ag.concat(clique_stage_one(x0, self)), x0)


BLOCK_KINDS = {"clique": CliqueBlock, "residual": ResBlockUnit, "dense": DenseBlockUnit}


def clique_block_group(f2: Tensor, blocks) -> Tensor:
    """B_0 = f2, B_i = block_i(B_{i-1}); returns [B_1, ..., B_n] along channels."""
    outs = []
    b = f2
    for block in blocks:
        b = block(b)
        outs.append(b)
    return ag.concat(outs)


class FEN(Module):
    def __init__(
        self,
        n_blocks: int,
        layers: int,
        growth: int,
        rng=None,
        kind: str = "clique",
        init: str = "kaiming",
        in_channels: int = 3,
    ):
        if kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {kind!r}")
        self.n_blocks, self.layers, self.growth = n_blocks, layers, growth
        self.in_channels = in_channels
        wide = n_blocks * layers * growth
        self.conv1 = Conv2d(in_channels, wide, 3, rng, init=init)
        self.conv2 = Conv2d(wide, layers * growth, 3, rng, init=init)
        cls = BLOCK_KINDS[kind]
        self.block = [cls(layers, growth, rng, init=init) for _ in range(n_blocks)]

    @property
    def out_channels(self) -> int:
        return self.n_blocks * self.layers * self.growth

    def __call__(self, x: Tensor) -> Tensor:
        return fen_forward(x, self)


def fen_forward(lr_image: Tensor, fen: FEN) -> Tensor:
    """F_FEN = [B_1..B_n] + F_1 with F_1 = conv1(x), B_0 = conv2(F_1)."""
    if lr_image.shape[1] != fen.in_channels:
        raise DimensionError(
            f"FEN: axis 1 (channels) is {lr_image.shape[1]}, expected {fen.in_channels}"
        )
    f1 = fen.conv1(lr_image)
    f2 = fen.conv2(f1)
    return ag.add(clique_block_group(f2, fen.block), f1)
