"""Finite-difference gradient suite: every differentiable op, then whole models."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .model import build_model, forward_pyramid, pyramid_loss
from .wavelet import SubbandQuad, dwt2, idwt2


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict[str, tuple]:
    """name -> (build_loss, params); each loss is a random linear probe of the op output."""
    cases = {}

    def add_case(name, fn, **params):
        probe = rng.standard_normal(fn(**params).shape)
        cases[name] = (lambda: ag.weighted_sum(fn(**params), probe), params)

    x, y, z = _leaf(rng, 2, 3, 5, 4), _leaf(rng, 2, 3, 5, 4), _leaf(rng, 2, 3, 5, 4)
    add_case("add", lambda a, b: ag.add(a, b), a=x, b=y)
    add_case("add_n", lambda a, b, c: ag.add_n([a, b, c]), a=x, b=y, c=z)
    add_case("scale", lambda a: ag.scale(a, -0.7), a=x)
    add_case("concat", lambda a, b: ag.concat([a, b]), a=x, b=_leaf(rng, 2, 2, 5, 4))
    add_case("split_channels", lambda a: ag.concat(ag.split_channels(a, [1, 2])[::-1]), a=x)
    add_case("prelu", lambda a, slope: ag.prelu(a, slope), a=x, slope=Tensor(rng.uniform(0.1, 0.4, 3), requires_grad=True))
    w3, b3 = _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    add_case("conv2d_3x3_pad1", lambda a, w, b: ag.conv2d(a, w, b, 1, 1), a=x, w=w3, b=b3)
    add_case("conv2d_3x3_valid", lambda a, w, b: ag.conv2d(a, w, b, 1, 0), a=x, w=w3, b=b3)
    add_case("conv2d_3x3_stride2", lambda a, w, b: ag.conv2d(a, w, b, 2, 1), a=x, w=w3, b=b3)
    add_case("conv2d_1x1", lambda a, w, b: ag.conv2d(a, w, b), a=x, w=_leaf(rng, 2, 3, 1, 1), b=_leaf(rng, 2))
    add_case("conv2d_4x4_pad2", lambda a, w: ag.conv2d(a, w, None, 1, 2), a=x, w=_leaf(rng, 2, 3, 4, 4))
    add_case(
        "conv2d_multi",
        lambda a, w1, w2, b1, b2: ag.conv2d_multi(a, [w1, w2], [b1, b2], 1, 1),
        a=x, w1=_leaf(rng, 2, 3, 3, 3), w2=_leaf(rng, 3, 3, 3, 3), b1=_leaf(rng, 2), b2=_leaf(rng, 3),
    )
    add_case("pixel_shuffle", lambda a: ag.pixel_shuffle(a, 2), a=_leaf(rng, 2, 8, 3, 2))
    add_case("zero_insert", lambda a: ag.zero_insert(a, 2), a=x)
    target = Tensor(rng.standard_normal(x.shape))
    cases["mae_loss"] = (lambda: ag.mae_loss(x, target), {"a": x})
    add_case("dwt2", lambda a: ag.concat(list(dwt2(a).bands())), a=_leaf(rng, 2, 3, 6, 4))
    q = [_leaf(rng, 2, 3, 3, 2) for _ in range(4)]
    add_case("idwt2", lambda ll, hl, lh, hh: idwt2(SubbandQuad(ll, hl, lh, hh)), ll=q[0], hl=q[1], lh=q[2], hh=q[3])
    return cases


def model_case(config: ModelConfig, rng: np.random.Generator, size: int = 4):
    """Pyramid loss of a freshly built model on a random input and random targets."""
    model = build_model(config)
    x = Tensor(rng.standard_normal((1, 3, size, size)))
    targets = [rng.standard_normal((1, 3, size * 2**j, size * 2**j)) for j in range(1, config.J + 1)]
    return (lambda: pyramid_loss(forward_pyramid(model, x), targets)), dict(model.named_parameters())


def run_suite(config: ModelConfig, seed: int | None = None, variants: bool = True) -> dict[str, float]:
    """Max relative error per checked tensor, keyed ``case:tensor``.

    Ops and the configured model are probed element by element (64-bit);
    the two-level model and the ablation variants are probed on a sample of
    elements per tensor to keep the run short.
    """
    config = config.replace(dtype="float64", init="kaiming")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    report: dict[str, float] = {}
    for name, (loss, params) in op_cases(rng).items():
        for pname, err in ag.grad_check(loss, params).items():
            report[f"{name}:{pname}"] = err
    loss, params = model_case(config, rng)
    for pname, err in ag.grad_check(loss, params).items():
        report[f"model:{pname}"] = err
    if variants:
        extra = {"model_J2": config.replace(J=2, cu_c=[0, 0], cu_p=config.cu_p[:1] * 2)}
        for fen_kind in ("residual", "dense"):
            extra[f"model_{fen_kind}"] = config.replace(fen_kind=fen_kind)
        for up_kind in ("clique_nojoint", "deconv", "subpixel"):
            extra[f"model_{up_kind}"] = config.replace(up_kind=up_kind)
        for case, cfg in extra.items():
            loss, params = model_case(cfg, rng)
            for pname, err in ag.grad_check(loss, params, sample=3, rng=rng).items():
                report[f"{case}:{pname}"] = err
    return report

