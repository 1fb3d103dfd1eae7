"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Only the operations the super-resolution network needs are provided:
convolution, PReLU, concatenation, addition, the Haar synthesis layer
helpers, pixel shuffle, zero-insertion upsampling and the MAE loss.
Everything is float64 by default; float32 is available for faster training.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class UsageError(RuntimeError):
    """Raised when an API is called in an invalid state."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during training."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_default_dtype(dtype) -> None:
    global DTYPE
    DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new parameters and int inputs."""
    prev = DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """Dense array plus an optional gradient buffer and a link into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def backward(self) -> None:
        backward(self)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls without resetting grads accumulate.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- operations


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise DimensionError(f"{op}: axis {axis} differs ({x} vs {y})")
        raise DimensionError(f"{op}: rank differs ({a.shape} vs {b.shape})")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def add_n(items: Sequence[Tensor]) -> Tensor:
    """Sum of several same-shaped tensors, recorded as one node."""
    if not items:
        raise UsageError("add_n needs at least one tensor")
    for t in items[1:]:
        _check_same_shape(items[0], t, "add_n")
    total = items[0].data.copy()
    for t in items[1:]:
        total += t.data
    return _make(total, tuple(items), lambda g: (g,) * len(items))


def scale(x: Tensor, factor: float) -> Tensor:
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def concat(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis, preserving order."""
    if not inputs:
        raise UsageError("concat needs at least one tensor")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if len(t.shape) != 4:
            raise DimensionError(f"concat: expected 4-D tensors, got {t.shape}")
        for axis in (0, 2, 3):
            if t.shape[axis] != ref[axis]:
                raise DimensionError(
                    f"concat: axis {axis} differs ({ref[axis]} vs {t.shape[axis]})"
                )
    if len(inputs) == 1:
        x = inputs[0]
        return _make(x.data.copy(), (x,), lambda g: (g,))
    sizes = [t.shape[1] for t in inputs]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(inputs))]

    return _make(np.concatenate([t.data for t in inputs], axis=1), tuple(inputs), grad_fn)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Per-channel parametric ReLU: x for x >= 0, slope * x otherwise."""
    channels = x.shape[1]
    if slope.data.size != channels:
        raise DimensionError(
            f"prelu: slope length {slope.data.size} != channel count {channels}"
        )
    a = slope.data.reshape(1, channels, 1, 1)
    # local derivative dy/dx: 1 on the positive side, the slope on the negative
    dydx = np.where(x.data < 0, a, np.ones((), dtype=x.data.dtype))
    out = dydx * x.data

    def grad_fn(g):
        gx = dydx * g
        ga = (np.minimum(x.data, 0) * g).sum(axis=(0, 2, 3)).reshape(slope.shape)
        return gx, ga

    return _make(out, (x, slope), grad_fn)


def _im2col(x: np.ndarray, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, H, W) -> (C*k*k, N*ho*wo), channel-major so the batch folds into one GEMM."""
    n, c, h, w = x.shape
    xp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, shape, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`; returns an (N, C, H, W) view."""
    n, c, h, w = shape
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j]
    return xp[:, :, padding : padding + h, padding : padding + w].transpose(1, 0, 2, 3)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (N, C_in, H, W); weight: (C_out, C_in, k, k); bias: (C_out,).
    """
    return conv2d_multi(x, [weight], None if bias is None else [bias], stride, padding)


def conv2d_multi(
    x: Tensor,
    weights: Sequence[Tensor],
    biases: Sequence[Tensor] | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Several convolutions of the same input, output stacked along channels.

    Equivalent to ``concat([conv2d(x, w_i, b_i) ...])`` but the input is
    unfolded once and the products share one matrix multiply.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be 4-D, got {x.shape}")
    n, cin, h, w = x.shape
    k = weights[0].shape[2]
    couts = []
    for wt in weights:
        co, wcin, kh, kw = wt.shape
        if kh != kw or kh != k:
            raise DimensionError(f"conv2d: kernel {kh}x{kw} does not match {k}x{k}")
        if wcin != cin:
            raise DimensionError(f"conv2d: axis 1 (channels) of input is {cin}, weight expects {wcin}")
        couts.append(co)
    if biases is not None:
        for co, b in zip(couts, biases):
            if b.data.size != co:
                raise DimensionError(f"conv2d: bias length {b.data.size} != C_out {co}")
    cout = sum(couts)
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho < 1:
        raise DimensionError(f"conv2d: axis 2 (height) {h} too small for kernel {k}")
    if wo < 1:
        raise DimensionError(f"conv2d: axis 3 (width) {w} too small for kernel {k}")

    wdata = weights[0].data if len(weights) == 1 else np.concatenate([wt.data for wt in weights])
    wmat = wdata.reshape(cout, cin * k * k)
    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.transpose(1, 0, 2, 3).reshape(cin, n * h * w)
    else:
        cols = _im2col(x.data, k, stride, padding, ho, wo)
    out = wmat @ cols
    if biases is not None:
        out += np.concatenate([b.data.reshape(-1) for b in biases])[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    bounds = np.cumsum([0] + couts)

    def grad_fn(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
        grads: list[np.ndarray | None] = [None]
        if x.requires_grad:
            if pointwise:
                grads[0] = (wmat.T @ g2).reshape(cin, n, h, w).transpose(1, 0, 2, 3)
            elif stride == 1 and padding <= k - 1:
                # full correlation of g with the flipped, transposed kernel;
                # unfolding g is much cheaper than scattering columns back
                wflip = wdata[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
                gx = wflip @ _im2col(g, k, 1, k - 1 - padding, h, w)
                grads[0] = gx.reshape(cin, n, h, w).transpose(1, 0, 2, 3)
            else:
                grads[0] = _col2im(wmat.T @ g2, x.shape, k, stride, padding, ho, wo)
        need_w = any(wt.requires_grad for wt in weights)
        gw_all = (g2 @ cols.T).reshape(cout, cin, k, k) if need_w else None
        for i, wt in enumerate(weights):
            grads.append(None if gw_all is None else gw_all[bounds[i] : bounds[i + 1]].reshape(wt.shape))
        if biases is not None:
            gb_all = g2.sum(axis=1)
            for i, b in enumerate(biases):
                grads.append(gb_all[bounds[i] : bounds[i + 1]].reshape(b.shape))
        return grads

    parents = (x, *weights, *(biases or ()))
    return _make(out, parents, grad_fn)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of concat: slice the channel axis into consecutive pieces."""
    if sum(sizes) != x.shape[1]:
        raise DimensionError(f"split: sizes {list(sizes)} do not add up to axis 1 ({x.shape[1]})")
    out = []
    start = 0
    for size in sizes:
        stop = start + size

        def grad_fn(g, start=start, stop=stop):
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            return (full,)

        out.append(_make(x.data[:, start:stop], (x,), grad_fn))
        start = stop
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Periodic shuffle (N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle: axis 1 ({c}) not divisible by {r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def grad_fn(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _make(out, (x,), grad_fn)


def zero_insert(x: Tensor, stride: int) -> Tensor:
    """Insert stride-1 zeros between samples: (H, W) -> ((H-1)*s+1, (W-1)*s+1)."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.data.dtype)
    out[:, :, ::stride, ::stride] = x.data
    return _make(out, (x,), lambda g: (g[:, :, ::stride, ::stride],))


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """mean(|pred - target|); the subgradient at ties is 0."""
    _check_same_shape(pred, target, "mae_loss")
    diff = pred.data - target.data
    count = diff.size
    out = np.array(np.abs(diff).sum() / count)

    def grad_fn(g):
        return (np.sign(diff) * (g / count), None)

    return _make(out, (pred, target), grad_fn)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) with constant weights; a smooth probe objective."""
    out = np.array((x.data * weights).sum())
    return _make(out, (x,), lambda g: (weights * g,))


# ------------------------------------------------------------- optimization


class Adam:
    """Adam with bias correction. Gradients are left untouched by ``step``."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise UsageError(f"adam_step: parameter {p.name or p.shape} has no grad")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def lr_schedule(epoch: int, base_lr: float, period: int = 200) -> float:
    """Step decay: halve the rate every ``period`` epochs."""
    if epoch < 0:
        raise UsageError("epoch must be >= 0")
    return base_lr / 2 ** (epoch // period)


# ------------------------------------------------------------ grad checking


def grad_check(
    build_loss: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-6,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic grads with central finite differences.

    Returns the max relative error per parameter tensor, where the error of a
    tensor is max|analytic - numeric| scaled by the larger of the two grads'
    max magnitudes (over the probed elements). With ``sample`` set, at most
    that many elements per tensor are probed, chosen by ``rng``.
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    backward(loss)
    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, sample, replace=False))
        analytic = np.zeros(flat.size) if p.grad is None else p.grad.reshape(-1)[idx].copy()
        analytic = analytic[: idx.size]
        numeric = np.zeros(idx.size)
        with no_grad():
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = build_loss().item()
                flat[i] = orig - eps
                down = build_loss().item()
                flat[i] = orig
                numeric[n] = (up - down) / (2 * eps)
        denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        err = np.abs(analytic - numeric).max(initial=0.0)
        report[name] = 0.0 if denom == 0.0 else float(err / denom)
    for p in params.values():
        p.grad = None
    return report


def first_nonfinite(named: Iterable[tuple[str, np.ndarray]]) -> str | None:
    for name, arr in named:
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


def kaiming_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)
