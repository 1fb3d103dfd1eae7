import numpy as np
import pytest

from srclique import autograd as ag
from srclique.autograd import DimensionError, Tensor, UsageError
from srclique.gradcheck import op_cases


def naive_conv(x, w, b, stride, pad):
    """Six nested loops over (n, o, y, x, c, i, j) -- deliberately literal."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for bn in range(n):
        for o in range(co):
            for yy in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for ci in range(c):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[bn, ci, yy * stride + i, xx * stride + j] * w[o, ci, i, j]
                    out[bn, o, yy, xx] = acc
    return out


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 1, 0), (3, 2, 1), (1, 1, 0), (5, 1, 2), (4, 1, 2)])
def test_conv_matches_loop_reference(k, stride, pad):
    rng = np.random.default_rng(k * 10 + stride + pad)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv_box_sum():
    out = ag.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 3, 6, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    np.testing.assert_array_equal(ag.conv2d(Tensor(x), Tensor(w), padding=1).data, x)


def test_conv_errors_name_axis():
    with pytest.raises(DimensionError, match="axis 1"):
        ag.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(DimensionError, match="axis 2"):
        ag.conv2d(Tensor(np.zeros((1, 3, 2, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_multi_equals_separate_convs():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    ws = [Tensor(rng.standard_normal((co, 3, 3, 3))) for co in (2, 4)]
    bs = [Tensor(rng.standard_normal(co)) for co in (2, 4)]
    fused = ag.conv2d_multi(x, ws, bs, 1, 1).data
    separate = np.concatenate([ag.conv2d(x, w, b, 1, 1).data for w, b in zip(ws, bs)], axis=1)
    np.testing.assert_allclose(fused, separate, atol=1e-13)


def test_float32_conv_close_to_float64():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 7, 7))
    w = rng.standard_normal((3, 4, 3, 3))
    hi = ag.conv2d(Tensor(x), Tensor(w), padding=1).data
    lo = ag.conv2d(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)), padding=1).data
    assert lo.dtype == np.float32
    np.testing.assert_allclose(lo, hi, atol=1e-4)


def test_prelu_values_and_slope_gradient():
    x = Tensor(np.array([2.0, -2.0]).reshape(1, 2, 1, 1), requires_grad=True)
    a = Tensor(np.full(2, 0.25), requires_grad=True)
    y = ag.prelu(x, a)
    np.testing.assert_array_equal(y.data.ravel(), [2.0, -0.5])
    ag.backward(ag.weighted_sum(y, np.ones((1, 2, 1, 1))))
    np.testing.assert_array_equal(a.grad, [0.0, -2.0])
    np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.25])
    with pytest.raises(DimensionError):
        ag.prelu(x, Tensor(np.ones(3)))


def test_concat_shapes_and_errors():
    a, b = Tensor(np.zeros((2, 3, 8, 8))), Tensor(np.ones((2, 5, 8, 8)))
    assert ag.concat([a, b]).shape == (2, 8, 8, 8)
    np.testing.assert_array_equal(ag.concat([b]).data, b.data)
    with pytest.raises(DimensionError):
        ag.concat([a, Tensor(np.zeros((2, 1, 4, 8)))])


def test_add_identities():
    a = Tensor(np.random.default_rng(3).standard_normal((1, 2, 4, 4)))
    np.testing.assert_array_equal(ag.add(a, Tensor(np.zeros(a.shape))).data, a.data)
    assert not ag.add(a, ag.scale(a, -1.0)).data.any()
    with pytest.raises(DimensionError):
        ag.add(a, Tensor(np.zeros((1, 2, 4, 3))))


def test_mae_values_and_tie_subgradient():
    p = Tensor(np.full((1, 1, 2, 2), 1.5), requires_grad=True)
    assert ag.mae_loss(p, Tensor(np.full((1, 1, 2, 2), 1.0))).item() == 0.5
    loss = ag.mae_loss(p, Tensor(p.data.copy()))
    assert loss.item() == 0.0
    ag.backward(loss)
    assert not p.grad.any()


def test_pixel_shuffle_interleaving():
    x = np.arange(4, dtype=float).reshape(1, 4, 1, 1) * np.ones((1, 4, 2, 2))
    out = ag.pixel_shuffle(Tensor(x), 2).data[0, 0]
    np.testing.assert_array_equal(out, [[0, 1, 0, 1], [2, 3, 2, 3], [0, 1, 0, 1], [2, 3, 2, 3]])


def test_zero_insert_layout():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    np.testing.assert_array_equal(ag.zero_insert(x, 2).data[0, 0], [[0, 0, 1], [0, 0, 0], [2, 0, 3]])


@pytest.mark.parametrize("name", sorted(op_cases(np.random.default_rng(0))))
def test_every_op_passes_gradcheck(name):
    loss, params = op_cases(np.random.default_rng(0))[name]
    report = ag.grad_check(loss, params)
    assert max(report.values()) < 1e-6, report


def test_gradcheck_exact_on_linear_map():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 3, 3))
    w = Tensor(rng.standard_normal((1, 2, 1, 1)), requires_grad=True)
    report = ag.grad_check(lambda: ag.weighted_sum(ag.conv2d(Tensor(x), w), np.ones((1, 1, 3, 3))), {"w": w})
    assert report["w"] < 1e-8


def test_backward_accumulates_and_rejects_non_scalar():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ag.backward(ag.weighted_sum(ag.add(x, x), np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(x.grad, 2.0)
    ag.backward(ag.weighted_sum(x, np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(x.grad, 3.0)
    with pytest.raises(UsageError):
        ag.backward(ag.add(x, x))


def test_backward_is_bit_reproducible():
    def grads():
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        ag.backward(ag.mae_loss(ag.conv2d(x, w, padding=1), Tensor(rng.standard_normal((2, 4, 6, 6)))))
        return w.grad

    assert grads().tobytes() == grads().tobytes()


def test_no_grad_records_nothing():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with ag.no_grad():
        y = ag.add(x, x)
    assert not y.requires_grad


def test_adam_first_step_is_lr_sized():
    p = Tensor(np.array([0.3]), requires_grad=True)
    opt = ag.Adam([p], lr=1e-5)
    p.grad = np.array([-7.0])
    opt.step()
    assert abs((p.data[0] - 0.3) - 1e-5) < 1e-9


def test_adam_zero_gradient_leaves_parameter():
    p = Tensor(np.array([0.3]), requires_grad=True)
    opt = ag.Adam([p], lr=1e-3)
    p.grad = np.array([0.0])
    opt.step()
    assert p.data[0] == 0.3


def test_adam_matches_scalar_reference():
    lr, b1, b2, eps, g = 1e-2, 0.9, 0.999, 1e-8, 0.37
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = ag.Adam([p], lr=lr)
    theta, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        p.grad = np.array([g])
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert abs(p.data[0] - theta) < 1e-12


def test_adam_requires_grads():
    p = Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(UsageError):
        ag.Adam([p]).step()


@pytest.mark.parametrize("epoch,expected", [(0, 1e-5), (199, 1e-5), (200, 5e-6), (399, 5e-6), (400, 2.5e-6)])
def test_lr_schedule(epoch, expected):
    assert ag.lr_schedule(epoch, 1e-5) == pytest.approx(expected, rel=1e-15)


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(UsageError):
        ag.lr_schedule(-1, 1e-3)
