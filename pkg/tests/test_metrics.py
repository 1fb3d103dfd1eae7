import math

import numpy as np
import pytest

from srclique.autograd import DimensionError, UsageError
from srclique.metrics import EvalReport, evaluate, gaussian_window, psnr, rgb_to_y, ssim


def rand_img(seed, h=24, w=20):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


def test_off_by_one_everywhere_is_48_1308_db():
    a = rand_img(0).clip(0, 254)
    b = a + 1
    assert psnr(a, b, "rgb") == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(a, b, "rgb") == pytest.approx(48.1308, abs=1e-3)
    # luma moves by 219/255 of a step when all three channels move by one
    assert psnr(a, b, "y") == pytest.approx(20 * math.log10(255**2 / 219), abs=1e-9)


def test_identical_images():
    a = rand_img(1)
    assert psnr(a, a) == math.inf
    assert ssim(a, a) == 1.0
    assert ssim(a, a, "rgb") == 1.0


def test_psnr_monotone_in_error():
    a = np.full((16, 16, 3), 100, np.uint8)
    values = [psnr(a, a + d, "rgb") for d in (1, 2, 5, 20)]
    assert values == sorted(values, reverse=True) and len(set(values)) == 4


def test_shave_compares_only_interior():
    a = rand_img(2)
    b = a.copy()
    b[:2] = 0
    b[:, -2:] = 255
    assert psnr(a, b, shave=2) == math.inf
    assert psnr(a, b, shave=1) < 100
    with pytest.raises(DimensionError):
        psnr(a, b, shave=10)


def test_y_conversion():
    assert rgb_to_y(np.array([[[0, 0, 0]]]))[0, 0] == pytest.approx(16.0)
    assert rgb_to_y(np.array([[[255, 255, 255]]]))[0, 0] == pytest.approx(235.0)


def test_errors():
    with pytest.raises(DimensionError):
        psnr(rand_img(0), rand_img(0, 24, 21))
    with pytest.raises(UsageError):
        psnr(rand_img(0), rand_img(1), "lab")
    with pytest.raises(DimensionError, match="window"):
        ssim(rand_img(0, 10, 30), rand_img(1, 10, 30))


def direct_ssim(a, b):
    """Loop over every window position with an explicit 2-D Gaussian weight."""
    g = gaussian_window()
    w2 = np.outer(g, g)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - 10):
        for x in range(w - 10):
            pa, pb = a[y : y + 11, x : x + 11], b[y : y + 11, x : x + 11]
            ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
            va = (w2 * (pa - ma) ** 2).sum()
            vb = (w2 * (pb - mb) ** 2).sum()
            cov = (w2 * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_constant_offset_matches_direct_reference():
    a = np.full((16, 16, 3), 80, np.uint8)
    b = a + 10
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    assert ssim(a, b) == pytest.approx(direct_ssim(ya, yb), abs=1e-9)
    mu_a, mu_b = ya[0, 0], yb[0, 0]
    c1 = (0.01 * 255) ** 2
    assert ssim(a, b) == pytest.approx((2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1), abs=1e-9)


def test_ssim_random_pair_matches_direct_reference_and_is_symmetric():
    a, b = rand_img(3, 18, 17), rand_img(4, 18, 17)
    assert ssim(a, b) == pytest.approx(direct_ssim(rgb_to_y(a), rgb_to_y(b)), abs=1e-9)
    for seed in range(5):
        x, y = rand_img(10 + seed), rand_img(20 + seed)
        assert abs(ssim(x, y) - ssim(y, x)) < 1e-12
        assert -1 <= ssim(x, y, "rgb") <= 1


def test_ssim_below_one_for_any_change():
    a = rand_img(5)
    b = a.copy()
    b[12, 10, 1] ^= 1
    assert ssim(a, b) < 1.0


def lr_of(hr):
    return hr[::2, ::2]


def nearest(lr):
    return np.repeat(np.repeat(lr, 2, axis=0), 2, axis=1)


def test_evaluate_identical_pair_and_midpoint():
    hr = nearest(lr_of(rand_img(6)))
    report = evaluate(nearest, [("one", lr_of(hr), hr)], scale=2)
    assert report.rows == [("one", math.inf, 1.0)]
    assert report.to_csv().splitlines()[-1] == "mean,inf,1.000000"
    other = rand_img(7)
    report = evaluate(nearest, [("b", lr_of(other), other), ("a", lr_of(hr), hr.copy())], 2, "rgb", 0)
    assert [r[0] for r in report.rows] == ["a", "b"]
    report.rows[0] = ("a", 30.0, 0.5)
    report.rows[1] = ("b", 40.0, 0.7)
    assert report.mean_psnr == 35.0 and report.mean_ssim == pytest.approx(0.6)


def test_report_csv_is_deterministic_and_records_settings():
    data = [(f"img{k}", lr_of(rand_img(k)), rand_img(k)) for k in range(3)]
    a = evaluate(nearest, data, 2, extra_settings={"model": "nearest"}).to_csv()
    b = evaluate(nearest, list(reversed(data)), 2, extra_settings={"model": "nearest"}).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[:4] == ["# channel_mode = y", "# model = nearest", "# scale = 2", "# shave = 2"]
    assert lines[4] == "name,psnr_db,ssim" and lines[-1].startswith("mean,")
    assert len(lines) == 4 + 1 + 3 + 1


def test_evaluate_errors():
    with pytest.raises(UsageError):
        evaluate(nearest, [], 2)
    with pytest.raises(DimensionError, match="does not match"):
        evaluate(lambda lr: lr, [("x", rand_img(0, 12, 12), rand_img(0, 24, 24))], 2)
    assert math.isnan(EvalReport().mean_psnr)
