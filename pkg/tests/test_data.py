import numpy as np
import pytest

from srclique.autograd import UsageError
from srclique.data import (
    DatasetManifest,
    ImageFormatError,
    SamplePair,
    augment,
    bicubic_resize,
    build_pyramid,
    decode_ppm,
    downscale,
    encode_ppm,
    extract_patches,
    load_image,
    postprocess,
    preprocess,
    read_manifest,
    read_means,
    resize_weights,
    save_image,
    to_float,
    to_uint8,
    write_manifest,
)
from srclique.model import DIHEDRAL, dihedral, dihedral_inverse
from srclique.wavelet import dwt2

# ------------------------------------------------------------------------ I/O


def test_red_pixel_ppm():
    img = decode_ppm(b"P6 1 1 255\n" + bytes([255, 0, 0]))
    assert img.shape == (1, 1, 3) and img.tolist() == [[[255, 0, 0]]]


def test_header_comments_are_skipped():
    img = decode_ppm(b"P6\n# made by hand\n2 1\n255\n" + bytes(range(6)))
    assert img.reshape(-1).tolist() == list(range(6))


def test_ppm_round_trip_bit_exact(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "x.ppm"
    save_image(img, path)
    assert load_image(path).tobytes() == img.tobytes()
    save_image(load_image(path), tmp_path / "y.ppm")
    assert (tmp_path / "y.ppm").read_bytes() == path.read_bytes()


def test_png_adapter(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    save_image(img, tmp_path / "x.png")
    np.testing.assert_array_equal(load_image(tmp_path / "x.png"), img)


def test_format_errors_carry_offsets():
    with pytest.raises(ImageFormatError, match="P5.*byte 0"):
        decode_ppm(b"P5 1 1 255\n\x00")
    with pytest.raises(ImageFormatError, match="truncated.*byte 14"):
        decode_ppm(b"P6 2 1 255\n" + bytes(3))
    with pytest.raises(ImageFormatError, match="maxval"):
        decode_ppm(b"P6 1 1 65535\n" + bytes(6))
    with pytest.raises(ImageFormatError, match="height"):
        decode_ppm(b"P6 1 x 255\n")


def test_unknown_file_rejected(tmp_path):
    (tmp_path / "a.bin").write_bytes(b"GIF89a")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "a.bin")


def test_float_conversions():
    img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    x = to_float(img)
    assert x.shape == (3, 2, 2) and x[1, 0, 1] == 4.0
    np.testing.assert_array_equal(to_uint8(x + 0.4), img)
    assert to_uint8(np.full((3, 1, 1), 300.0)).max() == 255


# -------------------------------------------------------------------- bicubic


@pytest.mark.parametrize("n_in,n_out", [(8, 4), (7, 16), (10, 10), (5, 2), (1, 3)])
def test_partition_of_unity(n_in, n_out):
    np.testing.assert_allclose(resize_weights(n_in, n_out).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(bicubic_resize(np.full((3, n_in, n_in), 37.0), n_out, n_out), 37.0, atol=1e-12)


def test_ramp_stays_linear():
    ramp = np.tile(np.arange(64.0) * 1.7 + 3.0, (3, 8, 1))
    out = bicubic_resize(ramp, 4, 32)[0, 0]
    interior = out[4:-4]
    assert np.abs(np.diff(interior, 2)).max() < 1e-9
    # downscaling by 2 with half-pixel centres samples the ramp at 2x + 0.5
    np.testing.assert_allclose(interior, (np.arange(32.0)[4:-4] * 2 + 0.5) * 1.7 + 3.0, atol=1e-9)


def test_upscale_interpolates_at_identity_size():
    x = np.random.default_rng(2).uniform(0, 255, (3, 6, 5))
    np.testing.assert_allclose(bicubic_resize(x, 6, 5), x, atol=1e-12)


def test_cubic_kernel_without_antialias_reference():
    """At 2x upsampling every output lies a quarter pixel from an input centre."""
    w = resize_weights(8, 16)
    a = -0.5

    def near(t):
        return (a + 2) * t**3 - (a + 3) * t**2 + 1

    def far(t):
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a

    # output 8 sits at source coordinate 3.75
    expected = {2: far(1.75), 3: near(0.75), 4: near(0.25), 5: far(1.25)}
    for col, value in expected.items():
        assert w[8, col] == pytest.approx(value, abs=1e-12)
    assert w[8].sum() == pytest.approx(1.0, abs=1e-12)
    assert expected[4] == pytest.approx(0.8671875) and expected[2] == pytest.approx(-0.0234375)


def test_resize_rejects_zero_size():
    with pytest.raises(UsageError):
        bicubic_resize(np.zeros((3, 4, 4)), 0, 4)


# ---------------------------------------------------------------- preprocess


def test_preprocess_modes():
    px = np.full((3, 2, 2), 255.0)
    np.testing.assert_array_equal(preprocess(px, 1), px)
    np.testing.assert_array_equal(preprocess(px, 2), 1.0)
    means = [0.2, 0.4, 0.6]
    x = np.stack([np.full((2, 2), m * 255) for m in means])
    np.testing.assert_allclose(preprocess(x, 3, means), 0.0, atol=1e-15)
    with pytest.raises(UsageError):
        preprocess(px, 5)
    with pytest.raises(UsageError):
        preprocess(px, 3)


def test_mode4_shrinks_ll_only_for_targets():
    x = np.random.default_rng(3).uniform(0, 255, (3, 8, 8))
    means = [0.5, 0.5, 0.5]
    inp, tgt = preprocess(x, 4, means, 4.0), preprocess(x, 4, means, 4.0, target=True)
    np.testing.assert_array_equal(inp, preprocess(x, 3, means))
    q3, q4 = dwt2(inp), dwt2(tgt)
    assert np.std(q3.ll) / np.std(q4.ll) == pytest.approx(4.0, rel=1e-12)
    np.testing.assert_allclose(q4.hh, q3.hh, atol=1e-13)


@pytest.mark.parametrize("mode", [1, 2, 3, 4])
def test_round_trip_within_one_step(mode):
    img = np.random.default_rng(mode).integers(0, 256, (3, 8, 6)).astype(float)
    means = [0.45, 0.44, 0.40]
    for target in (False, True):
        back = postprocess(preprocess(img, mode, means, 4.0, target), mode, means, 4.0, target)
        assert np.abs(np.round(back) - img).max() <= 1.0


# --------------------------------------------------------------------- patches


def test_patch_shapes_for_two_levels():
    hr = np.random.default_rng(4).uniform(0, 255, (3, 128, 128))
    pairs = extract_patches(hr, 2, 32, stride=32)
    assert len(pairs) == 1
    assert [t.shape for t in pairs[0].hr_levels] == [(3, 64, 64), (3, 128, 128)]


def test_tiling_covers_every_pixel_once():
    hr = np.random.default_rng(5).uniform(0, 255, (3, 48, 64))
    lr, (target,) = build_pyramid(hr, 1)
    pairs = extract_patches(hr, 1, 8, stride=8)
    assert len(pairs) == 3 * 4
    stitched, stitched_hr = np.full_like(lr, np.nan), np.full_like(target, np.nan)
    for k, p in enumerate(pairs):
        y, x = divmod(k, 4)
        assert np.isnan(stitched[:, 8 * y : 8 * y + 8, 8 * x : 8 * x + 8]).all()
        stitched[:, 8 * y : 8 * y + 8, 8 * x : 8 * x + 8] = p.lr
        stitched_hr[:, 16 * y : 16 * y + 16, 16 * x : 16 * x + 16] = p.hr_levels[0]
    np.testing.assert_array_equal(stitched, lr)
    np.testing.assert_array_equal(stitched_hr, target)


def test_patch_alignment_oracle():
    hr = np.random.default_rng(6).uniform(0, 255, (3, 64, 64))
    lr, _ = build_pyramid(hr, 1, quantize=False)
    for p in extract_patches(hr, 1, 12, count=5, rng=np.random.default_rng(7), quantize=False):
        down = downscale(p.hr_levels[0], 2, quantize=False)
        matches = [
            (y, x)
            for y in range(lr.shape[1] - 11)
            for x in range(lr.shape[2] - 11)
            if np.allclose(lr[:, y + 3 : y + 9, x + 3 : x + 9], down[:, 3:9, 3:9], atol=1e-9)
        ]
        assert len(matches) == 1
        y, x = matches[0]
        np.testing.assert_array_equal(p.lr, lr[:, y : y + 12, x : x + 12])


def test_random_patches_are_seeded_and_small_images_skipped(caplog):
    hr = np.random.default_rng(8).uniform(0, 255, (3, 40, 40))
    a = extract_patches(hr, 1, 8, count=4, rng=np.random.default_rng(1))
    b = extract_patches(hr, 1, 8, count=4, rng=np.random.default_rng(1))
    assert all(np.array_equal(p.lr, q.lr) for p, q in zip(a, b))
    assert extract_patches(hr, 1, 32, stride=4) == []
    assert "smaller than patch" in caplog.text


def test_sample_pair_checks_level_sizes():
    with pytest.raises(UsageError):
        SamplePair(np.zeros((3, 4, 4)), [np.zeros((3, 8, 9))])


# ------------------------------------------------------------------ augment


def test_augment_identity_and_double_flip():
    s = extract_patches(np.random.default_rng(9).uniform(0, 255, (3, 32, 32)), 1, 8, stride=8)[0]
    same = augment(s, index=0)
    np.testing.assert_array_equal(same.lr, s.lr)
    flip = DIHEDRAL.index((0, True))
    twice = augment(augment(s, index=flip), index=flip)
    np.testing.assert_array_equal(twice.hr_levels[0], s.hr_levels[0])
    with pytest.raises(UsageError):
        augment(SamplePair(np.zeros((3, 2, 4)), [np.zeros((3, 4, 8))]), index=DIHEDRAL.index((1, False)))


@pytest.mark.parametrize("index", range(8))
def test_augment_commutes_with_downscaling(index):
    k, flip = DIHEDRAL[index]
    hr = np.random.default_rng(10).uniform(0, 255, (3, 16, 16))
    a = downscale(dihedral(hr, k, flip), 2, quantize=False)
    b = dihedral(downscale(hr, 2, quantize=False), k, flip)
    np.testing.assert_allclose(a, b, atol=1e-9)
    np.testing.assert_array_equal(dihedral_inverse(dihedral(hr, k, flip), k, flip), hr)


# ----------------------------------------------------------------- manifest


def test_manifest_and_means(tmp_path):
    red = np.zeros((2, 2, 3), np.uint8)
    red[..., 0] = 255
    blue = np.zeros((2, 2, 3), np.uint8)
    blue[..., 2] = 255
    save_image(red, tmp_path / "a.ppm")
    save_image(blue, tmp_path / "b.ppm")
    manifest = DatasetManifest([("a.ppm", "train"), ("b.ppm", "val")])
    (tmp_path / "m.csv").write_text("path,split\na.ppm,train\nb.ppm,val\n")
    manifest = read_manifest(tmp_path / "m.csv")
    assert manifest.paths("val") == [str(tmp_path / "b.ppm")]
    assert manifest.compute_means() == (1.0, 0.0, 0.0)
    write_manifest(manifest, tmp_path / "n.csv")
    assert read_means(tmp_path / "n.means") == (1.0, 0.0, 0.0)
    assert read_manifest(tmp_path / "n.csv").means == (1.0, 0.0, 0.0)
    (tmp_path / "bad.csv").write_text("a.ppm,holdout\n")
    with pytest.raises(UsageError):
        read_manifest(tmp_path / "bad.csv")
