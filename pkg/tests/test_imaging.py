import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from condtrans.exceptions import DimensionError
from condtrans.imaging import (
    PatchGrid,
    SplitMix64,
    add_gaussian_noise,
    assemble_patches,
    extract_patches,
    gaussian_noise,
    load_image,
    patch_count,
    psnr,
    save_image,
    ssim,
)


# -- patches -------------------------------------------------------------------


def test_patch_count_formula():
    img = np.zeros((20, 17))
    for p, st in ((3, 1), (5, 2), (8, 8), (4, 3)):
        y, grid = extract_patches(img, p, st)
        assert y.shape == (p * p, patch_count(20, 17, p, st)) == (p * p, grid.n_patches)


def test_non_overlapping_grid():
    y, grid = extract_patches(np.zeros((16, 16)), 8, 8)
    assert y.shape == (64, 4)
    assert grid.origins.tolist() == [[0, 0], [0, 8], [8, 0], [8, 8]]


def test_column_major_vectorization():
    img = np.arange(12.0).reshape(3, 4)
    y, _ = extract_patches(img, 2, 1)
    # first patch rows (0,1),(4,5) -> column-major 0,4,1,5
    np.testing.assert_array_equal(y[:, 0], [0, 4, 1, 5])
    np.testing.assert_array_equal(y[:, 1], [1, 5, 2, 6])


def test_constant_image_mean_removed():
    y, grid = extract_patches(np.full((10, 10), 7.0), 4, 2, subtract_mean=True)
    assert np.all(y == 0) and np.all(grid.means == 7.0)


def test_desk_dataset_size(camera):
    ys = [extract_patches(camera, 8, 8, subtract_mean=True)[0] for _ in range(3)]
    assert np.hstack(ys).shape == (64, 12288)


@pytest.mark.parametrize("p,stride", [(11, 1), (8, 8), (5, 3), (4, 4), (6, 5)])
def test_round_trip(rng, p, stride):
    img = rng.uniform(0, 255, (37, 29))
    y, grid = extract_patches(img, p, stride, subtract_mean=True)
    out = assemble_patches(y, grid, fill=img)
    assert np.max(np.abs(out - img)) <= 1e-10


def test_tiling_without_overlap(rng):
    img = rng.uniform(0, 255, (16, 24))
    y, grid = extract_patches(img, 8, 8)
    y2 = y + np.arange(y.shape[1])[None, :]
    out = assemble_patches(y2, grid)
    np.testing.assert_allclose(out[:8, :8], img[:8, :8])
    np.testing.assert_allclose(out[8:, 16:], img[8:, 16:] + 5)


def test_overlap_is_averaged():
    grid = PatchGrid(2, 1, (2, 3), np.array([[0, 0], [0, 1]]), np.zeros(2))
    patches = np.stack([np.full(4, 1.0), np.full(4, 3.0)], axis=1)
    out = assemble_patches(patches, grid)
    np.testing.assert_allclose(out, [[1, 2, 3], [1, 2, 3]])


def test_uncovered_pixels_use_fill():
    img = np.arange(25.0).reshape(5, 5)
    y, grid = extract_patches(img, 2, 2)
    out = assemble_patches(y, grid, fill=img)
    np.testing.assert_array_equal(out, img)
    assert np.all(assemble_patches(y, grid)[4] == 0)


def test_extract_errors():
    with pytest.raises(ValueError):
        extract_patches(np.zeros((4, 4)), 5)
    with pytest.raises(ValueError):
        extract_patches(np.zeros((4, 4)), 2, 0)
    with pytest.raises(DimensionError):
        extract_patches(np.zeros(4), 2)
    y, grid = extract_patches(np.zeros((4, 4)), 2)
    with pytest.raises(DimensionError):
        assemble_patches(y[:, :-1], grid)


# -- noise ---------------------------------------------------------------------


def test_splitmix64_reference_values():
    # published reference outputs of the generator
    assert [int(v) for v in SplitMix64(0).next_uint64(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    assert [int(v) for v in SplitMix64(1234567).next_uint64(2)] == [
        6457827717110365317, 3203168211198807973]


def test_splitmix64_counter_blocks_concatenate():
    g = SplitMix64(99)
    a = np.concatenate([g.next_uint64(5), g.next_uint64(7)])
    np.testing.assert_array_equal(a, SplitMix64(99).next_uint64(12))


def test_gaussian_noise_is_stream_consistent():
    big = gaussian_noise((1000,), 5)
    np.testing.assert_array_equal(gaussian_noise((37,), 5), big[:37])


def test_gaussian_noise_polar_first_pair():
    # replay the polar method by hand on the first accepted pair
    u = SplitMix64(3).uniform(400).reshape(-1, 2)
    a = 2 * u - 1
    q = np.sum(a * a, axis=1)
    k = int(np.flatnonzero((q > 0) & (q < 1))[0])
    f = math.sqrt(-2 * math.log(q[k]) / q[k])
    np.testing.assert_allclose(gaussian_noise((2,), 3), a[k] * f, rtol=0, atol=0)


def test_noise_statistics_and_independence():
    a = gaussian_noise((512, 512), 1)
    b = gaussian_noise((512, 512), 2)
    assert abs(a.mean()) < 0.01
    assert abs(20 * a.std() - 20) < 0.02 * 20
    assert abs(np.corrcoef(a.ravel(), b.ravel())[0, 1]) < 0.05


def test_add_noise(rng):
    img = rng.uniform(0, 255, (8, 8))
    np.testing.assert_array_equal(add_gaussian_noise(img, 0, 1), img)
    np.testing.assert_array_equal(add_gaussian_noise(img, 10, 4), add_gaussian_noise(img, 10, 4))
    with pytest.raises(ValueError):
        add_gaussian_noise(img, -1, 0)
    # no clipping
    assert add_gaussian_noise(np.full((64, 64), 255.0), 50, 0).max() > 255


# -- metrics -------------------------------------------------------------------


def test_psnr_identities(rng):
    a = rng.uniform(0, 255, (16, 16))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 255.0)) == pytest.approx(0.0)
    b = rng.uniform(0, 255, (16, 16))
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=255))
    with pytest.raises(DimensionError):
        psnr(a, a[:8])


def test_psnr_of_sigma20_noise(camera):
    noisy = add_gaussian_noise(camera, 20, 0)
    assert abs(psnr(camera, noisy) - 20 * math.log10(255 / 20)) < 0.2


def test_ssim_identities(rng, camera):
    a = camera[:64, :64]
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, 255 - a) < 1
    b = add_gaussian_noise(a, 20, 0)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_matches_uniform_window_reference(rng):
    # scikit-image with a uniform odd window and population statistics
    a = rng.uniform(0, 255, (40, 33))
    b = np.clip(a + rng.normal(0, 30, a.shape), 0, 255)
    ref = structural_similarity(a, b, win_size=7, data_range=255, use_sample_covariance=False,
                                gaussian_weights=False)
    assert ssim(a, b, win=7) == pytest.approx(ref, abs=1e-10)


def test_ssim_decreases_with_noise(camera):
    img = camera[128:384, 128:384]
    vals = [ssim(img, add_gaussian_noise(img, s, 7)) for s in (5, 10, 15, 20, 100)]
    assert all(0 < v < 1 for v in vals)
    assert np.all(np.diff(vals) < 0)


# -- file I/O ------------------------------------------------------------------


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (13, 21)).astype(float)
    save_image(img, tmp_path / "a.pgm")
    np.testing.assert_array_equal(load_image(tmp_path / "a.pgm"), img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n21 13\n255\n") and len(raw) == 13 + 13 * 21


def test_pgm_with_comments(tmp_path):
    body = bytes(range(6))
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n3 2\n# depth\n255\n" + body)
    np.testing.assert_array_equal(load_image(tmp_path / "c.pgm"), [[0, 1, 2], [3, 4, 5]])


def test_save_clamps_and_rounds(tmp_path):
    save_image(np.array([[-5.0, 12.4], [12.6, 300.0]]), tmp_path / "x.pgm")
    np.testing.assert_array_equal(load_image(tmp_path / "x.pgm"), [[0, 12], [13, 255]])


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (9, 7)).astype(float)
    save_image(img, tmp_path / "a.png")
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), img)


@pytest.mark.parametrize("data,msg", [
    (b"P2\n2 2\n255\n0 0 0 0", "magic"),
    (b"P5\n2 2\n65535\n" + bytes(8), "bit depth"),
    (b"P5\n2 2\n255\n" + bytes(3), "truncated"),
    (b"P5\nx 2\n255\n" + bytes(4), "malformed"),
])
def test_bad_pgm(tmp_path, data, msg):
    (tmp_path / "bad.pgm").write_bytes(data)
    with pytest.raises(ValueError, match=msg):
        load_image(tmp_path / "bad.pgm")
