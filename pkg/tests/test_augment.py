import math

import numpy as np
import pytest

from oracles import alpha_bar_oracle
from smartloop import augment as aug
from smartloop.errors import ValidationError


def test_schedule_matches_python_oracle():
    s = aug.NoiseSchedule()
    assert s.alpha_bar[0] == 1.0 and len(s.alpha_bar) == 1001
    for t in (1, 2, 100, 600, 999, 1000):
        assert s.alpha_bar[t] == pytest.approx(alpha_bar_oracle(t), rel=1e-12)
    assert np.all(np.diff(s.alpha_bar) < 0)


@pytest.mark.parametrize("t", [1, 100, 600, 1000])
def test_noise_variance(t):
    n = 100_000
    x0 = np.full(n, 0.3)
    x = aug.forward_noise(x0, t, rng_seed=t)
    abar = alpha_bar_oracle(t)
    var = 1.0 - abar
    # sample variance of n normals has standard deviation var * sqrt(2 / (n - 1))
    assert abs(x.var(ddof=1) - var) < 3 * var * math.sqrt(2 / (n - 1))
    assert abs(x.mean() - math.sqrt(abar) * 0.3) < 3 * math.sqrt(var / n)


def test_noise_edges():
    img = np.random.default_rng(0).uniform(-1, 1, size=(4, 4, 3))
    out = aug.forward_noise(img, 0)
    assert np.array_equal(out, img) and out is not img
    with pytest.raises(ValidationError):
        aug.forward_noise(img, 1001)
    np.testing.assert_array_equal(aug.forward_noise(img, 600, rng_seed=3), aug.forward_noise(img, 600, rng_seed=3))


def test_flip():
    img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    once = aug.random_flip(img, 1.0, 0)
    assert np.array_equal(once, img[:, ::-1])
    assert np.array_equal(aug.random_flip(once, 1.0, 1), img)
    assert np.array_equal(aug.random_flip(img, 0.0, 0), img)
    flips = sum(not np.array_equal(aug.random_flip(img, 0.5, s), img) for s in range(4000))
    assert abs(flips / 4000 - 0.5) < 4 * math.sqrt(0.25 / 4000)


def test_erase_area_bounds():
    img = np.zeros((40, 50, 3), dtype=np.uint8)
    for s in range(300):
        out = aug.random_erase(img, 1.0, (0.02, 0.2), s)
        mask = np.any(out != 0, axis=2)
        rows, cols = np.flatnonzero(mask.any(1)), np.flatnonzero(mask.any(0))
        if rows.size == 0:
            continue  # the noise fill can be all zero only with negligible odds
        area = (rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1) / (40 * 50)
        # rounding each side to whole pixels moves the area by at most a few rows
        assert 0.02 * 0.7 <= area <= 0.2 * 1.3
    assert np.array_equal(aug.random_erase(img, 0.0, rng_seed=1), img)


def test_crop_keeps_shape():
    img = np.random.default_rng(0).integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    out = aug.random_crop(img, 1.0, (0.6, 1.0), 2)
    assert out.shape == img.shape
    assert np.array_equal(aug.random_crop(img, 0.0, rng_seed=2), img)


def test_apply_deterministic_and_descriptor_roundtrip():
    img = np.random.default_rng(0).integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    d = aug.AugmentationDescriptor(rng_seed=11)
    a, b = aug.apply(d, img), aug.apply(d, img)
    assert a.dtype == np.uint8 and a.shape == img.shape and np.array_equal(a, b)
    assert not np.array_equal(a, aug.apply(aug.AugmentationDescriptor(rng_seed=12), img))
    assert aug.AugmentationDescriptor.from_dict(d.to_dict()) == d
    crop = aug.AugmentationDescriptor(rng_seed=11, mode="crop")
    assert aug.apply(crop, img).shape == img.shape
    clean = aug.AugmentationDescriptor(noise_step=0, flip_prob=0, erase_prob=0)
    assert np.array_equal(aug.apply(clean, img), img)
    with pytest.raises(ValidationError):
        aug.AugmentationDescriptor(mode="rotate")


def test_image_io(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    aug.save_image(img, tmp_path / "x.png")
    assert np.array_equal(aug.load_image(tmp_path / "x.png"), img)
    assert aug.to_uint8(aug.to_signed(img)).tolist() == img.tolist()
