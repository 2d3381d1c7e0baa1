import numpy as np
import pytest

from sqhn.corruption import Corruption, apply, occlusion_box


def test_zero_variance_noise_is_identity(rng):
    x = rng.random((3, 4, 4))
    out, m = apply(x, Corruption("white_noise", var=0.0), rng)
    np.testing.assert_array_equal(out, x)
    assert not m.any()


def test_noise_clamped(rng):
    x = rng.random((1, 16, 16))
    out, m = apply(x, Corruption("white_noise", var=0.8), rng)
    assert out.min() >= 0 and out.max() <= 1 and not m.any()
    assert not np.array_equal(out, x)


def test_full_dropout(rng):
    out, m = apply(np.ones((2, 4, 4)), Corruption("pixel_dropout", frac=1.0), rng)
    assert m.all() and not out.any()


def test_dropout_count_and_channels(rng):
    x = rng.random((3, 5, 5))
    out, m = apply(x, Corruption("pixel_dropout", frac=0.3), rng)
    assert m[0].sum() == int(np.ceil(0.3 * 25))
    assert (m == m[:1]).all()
    np.testing.assert_array_equal(out[~m], x[~m])


def test_right_mask(rng):
    x = rng.random((1, 4, 8))
    _, m = apply(x, Corruption("right_mask", frac=0.75), rng)
    assert not m[..., :2].any() and m[..., 2:].all()


def test_binary_sample_degenerate_and_mean(rng):
    x = np.array([[[1.0, 0.0, 0.3]]])
    samples = np.array([apply(x, Corruption("binary_sample"), rng)[0] for _ in range(10_000)])
    assert (samples[..., 0] == 1).all() and (samples[..., 1] == 0).all()
    p = 0.3
    assert abs(samples[..., 2].mean() - p) < 3 * np.sqrt(p * (1 - p) / 10_000)


@pytest.mark.parametrize("fill", ["black", "color", "noise"])
def test_occlusion_values_only(rng, fill):
    x = np.full((3, 8, 8), 0.5)
    out, m = apply(x, Corruption("occlusion", fill=fill), rng)
    assert not m.any()
    assert out.min() >= 0 and out.max() <= 1


def test_occlusion_box_bounds(rng):
    for _ in range(200):
        top, left, bh, bw = occlusion_box((1, 6, 9), rng)
        assert 1 <= bh <= 6 and 1 <= bw <= 9
        assert top + bh <= 6 and left + bw <= 9
    for frac in (0.1, 0.25, 0.5, 0.9):
        areas = [np.prod(occlusion_box((1, 16, 16), rng, frac)[2:]) / 256 for _ in range(100)]
        assert abs(np.mean(areas) - frac) < 0.05


def test_determinism():
    x = np.random.default_rng(0).random((1, 8, 8))
    for c in (Corruption("white_noise", var=0.2), Corruption("pixel_dropout", frac=0.5), Corruption("occlusion", fill="noise")):
        a = apply(x, c, np.random.default_rng(7))
        b = apply(x, c, np.random.default_rng(7))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("kw", [{"kind": "pixel_dropout", "frac": 1.5}, {"kind": "right_mask"}, {"kind": "blur"}, {"kind": "white_noise", "var": -1}])
def test_invalid(kw):
    with pytest.raises(ValueError):
        Corruption(**kw)


def test_hetero_flag():
    assert Corruption("right_mask", frac=0.5).hetero
    assert not Corruption("occlusion").hetero
