import numpy as np
import pytest

from earfit.images import linear_to_srgb, read_png, srgb_to_linear, write_png


def test_srgb_linear_round_trip():
    x = np.linspace(0.0, 1.0, 257)
    np.testing.assert_allclose(srgb_to_linear(linear_to_srgb(x)), x, atol=1e-12)


def test_known_anchor_values():
    assert linear_to_srgb(np.array(0.0)) == 0.0
    assert linear_to_srgb(np.array(1.0)) == pytest.approx(1.0, abs=1e-12)
    # the piecewise linear segment
    assert linear_to_srgb(np.array(0.001)) == pytest.approx(0.01292, abs=1e-12)


def test_png_round_trip_quantization(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(20, 30, 3))
    path = tmp_path / "x.png"
    write_png(path, img)
    back = read_png(path)
    assert back.shape == img.shape
    # one 8-bit sRGB step is at most ~0.009 in linear space near white
    assert np.abs(back - img).max() < 0.01


def test_png_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(16, 16, 3))
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_png(a, img)
    write_png(b, img)
    assert a.read_bytes() == b.read_bytes()


def test_write_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_png(tmp_path / "x.png", np.zeros((4, 4)))
