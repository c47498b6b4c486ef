import numpy as np
import pytest

from lcrowd.errors import ConfigError
from lcrowd.labeling import HEAD_HEIGHT, CameraModel
from lcrowd.render import (
    Frame,
    RenderSettings,
    add_gaussian_noise,
    background,
    rasterize,
    read_pgm,
    write_pgm,
)


def cam():
    return CameraModel((0.0, 0.0, HEAD_HEIGHT), 0.0, 0.0, 300.0, 320, 240)


def test_empty_flat_frame():
    f = rasterize([], cam(), RenderSettings())
    assert f.pixels.shape == (240, 320)
    assert np.all(f.pixels == 128)


def test_agent_at_center_painted():
    s = RenderSettings(agent_shade=0.2)
    f = rasterize([(0, 5.0, 0.0, 0.3)], cam(), s)
    assert f.pixels[120, 160] == round(0.2 * 255)


def test_deterministic():
    agents = [(i, 4.0 + i, 0.5 * i - 2, 0.3) for i in range(6)]
    s = RenderSettings(background="checker")
    assert rasterize(agents, cam(), s) == rasterize(agents, cam(), s)


def test_pixels_outside_discs_are_background():
    s = RenderSettings(background="grid", base_luminance=0.7)
    f = rasterize([(0, 6.0, 1.0, 0.3), (1, 9.0, -2.0, 0.5)], cam(), s)
    bg = np.rint(background(s) * 255).astype(np.uint8)
    changed = f.pixels != bg
    assert changed.any()
    ys, xs = np.nonzero(changed)
    # every changed pixel sits near one of the two projected heads
    heads = [(160 - 300 * 1.0 / 6.0, 120), (160 + 300 * 2.0 / 9.0, 120)]
    near = np.zeros(len(xs), dtype=bool)
    for (u, v), r in zip(heads, (300 * 0.3 / 6.0, 300 * 0.5 / 9.0)):
        near |= (xs + 0.5 - u) ** 2 + (ys + 0.5 - v) ** 2 <= r * r + 1e-9
    assert near.all()


def test_nearer_agent_drawn_on_top():
    s = RenderSettings(agent_shade=0.1)
    f = rasterize([(0, 5.0, 0.0, 0.3), (1, 10.0, 0.0, 0.3)], cam(), s)
    assert f.pixels[120, 160] == round(0.1 * 255)


def test_resolution_mismatch():
    with pytest.raises(ConfigError):
        rasterize([], cam(), RenderSettings(resolution=(64, 64)))


def test_settings_validation():
    with pytest.raises(ConfigError):
        RenderSettings(noise_std=-1)
    with pytest.raises(ConfigError):
        RenderSettings(base_luminance=1.5)


def test_noise_zero_is_identity():
    f = rasterize([(0, 5.0, 0.0, 0.3)], cam(), RenderSettings())
    assert add_gaussian_noise(f, 0.0, np.random.default_rng(0)) == f


def test_noise_statistics():
    f = Frame(1000, 1000, np.full((1000, 1000), 128, dtype=np.uint8))
    g = add_gaussian_noise(f, 10.0, np.random.default_rng(42))
    px = g.pixels.astype(float)
    assert abs(px.mean() - 128) < 0.1
    assert abs(px.std() - 10) < 0.2


def test_noise_clamps_at_zero():
    f = Frame(64, 64, np.zeros((64, 64), dtype=np.uint8))
    g = add_gaussian_noise(f, 10.0, np.random.default_rng(1))
    assert g.pixels.min() >= 0 and g.pixels.mean() > 0
    assert g.pixels.shape == (64, 64)


def test_noise_seed_dependence():
    f = Frame(64, 64, np.full((64, 64), 100, dtype=np.uint8))
    a = add_gaussian_noise(f, 5.0, np.random.default_rng(1))
    b = add_gaussian_noise(f, 5.0, np.random.default_rng(1))
    c = add_gaussian_noise(f, 5.0, np.random.default_rng(2))
    assert a == b and a != c


def test_negative_std():
    with pytest.raises(ValueError):
        add_gaussian_noise(Frame(16, 16, np.zeros(256)), -1.0, np.random.default_rng(0))


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    f = Frame(40, 30, rng.integers(0, 256, size=(30, 40)))
    path = tmp_path / "frame_000001.pgm"
    write_pgm(f, path)
    assert path.read_bytes().startswith(b"P5\n40 30\n255\n")
    assert read_pgm(path) == f


def test_pgm_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ConfigError):
        read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ConfigError):
        read_pgm(p)
