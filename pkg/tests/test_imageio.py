import hashlib

import numpy as np
import pytest

from nldf.geometry import Camera, Pose
from nldf.imageio import encode_ppm, read_frame, read_ppm, write_frame, write_ppm
from nldf.render import Image, render_frame_teacher
from nldf.teacher import default_talking_scene

# sha256 of the P6 bytes of the seed-0 default scene at 32x32, N=64 midpoint,
# drive (0.2, -0.1, 0.4, 0.0). Regenerate only on an intentional format change.
GOLDEN_SHA256 = "17c082c111f92e9a8560006cce3b220304e48298bf12c6f25a7c400877fbff85"


def golden_image():
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 32, 32, 32)
    img, _ = render_frame_teacher(default_talking_scene(0, 4), cam, np.array([0.2, -0.1, 0.4, 0.0]), N=64)
    return img


def test_golden_teacher_ppm_bytes():
    data = encode_ppm(golden_image())
    assert data.startswith(b"P6\n32 32\n255\n")
    assert len(data) == 13 + 32 * 32 * 3
    assert hashlib.sha256(data).hexdigest() == GOLDEN_SHA256


def test_ppm_hand_layout():
    px = np.array([[[0, 0, 0], [1, 1, 1]], [[0.5, 0.25, 1.0], [0.002, 0.998, 0.5]]])
    data = encode_ppm(Image(px))
    assert data == b"P6\n2 2\n255\n" + bytes([0, 0, 0, 255, 255, 255, 128, 64, 255, 1, 254, 128])


def test_ppm_roundtrip_quantized(tmp_path):
    px = np.random.default_rng(0).random((5, 7, 3))
    write_ppm(tmp_path / "a.ppm", Image(px))
    back = read_ppm(tmp_path / "a.ppm")
    assert back.pixels.shape == (5, 7, 3)
    assert np.abs(back.pixels - px).max() <= 0.5 / 255 + 1e-12


def test_png_matches_ppm(tmp_path):
    img = golden_image()
    write_frame(tmp_path / "a.png", img)
    write_frame(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_frame(tmp_path / "a.png").pixels, read_frame(tmp_path / "a.ppm").pixels)


def test_read_rejects_other_formats(tmp_path):
    (tmp_path / "x.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "x.ppm")
