import numpy as np
import pytest

from visq.imageio import ImageFormatError, read_pgm, read_ppm, write_pgm, write_ppm


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img)


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(4, 9), dtype=np.uint8)
    path = tmp_path / "x.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)


def test_write_is_byte_deterministic(tmp_path):
    img = np.arange(27, dtype=np.uint8).reshape(3, 3, 3)
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_ppm(a, img)
    write_ppm(b, img)
    assert a.read_bytes() == b.read_bytes()


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x07\x09")
    assert read_pgm(path).tolist() == [[7, 9]]


def test_truncated_pixels_rejected(tmp_path):
    path = tmp_path / "t.ppm"
    path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P3\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(path)


def test_shape_validation_on_write(tmp_path):
    with pytest.raises(ImageFormatError):
        write_ppm(tmp_path / "bad.ppm", np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ImageFormatError):
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2, 3), dtype=np.uint8))
