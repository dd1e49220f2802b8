"""Tests for PFM I/O and PNG export."""

import numpy as np
import pytest
from PIL import Image

from relightkit.pfm import PfmError, export_png, read_pfm, write_pfm


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.standard_normal((8, 8, 3)).astype(np.float32)
    p = tmp_path / "x.pfm"
    write_pfm(p, img)
    np.testing.assert_array_equal(read_pfm(p), img)


def test_round_trip_single_channel(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(3, 4)
    p = tmp_path / "m.pfm"
    write_pfm(p, img)
    back = read_pfm(p)
    assert back.shape == (3, 4)
    np.testing.assert_array_equal(back, img)


def test_header_bytes_exact(tmp_path):
    p = tmp_path / "h.pfm"
    write_pfm(p, np.zeros((8, 8, 3), dtype=np.float32))
    raw = p.read_bytes()
    assert raw.startswith(b"PF\n8 8\n-1.0\n")
    assert len(raw) == len(b"PF\n8 8\n-1.0\n") + 8 * 8 * 3 * 4


def test_scanlines_stored_bottom_up(tmp_path):
    img = np.zeros((2, 1, 3), dtype=np.float32)
    img[0] = 1.0  # top row in memory
    p = tmp_path / "r.pfm"
    write_pfm(p, img)
    raw = p.read_bytes()
    pixels = np.frombuffer(raw[len(b"Pf\n1 2\n-1.0\n") :], dtype="<f4")
    # first stored scanline is the bottom image row (all zeros)
    np.testing.assert_array_equal(pixels[:3], 0.0)
    np.testing.assert_array_equal(pixels[3:], 1.0)


def test_positive_scale_means_big_endian(tmp_path):
    data = np.array([1.5], dtype=">f4")
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n1 1\n1.0\n" + data.tobytes())
    np.testing.assert_array_equal(read_pfm(p), [[1.5]])


def test_scale_magnitude_multiplies_values(tmp_path):
    data = np.array([2.0], dtype="<f4")
    p = tmp_path / "sc.pfm"
    p.write_bytes(b"Pf\n1 1\n-0.5\n" + data.tobytes())
    np.testing.assert_allclose(read_pfm(p), [[1.0]])


def test_truncated_data_names_byte_offset(tmp_path):
    p = tmp_path / "t.pfm"
    write_pfm(p, np.ones((4, 4, 3), dtype=np.float32))
    whole = p.read_bytes()
    p.write_bytes(whole[:-8])
    with pytest.raises(PfmError, match=r"truncated pixel data at byte \d+"):
        read_pfm(p)


def test_header_errors(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P6\n1 1\n-1.0\n" + b"\0" * 4)
    with pytest.raises(PfmError, match="bad magic"):
        read_pfm(p)
    p.write_bytes(b"Pf\n1 x\n-1.0\n" + b"\0" * 4)
    with pytest.raises(PfmError, match="bad header field"):
        read_pfm(p)
    p.write_bytes(b"Pf\n0 1\n-1.0\n")
    with pytest.raises(PfmError, match="bad dimensions"):
        read_pfm(p)
    p.write_bytes(b"Pf\n1 1\n0.0\n" + b"\0" * 4)
    with pytest.raises(PfmError, match="zero scale"):
        read_pfm(p)
    p.write_bytes(b"Pf\n1 ")
    with pytest.raises(PfmError, match="truncated header"):
        read_pfm(p)


def test_write_rejects_bad_arrays(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.array([[np.inf]], dtype=np.float32))


def test_png_gamma_endpoints(tmp_path):
    img = np.array([[0.0, 0.5, 1.0]], dtype=np.float32)
    p = tmp_path / "g.png"
    export_png(p, img)
    vals = np.asarray(Image.open(p))
    # 255 * 0.5**(1/2.2) = 185.97 rounds to 186
    np.testing.assert_array_equal(vals, [[0, 186, 255]])


def test_png_clips_out_of_range(tmp_path):
    img = np.array([[[-3.0, 0.0, 9.0]]], dtype=np.float32)
    p = tmp_path / "c.png"
    export_png(p, img)
    vals = np.asarray(Image.open(p))
    np.testing.assert_array_equal(vals[0, 0], [0, 0, 255])
