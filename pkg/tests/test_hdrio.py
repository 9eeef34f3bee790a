import struct

import numpy as np
import pytest

from relightkit.envmap import EnvironmentMap, EnvironmentMapError, load_hdr
from relightkit.hdrio import (
    HDRFormatError,
    float_to_rgbe,
    read_pfm,
    read_rgbe,
    rgbe_to_float,
    write_pfm,
    write_png,
    write_rgbe,
)


def _rgbe_file(path, width, height, body: bytes):
    path.write_bytes(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n" + f"-Y {height} +X {width}\n".encode() + body)
    return path


@pytest.mark.parametrize(
    "quad, expected",
    [
        # (mantissa / 256) * 2 ** (exponent - 128), worked by hand
        ((128, 128, 128, 129), (1.0, 1.0, 1.0)),
        ((255, 128, 0, 130), (255 / 256 * 4, 2.0, 0.0)),
        ((64, 32, 16, 128), (0.25, 0.125, 0.0625)),
        ((200, 200, 200, 0), (0.0, 0.0, 0.0)),
    ],
)
def test_rgbe_decode_by_hand(quad, expected):
    assert rgbe_to_float(np.array(quad, dtype=np.uint8)).tolist() == list(expected)


def test_rgbe_encode_decode_error_below_one_mantissa_step(rng):
    rgb = rng.uniform(0.0, 50.0, size=(200, 3))
    back = rgbe_to_float(float_to_rgbe(rgb))
    peak = rgb.max(axis=1, keepdims=True)
    assert np.all(back <= rgb + 1e-12)
    assert np.all(rgb - back <= peak / 128.0)


def test_flat_rgbe_file_bit_exact(tmp_path):
    body = bytes([128, 128, 128, 129, 64, 32, 16, 128])
    img = read_rgbe(_rgbe_file(tmp_path / "a.hdr", 2, 1, body))
    assert img.shape == (1, 2, 3)
    assert img[0, 0].tolist() == [1.0, 1.0, 1.0]
    assert img[0, 1].tolist() == [0.25, 0.125, 0.0625]


def test_hand_written_rle_scanline(tmp_path):
    width = 8
    # per channel: run of 8 identical bytes, except G which mixes a literal and a run
    r = bytes([128 + 8, 128])
    g = bytes([3, 10, 20, 30, 128 + 5, 64])
    b = bytes([128 + 8, 0])
    e = bytes([128 + 8, 129])
    body = bytes([2, 2, 0, width]) + r + g + b + e
    img = read_rgbe(_rgbe_file(tmp_path / "rle.hdr", width, 1, body))
    assert img[0, :, 0].tolist() == [1.0] * 8
    assert img[0, :, 1].tolist() == [10 / 128, 20 / 128, 30 / 128] + [0.5] * 5
    assert img[0, :, 2].tolist() == [0.0] * 8


@pytest.mark.parametrize("rle", [True, False])
def test_rgbe_write_read_roundtrip(tmp_path, rng, rle):
    rgb = rng.uniform(0.01, 20.0, size=(8, 16, 3))
    rgb[2, 3:9] = 4.0  # long run for the RLE encoder
    path = tmp_path / "rt.hdr"
    write_rgbe(path, rgb, rle=rle)
    assert np.array_equal(read_rgbe(path), rgbe_to_float(float_to_rgbe(rgb)))


def test_rgbe_bad_header(tmp_path):
    (tmp_path / "x.hdr").write_bytes(b"P6\n1 1\n")
    with pytest.raises(HDRFormatError, match="RADIANCE"):
        read_rgbe(tmp_path / "x.hdr")
    (tmp_path / "y.hdr").write_bytes(b"#?RADIANCE\n\n+Y 1 +X 2\n" + bytes(8))
    with pytest.raises(HDRFormatError, match="resolution"):
        read_rgbe(tmp_path / "y.hdr")


def test_rgbe_truncated(tmp_path):
    with pytest.raises(HDRFormatError, match="end of file"):
        read_rgbe(_rgbe_file(tmp_path / "t.hdr", 4, 2, bytes(12)))


def test_pfm_2x1_ones(tmp_path):
    path = tmp_path / "ones.pfm"
    path.write_bytes(b"PF\n2 1\n-1.0\n" + struct.pack("<6f", *[1.0] * 6))
    env = load_hdr(path)
    assert (env.width, env.height) == (2, 1)
    assert np.array_equal(env.radiance, np.ones((1, 2, 3)))


@pytest.mark.parametrize("scale, fmt", [(b"-1.0", "<"), (b"1.0", ">")])
def test_pfm_endianness_and_row_flip(tmp_path, scale, fmt):
    # stored bottom row first: bottom row = 2.0, top row = 5.0
    rows = [2.0] * 12 + [5.0] * 12
    path = tmp_path / "flip.pfm"
    path.write_bytes(b"PF\n4 2\n" + scale + b"\n" + struct.pack(fmt + "24f", *rows))
    img = read_pfm(path)
    assert np.all(img[0] == 5.0) and np.all(img[1] == 2.0)


def test_pfm_grayscale_expands_to_rgb(tmp_path):
    path = tmp_path / "g.pfm"
    path.write_bytes(b"Pf\n2 1\n-1.0\n" + struct.pack("<2f", 0.5, 3.0))
    assert read_pfm(path).tolist() == [[[0.5] * 3, [3.0] * 3]]


def test_pfm_roundtrip(tmp_path, rng):
    img = rng.uniform(0, 10, size=(5, 10, 3)).astype(np.float32)
    for little in (True, False):
        write_pfm(tmp_path / "r.pfm", img, little_endian=little)
        assert np.array_equal(read_pfm(tmp_path / "r.pfm"), img.astype(np.float64))


def test_pfm_truncated(tmp_path):
    (tmp_path / "t.pfm").write_bytes(b"PF\n2 1\n-1.0\n" + bytes(8))
    with pytest.raises(HDRFormatError, match="truncated"):
        read_pfm(tmp_path / "t.pfm")


def test_load_rejects_wrong_aspect(tmp_path):
    write_pfm(tmp_path / "wide.pfm", np.ones((1, 4, 3), dtype=np.float32))
    with pytest.raises(EnvironmentMapError, match="width ≠ 2×height"):
        load_hdr(tmp_path / "wide.pfm")


def test_load_names_first_non_finite_texel(tmp_path):
    img = np.ones((2, 4, 3), dtype=np.float32)
    img[1, 3, 2] = np.nan
    img[1, 2, 0] = np.inf
    write_pfm(tmp_path / "nan.pfm", img)
    with pytest.raises(EnvironmentMapError, match=r"texel \(u=2, v=1\)"):
        load_hdr(tmp_path / "nan.pfm")


def test_load_unknown_container(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"GIF89a")
    with pytest.raises(HDRFormatError, match="unrecognised"):
        load_hdr(tmp_path / "x.bin")


def test_environment_map_rejects_negative():
    rad = np.ones((2, 4, 3))
    rad[0, 1, 1] = -1.0
    with pytest.raises(EnvironmentMapError, match=r"u=1, v=0"):
        EnvironmentMap(rad)


def test_png_writer(tmp_path):
    from PIL import Image

    write_png(tmp_path / "p.png", np.full((2, 3, 3), 0.25), exposure=4.0)
    px = np.asarray(Image.open(tmp_path / "p.png"))
    assert px.shape == (2, 3, 3) and np.all(px == 255)
