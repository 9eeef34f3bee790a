"""Readers and writers for Radiance RGBE (.hdr), PFM and tone-mapped PNG images.

All readers return float64 arrays of shape (H, W, 3), rows ordered top-down.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np


class HDRFormatError(ValueError):
    """Raised when an HDR container is malformed or its pixels are unusable."""


# ---------------------------------------------------------------------------
# Radiance RGBE
# ---------------------------------------------------------------------------


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode (..., 4) uint8 RGBE quadruples as (mantissa / 256) * 2**(exponent - 128)."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    mantissa = rgbe[..., :3].astype(np.float64)
    exponent = rgbe[..., 3].astype(np.int64)
    out = np.ldexp(mantissa, (exponent - 136)[..., None])
    out[exponent == 0] = 0.0
    return out


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    peak = rgb.max(axis=-1)
    _, expo = np.frexp(peak)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    ok = peak > 1e-32
    # mantissa byte = floor(c * 256 / 2**e), so that decoding gives c within one ulp of the byte
    scale = np.ldexp(np.ones_like(peak), 8 - expo)
    out[..., :3] = np.where(ok[..., None], np.clip(np.floor(rgb * scale[..., None]), 0, 255), 0).astype(np.uint8)
    out[..., 3] = np.where(ok, np.clip(expo + 128, 0, 255), 0).astype(np.uint8)
    return out


def _read_header(stream: io.BufferedIOBase) -> tuple[int, int]:
    magic = stream.readline()
    if not magic.startswith((b"#?RADIANCE", b"#?RGBE")):
        raise HDRFormatError("not a Radiance file: missing '#?RADIANCE' magic line")
    while True:
        line = stream.readline()
        if not line:
            raise HDRFormatError("unexpected end of file inside header")
        line = line.strip()
        if not line:
            break
        if line.startswith(b"FORMAT=") and line != b"FORMAT=32-bit_rle_rgbe":
            raise HDRFormatError(f"unsupported pixel format {line.decode(errors='replace')!r}")
    res = stream.readline().split()
    if len(res) != 4 or res[0] != b"-Y" or res[2] != b"+X":
        raise HDRFormatError(f"unsupported resolution line {b' '.join(res).decode(errors='replace')!r}")
    try:
        height, width = int(res[1]), int(res[3])
    except ValueError as exc:
        raise HDRFormatError("non-integer image dimensions") from exc
    if height < 1 or width < 1:
        raise HDRFormatError(f"invalid image dimensions {width}x{height}")
    return width, height


def _read_exact(stream, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise HDRFormatError("unexpected end of file inside pixel data")
    return data


def _read_scanline(stream, width: int) -> np.ndarray:
    head = _read_exact(stream, 4)
    if not (8 <= width < 32768 and head[0] == 2 and head[1] == 2 and not head[2] & 0x80):
        rest = _read_exact(stream, 4 * width - 4)
        return np.frombuffer(head + rest, dtype=np.uint8).reshape(width, 4)
    if (head[2] << 8 | head[3]) != width:
        raise HDRFormatError("RLE scanline length does not match image width")
    line = np.empty((4, width), dtype=np.uint8)
    for channel in range(4):
        pos = 0
        while pos < width:
            count = _read_exact(stream, 1)[0]
            if count > 128:
                count -= 128
                if pos + count > width:
                    raise HDRFormatError("RLE run overflows scanline")
                line[channel, pos:pos + count] = _read_exact(stream, 1)[0]
            else:
                if count == 0 or pos + count > width:
                    raise HDRFormatError("bad RLE literal count")
                line[channel, pos:pos + count] = np.frombuffer(_read_exact(stream, count), dtype=np.uint8)
            pos += count
    return line.T.copy()


def read_rgbe(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        width, height = _read_header(f)
        raw = np.stack([_read_scanline(f, width) for _ in range(height)])
    return rgbe_to_float(raw)


def _rle_encode_channel(values: np.ndarray) -> bytes:
    out = bytearray()
    n = len(values)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and values[i + run] == values[i]:
            run += 1
        if run >= 3:
            out += bytes((128 + run, values[i]))
            i += run
            continue
        start = i
        while i < n and i - start < 128:
            if i + 2 < n and values[i] == values[i + 1] == values[i + 2]:
                break
            i += 1
        out.append(i - start)
        out += bytes(values[start:i])
    return bytes(out)


def write_rgbe(path: str | Path, rgb: np.ndarray, rle: bool = True) -> None:
    rgb = np.asarray(rgb, dtype=np.float64)
    height, width = rgb.shape[:2]
    quads = float_to_rgbe(rgb)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {height} +X {width}\n".encode())
        for row in quads:
            if rle and 8 <= width < 32768:
                f.write(bytes((2, 2, width >> 8, width & 0xFF)))
                for channel in range(4):
                    f.write(_rle_encode_channel(row[:, channel]))
            else:
                f.write(row.tobytes())


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise HDRFormatError("not a PFM file: expected 'PF' or 'Pf' identifier")
        dims = f.readline().split()
        # some writers put dimensions and scale on one line
        if len(dims) == 3:
            scale_tok = dims.pop()
        elif len(dims) == 2:
            scale_tok = f.readline().strip()
        else:
            raise HDRFormatError("malformed PFM dimension line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(scale_tok)
        except ValueError as exc:
            raise HDRFormatError("malformed PFM header") from exc
        if width < 1 or height < 1 or scale == 0.0:
            raise HDRFormatError(f"invalid PFM header: {width}x{height}, scale {scale}")
        channels = 3 if kind == b"PF" else 1
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        count = width * height * channels
        data = f.read(count * 4)
    if len(data) != count * 4:
        raise HDRFormatError(f"PFM pixel data truncated: expected {count * 4} bytes, got {len(data)}")
    img = np.frombuffer(data, dtype=dtype).astype(np.float64).reshape(height, width, channels)
    img = img[::-1]
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def write_pfm(path: str | Path, rgb: np.ndarray, little_endian: bool = True) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        kind, rgb = b"Pf", rgb[..., None]
    elif rgb.ndim == 3 and rgb.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) array, got shape {rgb.shape}")
    height, width = rgb.shape[:2]
    dtype = "<f4" if little_endian else ">f4"
    with open(path, "wb") as f:
        f.write(kind + b"\n" + f"{width} {height}\n".encode())
        f.write(b"-1.0\n" if little_endian else b"1.0\n")
        f.write(np.ascontiguousarray(rgb[::-1], dtype=dtype).tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Dispatch on the file's magic bytes rather than its extension."""
    with open(path, "rb") as f:
        head = f.read(10)
    if head.startswith((b"#?RADIANCE", b"#?RGBE")):
        return read_rgbe(path)
    if head[:2] in (b"PF", b"Pf"):
        return read_pfm(path)
    raise HDRFormatError(f"{path}: unrecognised HDR container (expected Radiance RGBE or PFM)")


def write_png(path: str | Path, img: np.ndarray, exposure: float = 1.0, gamma: float = 2.2) -> None:
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    mapped = np.clip(img * exposure, 0.0, 1.0) ** (1.0 / gamma)
    Image.fromarray(np.round(mapped * 255.0).astype(np.uint8)).save(path)
