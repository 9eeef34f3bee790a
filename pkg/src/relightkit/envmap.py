"""Equirectangular environment maps and their direction/texel geometry.

Conventions: +y is up. Row ``v`` spans polar angle ``[v*pi/H, (v+1)*pi/H]``
measured from +y, column ``u`` spans azimuth ``[2*pi*u/W, 2*pi*(u+1)/W]``, and a
direction is ``(sin(theta) cos(phi), cos(theta), sin(theta) sin(phi))``.

Continuous texel coordinates put texel ``(u, v)`` on ``[u, u+1) x [v, v+1)``, so
its center sits at ``(u + 0.5, v + 0.5)`` and the poles lie on ``v = 0`` and
``v = H``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hdrio import HDRFormatError, read_image, write_pfm


class EnvironmentMapError(HDRFormatError):
    """An environment map violates its invariants (shape, aspect, finiteness)."""


def _first_bad_texel(mask: np.ndarray) -> tuple[int, int]:
    v, u = np.argwhere(mask)[0][:2]
    return int(u), int(v)


@dataclass(frozen=True)
class EnvironmentMap:
    """Immutable lat-long HDR radiance map, ``radiance`` has shape (H, W, 3)."""

    radiance: np.ndarray

    def __post_init__(self):
        rad = np.array(self.radiance, dtype=np.float64, copy=True)
        if rad.ndim != 3 or rad.shape[2] != 3:
            raise EnvironmentMapError(f"radiance must have shape (H, W, 3), got {rad.shape}")
        height, width = rad.shape[:2]
        if height < 1 or width < 2:
            raise EnvironmentMapError(f"map too small: {width}x{height}")
        if width != 2 * height:
            raise EnvironmentMapError(f"width ≠ 2×height ({width}x{height})")
        bad = ~np.isfinite(rad)
        if bad.any():
            u, v = _first_bad_texel(bad)
            raise EnvironmentMapError(f"non-finite radiance at texel (u={u}, v={v})")
        neg = rad < 0
        if neg.any():
            u, v = _first_bad_texel(neg)
            raise EnvironmentMapError(f"negative radiance at texel (u={u}, v={v})")
        rad.setflags(write=False)
        object.__setattr__(self, "radiance", rad)

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def texel_count(self) -> int:
        return self.width * self.height

    @classmethod
    def constant(cls, value=1.0, height: int = 32) -> EnvironmentMap:
        rgb = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.broadcast_to(rgb, (height, 2 * height, 3)))

    def scaled(self, factor: float) -> EnvironmentMap:
        return EnvironmentMap(self.radiance * factor)

    def directions(self) -> np.ndarray:
        return texel_directions(self.width, self.height)

    def solid_angles(self) -> np.ndarray:
        """Per-texel solid angle broadcast to (H, W)."""
        rows = row_solid_angles(self.width, self.height)
        return np.broadcast_to(rows[:, None], (self.height, self.width))

    def rotated(self, rotation: np.ndarray) -> EnvironmentMap:
        return rotate_environment(self, rotation)

    def save_pfm(self, path: str | Path) -> None:
        write_pfm(path, self.radiance)


def load_hdr(path: str | Path) -> EnvironmentMap:
    """Load a Radiance RGBE or PFM file as a linear-radiance environment map."""
    return EnvironmentMap(read_image(path))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _angles_to_direction(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(st * np.cos(phi), np.cos(theta), st * np.sin(phi)), axis=-1)


def texel_to_direction(u, v, env: EnvironmentMap) -> np.ndarray:
    """Unit direction through the center of texel (u, v); accepts integer arrays."""
    u = np.asarray(u)
    v = np.asarray(v)
    if np.any((u < 0) | (u >= env.width)) or np.any((v < 0) | (v >= env.height)):
        raise IndexError(f"texel ({u}, {v}) outside {env.width}x{env.height} map")
    return _center_direction(u, v, env.width, env.height)


def _center_direction(u, v, width: int, height: int) -> np.ndarray:
    theta = (np.asarray(v, dtype=np.float64) + 0.5) * np.pi / height
    phi = (np.asarray(u, dtype=np.float64) + 0.5) * 2.0 * np.pi / width
    return _angles_to_direction(theta, phi)


def texel_directions(width: int, height: int) -> np.ndarray:
    """Center directions of every texel of a ``width x height`` grid, shape (H, W, 3)."""
    v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return _center_direction(u, v, width, height)


def direction_to_texel(direction, env_or_size) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) coordinates of unit direction(s).

    ``u`` wraps into ``[0, W)``; ``v`` is clamped to ``[0, H]``. ``env_or_size`` is
    an EnvironmentMap or a ``(width, height)`` pair.
    """
    width, height = _size(env_or_size)
    d = np.asarray(direction, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.arctan2(d[..., 2], d[..., 0])
    u = np.mod(phi * (width / (2.0 * np.pi)), width)
    # mod can round up to exactly width for phi slightly below 0
    u = np.where(u >= width, 0.0, u)
    v = np.clip(theta * (height / np.pi), 0.0, float(height))
    return u, v


def _size(env_or_size) -> tuple[int, int]:
    if isinstance(env_or_size, EnvironmentMap):
        return env_or_size.width, env_or_size.height
    width, height = env_or_size
    return int(width), int(height)


def row_solid_angles(width: int, height: int) -> np.ndarray:
    v = np.arange(height, dtype=np.float64)
    return (2.0 * np.pi / width) * (np.cos(v * np.pi / height) - np.cos((v + 1.0) * np.pi / height))


def texel_solid_angle(v, env: EnvironmentMap):
    """Exact solid angle of any texel in row ``v`` (steradians)."""
    v = np.asarray(v)
    if np.any((v < 0) | (v >= env.height)):
        raise IndexError(f"row {v} outside map of height {env.height}")
    vf = v.astype(np.float64)
    h = env.height
    return (2.0 * np.pi / env.width) * (np.cos(vf * np.pi / h) - np.cos((vf + 1.0) * np.pi / h))


def bilinear_lookup(grid: np.ndarray, direction) -> np.ndarray:
    """Bilinearly sample an (H, W, C) lat-long grid at unit direction(s).

    Azimuth wraps periodically; rows clamp at the poles.
    """
    height, width = grid.shape[:2]
    u, v = direction_to_texel(direction, (width, height))
    x = u - 0.5
    y = np.clip(v - 0.5, 0.0, height - 1.0)
    x0 = np.floor(x)
    y0 = np.minimum(np.floor(y), height - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.intp) % width
    x1 = (x0 + 1) % width
    y0 = y0.astype(np.intp)
    y1 = np.minimum(y0 + 1, height - 1)
    top = grid[y0, x0] * (1.0 - fx) + grid[y0, x1] * fx
    bottom = grid[y1, x0] * (1.0 - fx) + grid[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def rotation_permutes_texels(rotation: np.ndarray, width: int, height: int, atol: float = 1e-9) -> bool:
    try:
        _texel_permutation(rotation, width, height, atol)
    except ValueError:
        return False
    return True


def _texel_permutation(rotation: np.ndarray, width: int, height: int, atol: float = 1e-9):
    rot = np.asarray(rotation, dtype=np.float64)
    dirs = texel_directions(width, height)
    # texel of the rotated map at direction l takes its value from direction R^T l
    src = dirs @ rot
    u, v = direction_to_texel(src, (width, height))
    ui = np.floor(u).astype(np.intp) % width
    vi = np.minimum(np.floor(v).astype(np.intp), height - 1)
    if not np.allclose(_center_direction(ui, vi, width, height), src, atol=atol):
        raise ValueError("rotation does not map texel centers onto texel centers")
    return vi, ui


def rotate_environment(env: EnvironmentMap, rotation: np.ndarray) -> EnvironmentMap:
    """Environment lit by ``rotation`` applied to ``env``: ``L'(l) = L(R^T l)``.

    Only rotations that permute texel centers exactly are accepted (for a lat-long
    map: turns about +y by multiples of ``2*pi/W``), so the result is lossless.
    """
    vi, ui = _texel_permutation(rotation, env.width, env.height)
    return EnvironmentMap(env.radiance[vi, ui])


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
