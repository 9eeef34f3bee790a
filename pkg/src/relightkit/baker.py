"""Phong-lobe pre-filtering of environment maps into diffuse and specular lightmaps.

Every baked texel is an exhaustive quadrature over the environment texels::

    diffuse(n)     = sum_l L(l) * max(0, n.l)     * dw(l)
    specular(k, r) = sum_l L(l) * max(0, r.l)**k  * dw(l)

``oracle_shade`` evaluates the same sums at arbitrary query directions (the
O(N)-per-query reference) and ``sample_lightmap`` replaces it with an O(1)
bilinear lookup into the baked grids.
"""

from __future__ import annotations

import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .envmap import EnvironmentMap, bilinear_lookup, row_solid_angles, texel_directions

DEFAULT_SHININESS = (1, 16, 32, 64)
DEFAULT_RESOLUTION = (128, 64)
BUNDLE_MAGIC = b"LMAP"
BUNDLE_VERSION = 1

# Upper bound on the (queries x env texels) cosine block held in memory at once.
# The block height depends only on the env size, never on the worker count, so the
# arithmetic performed for every output texel is identical for any thread count.
_BLOCK_ELEMENTS = 1 << 15

Lobe = Union[str, int]


class MissingLobeError(LookupError):
    pass


@dataclass(frozen=True)
class LightMapSet:
    """Baked diffuse grid plus one specular grid per shininess exponent.

    Grids are (H, W, 3) lat-long arrays sharing one resolution; ``specular`` maps
    exponent -> grid in strictly increasing exponent order.
    """

    diffuse: np.ndarray
    specular: dict = field(default_factory=dict)

    def __post_init__(self):
        diffuse = np.array(self.diffuse, dtype=np.float64)
        _check_grid(diffuse, "diffuse")
        exps = list(self.specular)
        _check_shininess(exps, allow_empty=True)
        spec = {}
        for k in exps:
            grid = np.array(self.specular[k], dtype=np.float64)
            _check_grid(grid, f"specular({k})")
            if grid.shape != diffuse.shape:
                raise ValueError(f"specular({k}) grid shape {grid.shape} differs from diffuse {diffuse.shape}")
            grid.setflags(write=False)
            spec[int(k)] = grid
        diffuse.setflags(write=False)
        object.__setattr__(self, "diffuse", diffuse)
        object.__setattr__(self, "specular", spec)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.diffuse.shape[1], self.diffuse.shape[0]

    @property
    def shininess(self) -> tuple[int, ...]:
        return tuple(self.specular)

    def grid(self, which: Lobe) -> np.ndarray:
        if which == "diffuse":
            return self.diffuse
        try:
            return self.specular[int(which)]
        except (KeyError, ValueError, TypeError):
            raise MissingLobeError(
                f"no specular lightmap for shininess {which!r}; available: {list(self.specular)}"
            ) from None

    def scaled(self, factor: float) -> LightMapSet:
        return LightMapSet(self.diffuse * factor, {k: g * factor for k, g in self.specular.items()})

    def __len__(self) -> int:
        return 1 + len(self.specular)


def _check_grid(grid: np.ndarray, name: str) -> None:
    if grid.ndim != 3 or grid.shape[2] != 3 or grid.shape[0] < 1 or grid.shape[1] != 2 * grid.shape[0]:
        raise ValueError(f"{name} grid must be (H, 2H, 3), got {grid.shape}")
    if not np.all(np.isfinite(grid)) or np.any(grid < 0):
        raise ValueError(f"{name} grid has negative or non-finite values")


def _check_shininess(exps: Sequence[int], allow_empty: bool = False) -> None:
    if not exps and not allow_empty:
        raise ValueError("shininess set must be nonempty")
    for k in exps:
        if int(k) != k or k < 1:
            raise ValueError(f"shininess exponents must be positive integers, got {k!r}")
    if any(b <= a for a, b in zip(exps, exps[1:])):
        raise ValueError(f"shininess exponents must be strictly increasing, got {list(exps)}")


def _check_resolution(resolution) -> tuple[int, int]:
    width, height = (int(x) for x in resolution)
    if width < 2 or height < 1:
        raise ValueError(f"lightmap resolution must be positive, got {width}x{height}")
    if width != 2 * height:
        raise ValueError(f"lightmap resolution must satisfy W = 2H, got {width}x{height}")
    return width, height


# ---------------------------------------------------------------------------
# Lobe quadrature kernel
# ---------------------------------------------------------------------------


def _env_quadrature(env: EnvironmentMap) -> tuple[np.ndarray, np.ndarray]:
    """Texel directions as a (3, N) array and radiance premultiplied by solid angle, (N, 3)."""
    dirs = texel_directions(env.width, env.height).reshape(-1, 3)
    dw = row_solid_angles(env.width, env.height)
    weighted = (env.radiance * dw[:, None, None]).reshape(-1, 3)
    return np.ascontiguousarray(dirs.T), weighted


class _Scratch:
    """Reusable (rows, N) work buffers; one instance per worker thread."""

    def __init__(self, rows: int, n: int):
        self.shape = (rows, n)
        self.levels: list[np.ndarray] = []  # levels[j] holds cos ** (2 ** j)
        self.acc = np.empty(self.shape)
        self.tmp = np.empty(self.shape)

    def level(self, j: int) -> np.ndarray:
        while len(self.levels) <= j:
            self.levels.append(np.empty(self.shape))
        return self.levels[j]


def _lobe_block(queries: np.ndarray, env_dirs_t: np.ndarray, weighted: np.ndarray, diffuse: bool,
                exponents: Sequence[int], scratch: _Scratch) -> tuple[np.ndarray | None, dict[int, np.ndarray]]:
    m = len(queries)
    cos = scratch.level(0)[:m]
    tmp = scratch.tmp[:m]
    np.multiply(queries[:, 0:1], env_dirs_t[0], out=cos)
    for axis in (1, 2):
        np.multiply(queries[:, axis:axis + 1], env_dirs_t[axis], out=tmp)
        cos += tmp
    np.maximum(cos, 0.0, out=cos)
    d = cos @ weighted if diffuse else None

    spec = {}
    done = 0  # highest square level computed so far
    for k in exponents:
        top = k.bit_length() - 1
        while done < top:
            prev = scratch.level(done)[:m]
            done += 1
            np.multiply(prev, prev, out=scratch.level(done)[:m])
        bits = [j for j in range(top + 1) if k >> j & 1]
        if len(bits) == 1:
            power = scratch.level(bits[0])[:m]
        else:
            power = scratch.acc[:m]
            np.multiply(scratch.level(bits[0])[:m], scratch.level(bits[1])[:m], out=power)
            for j in bits[2:]:
                power *= scratch.level(j)[:m]
        spec[k] = power @ weighted
    return d, spec


def _lobe_sums(queries: np.ndarray, env: EnvironmentMap, diffuse: bool, exponents: Sequence[int],
               workers: int = 1) -> tuple[np.ndarray | None, dict[int, np.ndarray]]:
    """Exhaustive lobe sums for (M, 3) unit queries, blocked over queries."""
    env_dirs_t, weighted = _env_quadrature(env)
    exponents = sorted(int(k) for k in exponents)
    m = len(queries)
    n = env_dirs_t.shape[1]
    block = max(1, _BLOCK_ELEMENTS // n)
    d_out = np.zeros((m, 3)) if diffuse else None
    s_out = {k: np.zeros((m, 3)) for k in exponents}
    local = threading.local()

    def run(start: int) -> None:
        if not hasattr(local, "scratch"):
            local.scratch = _Scratch(min(block, m), n)
        stop = min(start + block, m)
        d, spec = _lobe_block(queries[start:stop], env_dirs_t, weighted, diffuse, exponents, local.scratch)
        if d_out is not None:
            d_out[start:stop] = d
        for k, v in spec.items():
            s_out[k][start:stop] = v

    starts = range(0, m, block)
    if workers <= 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return d_out, s_out


# ---------------------------------------------------------------------------
# Baking
# ---------------------------------------------------------------------------


def bake_diffuse(env: EnvironmentMap, resolution=DEFAULT_RESOLUTION, workers: int = 1) -> np.ndarray:
    width, height = _check_resolution(resolution)
    queries = texel_directions(width, height).reshape(-1, 3)
    d, _ = _lobe_sums(queries, env, True, (), workers)
    return d.reshape(height, width, 3)


def bake_specular(env: EnvironmentMap, shininess: int, resolution=DEFAULT_RESOLUTION,
                  workers: int = 1) -> np.ndarray:
    _check_shininess([shininess])
    width, height = _check_resolution(resolution)
    queries = texel_directions(width, height).reshape(-1, 3)
    _, spec = _lobe_sums(queries, env, False, (int(shininess),), workers)
    return spec[int(shininess)].reshape(height, width, 3)


def bake_all(env: EnvironmentMap, shininess_set: Sequence[int] = DEFAULT_SHININESS,
             resolution=DEFAULT_RESOLUTION, workers: int = 1) -> LightMapSet:
    """Bake the diffuse map and every specular map in one pass over the env."""
    _check_shininess(list(shininess_set))
    exps = [int(k) for k in shininess_set]
    width, height = _check_resolution(resolution)
    queries = texel_directions(width, height).reshape(-1, 3)
    d, spec = _lobe_sums(queries, env, True, exps, workers)
    shape = (height, width, 3)
    return LightMapSet(d.reshape(shape), {k: spec[k].reshape(shape) for k in exps})


def oracle_shade(env: EnvironmentMap, normal, reflected, shininess_set: Sequence[int] = DEFAULT_SHININESS,
                 ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Brute-force diffuse and specular shadings at exact query directions.

    ``normal`` and ``reflected`` are unit vectors of shape (3,) or (..., 3).
    Returns ``(s_d, {k: s_s(k)})`` with RGB arrays of matching leading shape.
    """
    _check_shininess(list(shininess_set), allow_empty=True)
    exps = [int(k) for k in shininess_set]
    n = np.asarray(normal, dtype=np.float64)
    r = np.asarray(reflected, dtype=np.float64)
    d, _ = _lobe_sums(n.reshape(-1, 3), env, True, ())
    _, spec = _lobe_sums(r.reshape(-1, 3), env, False, exps)
    return d.reshape(n.shape), {k: v.reshape(r.shape) for k, v in spec.items()}


def sample_lightmap(lights: LightMapSet, which: Lobe, direction) -> np.ndarray:
    """Bilinear lookup of one lightmap; ``which`` is ``"diffuse"`` or a shininess exponent."""
    return bilinear_lookup(lights.grid(which), direction)


# ---------------------------------------------------------------------------
# Bundle file
# ---------------------------------------------------------------------------


def save_bundle(lights: LightMapSet, path: str | Path) -> None:
    width, height = lights.resolution
    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        f.write(struct.pack("<III", BUNDLE_VERSION, width, height))
        f.write(np.ascontiguousarray(lights.diffuse, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(lights.specular)))
        for k, grid in lights.specular.items():
            f.write(struct.pack("<I", k))
            f.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


class BundleFormatError(ValueError):
    pass


def load_bundle(path: str | Path) -> LightMapSet:
    data = Path(path).read_bytes()
    if data[:4] != BUNDLE_MAGIC:
        raise BundleFormatError(f"{path}: missing LMAP magic")
    if len(data) < 16:
        raise BundleFormatError(f"{path}: truncated header")
    version, width, height = struct.unpack_from("<III", data, 4)
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"{path}: unsupported bundle version {version}")
    grid_bytes = width * height * 3 * 4
    offset = 16

    def take_grid() -> np.ndarray:
        nonlocal offset
        if offset + grid_bytes > len(data):
            raise BundleFormatError(f"{path}: truncated grid data")
        grid = np.frombuffer(data, dtype="<f4", count=width * height * 3, offset=offset)
        offset += grid_bytes
        return grid.astype(np.float64).reshape(height, width, 3)

    def take_u32() -> int:
        nonlocal offset
        if offset + 4 > len(data):
            raise BundleFormatError(f"{path}: truncated bundle")
        (value,) = struct.unpack_from("<I", data, offset)
        offset += 4
        return value

    diffuse = take_grid()
    specular = {}
    for _ in range(take_u32()):
        k = take_u32()
        specular[k] = take_grid()
    if offset != len(data):
        raise BundleFormatError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        return LightMapSet(diffuse, specular)
    except ValueError as exc:
        raise BundleFormatError(f"{path}: {exc}") from exc
