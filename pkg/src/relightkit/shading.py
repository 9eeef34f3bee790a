"""Per-point Phong-decomposed shading from baked lightmaps.

``c = k_d * a * s_d(n) + sum_k k_s(k) * s_s(k, r) + residual`` with ``r`` the
view direction mirrored about the normal. The view vector points from the
surface towards the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np

from .baker import LightMapSet, sample_lightmap

# residual hook: (albedo, s_d, {k: s_s}) -> RGB, all arrays broadcast over leading dims
ResidualHook = Callable[[np.ndarray, np.ndarray, Mapping[int, np.ndarray]], np.ndarray]


class Shading(NamedTuple):
    color: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    residual: np.ndarray | float = 0.0


def reflect(n, v) -> np.ndarray:
    """Mirror view direction(s) ``v`` about normal(s) ``n``: ``2 (n.v) n - v``."""
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return 2.0 * np.sum(n * v, axis=-1, keepdims=True) * n - v


def pose_normal(rotation, canonical_normal) -> np.ndarray:
    """Target-space normal ``R^-1 n_c`` from the target-to-canonical rotation ``R``."""
    rot = getattr(rotation, "rotation", rotation)
    return np.asarray(canonical_normal, dtype=np.float64) @ np.asarray(rot, dtype=np.float64)


def _check_unit(vec: np.ndarray, name: str, tol: float = 1e-6) -> None:
    if np.any(np.abs(np.linalg.norm(vec, axis=-1) - 1.0) > tol):
        raise ValueError(f"{name} must be unit length (within {tol})")


@dataclass(frozen=True)
class SurfaceSample:
    position: np.ndarray
    normal: np.ndarray
    canonical_normal: np.ndarray
    albedo: np.ndarray
    k_d: float = 1.0
    k_s: Mapping[int, float] = field(default_factory=dict)
    residual: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "normal", "canonical_normal", "albedo", "residual"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, arr)
        _check_unit(self.normal, "normal")
        _check_unit(self.canonical_normal, "canonical_normal")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ValueError("albedo components must lie in [0, 1]")
        if np.ndim(self.k_d) != 0:
            raise ValueError("k_d must be a scalar; RGB coefficients are not supported")
        coeffs = [self.k_d, *self.k_s.values()]
        if any(np.ndim(c) != 0 for c in coeffs):
            raise ValueError("k_s coefficients must be scalars; RGB coefficients are not supported")
        if any(not np.isfinite(c) or c < 0 for c in coeffs):
            raise ValueError("shading coefficients must be finite and nonnegative")
        object.__setattr__(self, "k_s", {int(k): float(c) for k, c in self.k_s.items()})


def shade(normal, view, albedo, k_d, k_s: Mapping[int, np.ndarray | float], lights: LightMapSet,
          residual=None) -> Shading:
    """Vectorised shading of points with (..., 3) normals and views.

    ``k_d`` and each ``k_s[k]`` are scalars or arrays over the leading dims;
    ``residual`` is an RGB array, a ResidualHook, or None for zero.
    """
    normal = np.asarray(normal, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    kd = np.asarray(k_d, dtype=np.float64)[..., None]
    s_d = sample_lightmap(lights, "diffuse", normal)
    r = reflect(normal, view)
    s_s = {k: sample_lightmap(lights, k, r) for k in k_s}
    c_d = kd * albedo * s_d
    c_s = np.zeros(np.broadcast_shapes(c_d.shape, r.shape))
    for k, coeff in k_s.items():
        c_s = c_s + np.asarray(coeff, dtype=np.float64)[..., None] * s_s[k]
    if residual is None:
        delta = 0.0
    elif callable(residual):
        delta = np.asarray(residual(albedo, s_d, s_s), dtype=np.float64)
    else:
        delta = np.asarray(residual, dtype=np.float64)
    return Shading(c_d + c_s + delta, c_d, c_s, delta)


def shade_point(sample: SurfaceSample, view, lights: LightMapSet) -> Shading:
    view = np.asarray(view, dtype=np.float64)
    _check_unit(view, "view")
    return shade(sample.normal, view, sample.albedo, sample.k_d, sample.k_s, lights, sample.residual)
