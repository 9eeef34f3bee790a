"""Procedural environments and control sets used by validation, benchmarks and tests."""

from __future__ import annotations

import numpy as np

from .envmap import EnvironmentMap, rotation_about_axis, texel_directions
from .mls import ControlSet

SUN_DIRECTION = np.array([0.6, 0.5, 0.62]) / np.linalg.norm([0.6, 0.5, 0.62])


def constant_env(height: int = 64, value=1.0) -> EnvironmentMap:
    return EnvironmentMap.constant(value, height)


def smooth_env(height: int = 64) -> EnvironmentMap:
    """Sky gradient plus a broad warm sun lobe; smooth at every resolution."""
    d = texel_directions(2 * height, height)
    sun = np.exp(8.0 * (d @ SUN_DIRECTION - 1.0))[..., None] * np.array([5.0, 4.0, 3.0])
    sky = 0.3 * np.clip(d[..., 1:2], 0.0, 1.0) * np.array([0.6, 0.8, 1.0])
    return EnvironmentMap(0.2 + sun + sky)


def elevation_env(height: int = 64) -> EnvironmentMap:
    """Radiance depending only on elevation, hence invariant under turns about +y."""
    d = texel_directions(2 * height, height)
    y = d[..., 1:2]
    return EnvironmentMap(0.3 + np.clip(y, 0.0, 1.0) * np.array([1.5, 1.2, 1.0]) + 0.1 * (1.0 - y))


def single_texel_env(height: int = 32, u: int | None = None, v: int | None = None, value=(10.0, 10.0, 10.0),
                     ) -> EnvironmentMap:
    width = 2 * height
    u = width // 3 if u is None else u
    v = height // 3 if v is None else v
    rad = np.zeros((height, width, 3))
    rad[v, u] = value
    return EnvironmentMap(rad)


_TETRA = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]])
_TETRA_FACES = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])


def bend_fixture(angle: float = np.pi / 2, normals: bool = True) -> ControlSet:
    """Two 4-vertex clusters at the ends of a bar of length 4 along +x.

    The canonical bar is straight. In the posed copy the second cluster is turned
    by ``angle`` about the z axis through the bar's midpoint; the first is fixed.
    Points 0-3 form cluster A, 4-7 cluster B; each cluster is a tetrahedron.
    """
    a = _TETRA.copy()
    b = np.array([4.0, 0.0, 0.0]) + _TETRA * np.array([-1.0, 1.0, 1.0])
    canonical = np.vstack([a, b])
    mid = np.array([2.0, 0.0, 0.0])
    rot = rotation_about_axis([0.0, 0.0, 1.0], angle)
    posed = canonical.copy()
    posed[4:] = (b - mid) @ rot.T + mid
    kw = {}
    if normals:
        # outward-ish unit normals per vertex, carried along with each cluster
        n = canonical - canonical.reshape(2, 4, 3).mean(axis=1).repeat(4, axis=0)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        n_posed = n.copy()
        n_posed[4:] = n[4:] @ rot.T
        kw = {"posed_normals": n_posed, "unposed_normals": n}
    return ControlSet(posed, canonical, triangles=np.vstack([_TETRA_FACES, _TETRA_FACES + 4]), **kw)


def identity_fixture() -> ControlSet:
    return bend_fixture(angle=0.0)


def cluster_segment(controls: ControlSet) -> tuple[np.ndarray, np.ndarray]:
    """Posed-space segment joining the centroids of the first and second half of the controls."""
    half = len(controls) // 2
    return controls.posed[:half].mean(axis=0), controls.posed[half:].mean(axis=0)
