"""Emission-absorption ray marching over procedural scenes with Phong-decomposed color.

Scenes are unions of analytic density primitives defined in canonical space.
When a scene carries a deformation control set, each ray sample ``p`` (target
space) is warped to ``T(p)`` before any field is evaluated, and canonical
normals are brought back to target space with the rotation field, ``R(p)^-1 n_c``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baker import LightMapSet
from .hdrio import write_pfm, write_png
from .mls import DEFAULT_ALPHA, ControlSet, load_controls, mls_rotation_batch, mls_transform_batch
from .shading import ResidualHook, shade

DEFAULT_SAMPLES = 128
DEFAULT_NEAR = 2.0
DEFAULT_FAR = 6.0
# fixed ray-block size; parallel renders only distribute blocks, so output bits
# never depend on the worker count
RAY_BLOCK = 256
GRADIENT_EPS = 1e-9


class UndefinedNormalError(ValueError):
    """The density gradient vanishes, so no normal can be derived from it."""


def _smoothstep(e0: float, e1: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    """Base density primitive carrying constant material attributes."""

    density_scale: float = 1.0
    albedo: tuple = (1.0, 1.0, 1.0)
    k_d: float = 1.0
    k_s: Mapping[int, float] = field(default_factory=dict)

    def density(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, p: np.ndarray) -> np.ndarray | None:
        """Analytic outward normal, or None when the primitive has none."""
        return None


def _radial(p: np.ndarray, center) -> np.ndarray:
    d = p - np.asarray(center, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.divide(d, norm, out=np.zeros_like(d), where=norm > 0)


@dataclass(frozen=True)
class GaussianBall(Primitive):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def density(self, p):
        d2 = np.sum((p - np.asarray(self.center)) ** 2, axis=-1)
        return self.density_scale * np.exp(-0.5 * d2 / self.radius**2)

    def normal(self, p):
        return _radial(p, self.center)


@dataclass(frozen=True)
class SphereShell(Primitive):
    """Hollow sphere of outer radius ``radius``; both walls are smoothstep edges of half-width ``edge``."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    thickness: float = 0.2
    edge: float = 0.05

    def density(self, p):
        r = np.linalg.norm(p - np.asarray(self.center), axis=-1)
        inner = self.radius - self.thickness
        outside = 1.0 - _smoothstep(self.radius - self.edge, self.radius + self.edge, r)
        return self.density_scale * outside * _smoothstep(inner - self.edge, inner + self.edge, r)

    def normal(self, p):
        return _radial(p, self.center)


@dataclass(frozen=True)
class Slab(Primitive):
    """Constant density between two planes ``lo <= p[axis] <= hi`` (optionally smoothed)."""

    axis: int = 2
    lo: float = -0.5
    hi: float = 0.5
    edge: float = 0.0

    def density(self, p):
        x = p[..., self.axis]
        if self.edge > 0:
            inside = _smoothstep(self.lo - self.edge, self.lo + self.edge, x) * (
                1.0 - _smoothstep(self.hi - self.edge, self.hi + self.edge, x))
        else:
            inside = ((x >= self.lo) & (x <= self.hi)).astype(np.float64)
        return self.density_scale * inside

    def normal(self, p):
        x = p[..., self.axis]
        sign = np.where(x - self.lo < self.hi - x, -1.0, 1.0)
        out = np.zeros(p.shape)
        out[..., self.axis] = sign
        return out


PRIMITIVE_TYPES = {"gaussian_ball": GaussianBall, "sphere_shell": SphereShell, "slab": Slab}


# ---------------------------------------------------------------------------
# Scene and camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VolumeScene:
    """Union of primitives: densities add, attributes blend by density share."""

    primitives: Sequence[Primitive]
    bounds: tuple = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))
    normals: str = "analytic"
    gradient_step: float | None = None
    deformation: ControlSet | None = None
    alpha: float = DEFAULT_ALPHA
    residual: ResidualHook | np.ndarray | None = None

    def __post_init__(self):
        if self.normals not in ("analytic", "density"):
            raise ValueError(f"normals must be 'analytic' or 'density', got {self.normals!r}")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be two 3-vectors with lo < hi")
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "bounds", (lo, hi))

    @property
    def shininess(self) -> tuple[int, ...]:
        return tuple(sorted({int(k) for prim in self.primitives for k in prim.k_s}))

    @property
    def step(self) -> float:
        if self.gradient_step is not None:
            return self.gradient_step
        lo, hi = self.bounds
        return 1e-3 * float(np.max(hi - lo))

    def _inside(self, q: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        return np.all((q >= lo) & (q <= hi), axis=-1)

    def component_densities(self, q: np.ndarray) -> np.ndarray:
        """(len(primitives), ...) nonnegative densities at canonical points ``q``."""
        inside = self._inside(q)
        return np.stack([np.maximum(prim.density(q), 0.0) * inside for prim in self.primitives])

    def density(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        return self.component_densities(q).sum(axis=0)

    def analytic_normal(self, q: np.ndarray, parts: np.ndarray | None = None) -> np.ndarray:
        if parts is None:
            parts = self.component_densities(q)
        acc = np.zeros(q.shape)
        for sigma, prim in zip(parts, self.primitives):
            n = prim.normal(q)
            if n is not None:
                acc += sigma[..., None] * n
        norm = np.linalg.norm(acc, axis=-1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    def density_gradient(self, q: np.ndarray, h: float | None = None) -> np.ndarray:
        h = self.step if h is None else h
        grad = np.empty(q.shape)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            grad[..., axis] = (self.density(q + e) - self.density(q - e)) / (2.0 * h)
        return grad

    def warp(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Target points -> canonical points, plus the rotation field there (None if undeformed)."""
        if self.deformation is None:
            return p, None
        rot_t, trans_t = mls_transform_batch(self.deformation, p, self.alpha)
        q = np.einsum("mij,mj->mi", rot_t, p) + trans_t
        if self.deformation.has_normals:
            rot_n, _ = mls_rotation_batch(self.deformation, p, self.alpha)
        else:
            rot_n = rot_t
        return q, rot_n


def normal_from_density(scene: VolumeScene, p, h: float | None = None) -> np.ndarray:
    """Unit negative density gradient at canonical point(s) ``p`` by central differences."""
    p = np.asarray(p, dtype=np.float64)
    grad = scene.density_gradient(p, h)
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    if np.any(norm <= GRADIENT_EPS):
        raise UndefinedNormalError("density gradient vanishes; normal is undefined here")
    return -grad / norm


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``rotation`` is camera-to-world and the camera looks down its local -z."""

    origin: np.ndarray
    rotation: np.ndarray
    fov: float
    width: int
    height: int
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        rot = np.asarray(self.rotation, dtype=np.float64)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ValueError("camera rotation must be a proper rotation matrix")
        if not 0.0 < self.fov < np.pi:
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        if not 0.0 <= self.near < self.far:
            raise ValueError(f"need 0 <= near < far, got near={self.near}, far={self.far}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def look_at(cls, origin, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), fov: float = np.radians(40.0),
                width: int = 64, height: int = 64, near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> Camera:
        origin = np.asarray(origin, dtype=np.float64)
        back = origin - np.asarray(target, dtype=np.float64)
        back /= np.linalg.norm(back)
        right = np.cross(up, back)
        right /= np.linalg.norm(right)
        true_up = np.cross(back, right)
        return cls(origin, np.stack([right, true_up, back], axis=1), fov, width, height, near, far)

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> Camera:
        """Camera moved by the rigid motion ``x -> rotation @ x + translation``."""
        rot = np.asarray(rotation, dtype=np.float64)
        return Camera(rot @ self.origin + np.asarray(translation, dtype=np.float64), rot @ self.rotation,
                      self.fov, self.width, self.height, self.near, self.far)

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) unit world-space directions through pixel centers."""
        tan = np.tan(0.5 * self.fov)
        aspect = self.width / self.height
        x = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * tan * aspect
        y = (1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0) * tan
        xx, yy = np.meshgrid(x, y)
        d = np.stack([xx, yy, -np.ones_like(xx)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T


# ---------------------------------------------------------------------------
# Marching
# ---------------------------------------------------------------------------


@dataclass
class MarchResult:
    """Per-ray channels for a batch of rays, plus the quadrature internals."""

    color: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray
    t: np.ndarray


def _sample_points(n_rays: int, samples: int, near: float, far: float, rng=None) -> tuple[np.ndarray, float]:
    delta = (far - near) / samples
    offset = np.full((n_rays, samples), 0.5) if rng is None else rng.random((n_rays, samples))
    t = near + (np.arange(samples) + offset) * delta
    return t, delta


def _shade_samples(scene: VolumeScene, p: np.ndarray, view: np.ndarray, lights: LightMapSet):
    q, rot_n = scene.warp(p)
    parts = scene.component_densities(q)
    sigma = parts.sum(axis=0)
    m = len(p)
    residual = np.zeros((m, 3))
    diffuse = np.zeros((m, 3))
    specular = np.zeros((m, 3))
    albedo = np.zeros((m, 3))
    normal = np.zeros((m, 3))
    live = np.flatnonzero(sigma > 0)
    if len(live) == 0:
        return sigma, residual, diffuse, specular, albedo, normal
    ql = q[live]
    pl = parts[:, live]
    share = pl / sigma[live]

    n_c = scene.analytic_normal(ql, pl)
    if scene.normals == "density":
        grad = scene.density_gradient(ql)
        gnorm = np.linalg.norm(grad, axis=-1, keepdims=True)
        ok = gnorm[:, 0] > GRADIENT_EPS
        n_c[ok] = -grad[ok] / gnorm[ok]
    n_t = n_c if rot_n is None else np.einsum("mji,mj->mi", rot_n[live], n_c)

    a = np.zeros((len(live), 3))
    k_d = np.zeros(len(live))
    k_s = {k: np.zeros(len(live)) for k in scene.shininess}
    for w, prim in zip(share, scene.primitives):
        a += w[:, None] * np.asarray(prim.albedo, dtype=np.float64)
        k_d += w * prim.k_d
        for k, c in prim.k_s.items():
            k_s[int(k)] += w * c

    res = shade(n_t, view[live], a, k_d, k_s, lights, scene.residual)
    residual[live] = res.residual
    diffuse[live] = res.diffuse
    specular[live] = res.specular
    albedo[live] = a
    normal[live] = n_t
    return sigma, residual, diffuse, specular, albedo, normal


def march_rays(scene: VolumeScene, origins, directions, lights: LightMapSet, samples: int = DEFAULT_SAMPLES,
               near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR, rng=None) -> MarchResult:
    """Midpoint-quadrature volume rendering of (R, 3) rays; ``rng`` enables stratified jitter."""
    if samples < 2:
        raise ValueError(f"need at least 2 samples per ray, got {samples}")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n_rays = len(directions)
    t, delta = _sample_points(n_rays, samples, near, far, rng)
    p = origins[:, None, :] + t[..., None] * directions[:, None, :]
    view = np.broadcast_to(-directions[:, None, :], p.shape)
    sigma, residual, diffuse, specular, albedo, normal = _shade_samples(
        scene, p.reshape(-1, 3), view.reshape(-1, 3), lights)
    shape = (n_rays, samples)
    sigma = sigma.reshape(shape)
    alpha = 1.0 - np.exp(-sigma * delta)
    trans = np.cumprod(np.concatenate([np.ones((n_rays, 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    w = trans * alpha

    def accumulate(values: np.ndarray) -> np.ndarray:
        return np.einsum("rs,rsc->rc", w, values.reshape(shape + (3,)))

    acc_normal = accumulate(normal)
    norm = np.linalg.norm(acc_normal, axis=-1, keepdims=True)
    wsum = w.sum(axis=1)
    acc_diffuse, acc_specular = accumulate(diffuse), accumulate(specular)
    # summing the accumulated components keeps color = diffuse + specular exact when the residual is zero
    return MarchResult(
        color=acc_diffuse + acc_specular + accumulate(residual),
        diffuse=acc_diffuse,
        specular=acc_specular,
        albedo=accumulate(albedo),
        normal=np.divide(acc_normal, norm, out=np.zeros_like(acc_normal), where=norm > 1e-12),
        alpha=wsum,
        depth=(w * t).sum(axis=1) / np.maximum(wsum, 1e-9),
        weights=w,
        transmittance=trans,
        t=t,
    )


def march_ray(scene: VolumeScene, origin, direction, lights: LightMapSet, samples: int = DEFAULT_SAMPLES,
              near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> MarchResult:
    """Single-ray convenience wrapper; channels keep a leading axis of length 1."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    return march_rays(scene, origin, d, lights, samples, near, far)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

CHANNELS = ("color", "diffuse", "specular", "albedo", "normal", "alpha", "depth")


@dataclass
class RenderOutput:
    color: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray

    def channels(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in CHANNELS}

    def save(self, out_dir: str | Path, exposure: float = 1.0) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, img in self.channels().items():
            pfm = out_dir / f"{name}.pfm"
            png = out_dir / f"{name}.png"
            write_pfm(pfm, img.astype(np.float32))
            if name == "normal":
                preview, exp = 0.5 * (img + 1.0) * (self.alpha[..., None] > 0), 1.0
            elif name == "depth":
                far = float(img.max()) if img.max() > 0 else 1.0
                preview, exp = img / far, 1.0
            else:
                preview, exp = img, exposure
            write_png(png, preview, exposure=exp, gamma=1.0 if name in ("normal", "depth", "alpha") else 2.2)
            written += [pfm, png]
        return written


def render(scene: VolumeScene, camera: Camera, lights: LightMapSet, samples: int = DEFAULT_SAMPLES,
           workers: int = 1, jitter: bool = False, seed: int = 0) -> RenderOutput:
    """Render every pixel with one marched ray; parallel over fixed pixel blocks."""
    missing = set(scene.shininess) - set(lights.shininess)
    if missing:
        raise LookupError(f"scene uses shininess {sorted(missing)} absent from lightmaps {list(lights.shininess)}")
    dirs = camera.ray_directions().reshape(-1, 3)
    n = len(dirs)
    out = {name: np.zeros((n, 3)) for name in ("color", "diffuse", "specular", "albedo", "normal")}
    out["alpha"] = np.zeros(n)
    out["depth"] = np.zeros(n)

    def run(start: int) -> None:
        stop = min(start + RAY_BLOCK, n)
        rng = np.random.default_rng([seed, start]) if jitter else None
        res = march_rays(scene, camera.origin, dirs[start:stop], lights, samples, camera.near, camera.far, rng)
        for name in out:
            out[name][start:stop] = getattr(res, name)

    starts = range(0, n, RAY_BLOCK)
    if workers <= 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    h, w = camera.height, camera.width
    return RenderOutput(**{name: arr.reshape((h, w) + arr.shape[1:]) for name, arr in out.items()})


# ---------------------------------------------------------------------------
# Scene description files
# ---------------------------------------------------------------------------


def _primitive_from_json(obj: dict) -> Primitive:
    obj = dict(obj)
    kind = obj.pop("type", None)
    if kind not in PRIMITIVE_TYPES:
        raise ValueError(f"unknown primitive type {kind!r}; expected one of {sorted(PRIMITIVE_TYPES)}")
    if "density" in obj:
        obj["density_scale"] = obj.pop("density")
    if "k_s" in obj:
        obj["k_s"] = {int(k): float(v) for k, v in obj["k_s"].items()}
    for key in ("center", "albedo"):
        if key in obj:
            obj[key] = tuple(float(x) for x in obj[key])
    try:
        return PRIMITIVE_TYPES[kind](**obj)
    except TypeError as exc:
        raise ValueError(f"bad fields for {kind}: {exc}") from exc


def camera_from_json(obj: dict) -> Camera:
    return Camera.look_at(
        origin=obj.get("origin", (0.0, 0.0, 4.0)),
        target=obj.get("target", (0.0, 0.0, 0.0)),
        up=obj.get("up", (0.0, 1.0, 0.0)),
        fov=np.radians(float(obj.get("fov_deg", 40.0))),
        width=int(obj.get("width", 64)),
        height=int(obj.get("height", 64)),
        near=float(obj.get("near", DEFAULT_NEAR)),
        far=float(obj.get("far", DEFAULT_FAR)),
    )


def load_scene(path: str | Path) -> tuple[VolumeScene, Camera]:
    """Read a JSON scene description; a ``controls`` path resolves relative to the scene file."""
    path = Path(path)
    with open(path) as f:
        obj = json.load(f)
    controls = None
    if obj.get("controls"):
        controls = load_controls(path.parent / obj["controls"])
    residual = obj.get("residual")
    scene = VolumeScene(
        primitives=[_primitive_from_json(p) for p in obj.get("primitives", [])],
        bounds=tuple(obj.get("bounds", ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0)))),
        normals=obj.get("normals", "analytic"),
        gradient_step=obj.get("gradient_step"),
        deformation=controls,
        alpha=float(obj.get("alpha", DEFAULT_ALPHA)),
        residual=None if residual is None else np.asarray(residual, dtype=np.float64),
    )
    return scene, camera_from_json(obj.get("camera", {}))
