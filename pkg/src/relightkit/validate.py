"""Analytic check table run by ``relightkit validate``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baker import DEFAULT_SHININESS, bake_all
from .bench import bench_continuity
from .envmap import rotation_about_axis
from .fixtures import bend_fixture, constant_env
from .mls import ControlSet, apply_to_point, mls_transform
from .volume import Slab, VolumeScene, march_rays


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(value, expected) -> float:
    return float(np.max(np.abs(np.asarray(value) - expected)) / abs(expected))


def check_constant_bake(workers: int = 1) -> list[CheckResult]:
    lights = bake_all(constant_env(64), DEFAULT_SHININESS, (32, 16), workers)
    err = _rel(lights.diffuse, np.pi)
    out = [CheckResult("constant env diffuse = pi", err < 5e-3, f"max rel err {err:.2e} (tol 5e-3)")]
    for k in DEFAULT_SHININESS:
        expected = 2.0 * np.pi / (k + 1)
        err = _rel(lights.specular[k], expected)
        out.append(CheckResult(f"constant env specular n={k} = 2pi/(n+1)", err < 1e-2,
                               f"max rel err {err:.2e} (tol 1e-2)"))
    return out


def check_slab() -> CheckResult:
    sigma, near, far = 0.7, 2.0, 6.0
    color = np.array([0.2, 0.5, 0.9])
    scene = VolumeScene([Slab(axis=2, lo=-10.0, hi=10.0, density_scale=sigma, k_d=0.0)],
                        bounds=((-10.0,) * 3, (10.0,) * 3), residual=color)
    lights = bake_all(constant_env(4), (1,), (8, 4))
    res = march_rays(scene, np.array([0.0, 0.0, 4.0]), np.array([0.0, 0.0, -1.0]), lights, 256, near, far)
    expected = color * (1.0 - np.exp(-sigma * (far - near)))
    err = _rel(res.color[0] / expected, 1.0)
    return CheckResult("constant slab = c (1 - exp(-sigma dt))", err < 5e-3, f"max rel err {err:.2e} (tol 5e-3)")


def check_mls() -> list[CheckResult]:
    rng = np.random.default_rng(0)
    posed, unposed = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    noisy = ControlSet(posed, unposed)
    interp = max(np.abs(apply_to_point(mls_transform(noisy, p), p) - q).max() for p, q in zip(posed, unposed))
    rot = rotation_about_axis(rng.normal(size=3), 0.8)
    shift = rng.normal(size=3)
    rigid = ControlSet.from_rigid_motion(unposed, rot, shift)
    recover = 0.0
    for p in rng.normal(size=(20, 3)):
        t = mls_transform(rigid, p)
        recover = max(recover, np.abs(t.rotation - rot.T).max(), np.abs(t.translation + rot.T @ shift).max())
    return [
        CheckResult("MLS interpolates control points", interp < 1e-9, f"max err {interp:.2e} (tol 1e-9)"),
        CheckResult("MLS recovers a global rigid motion", recover < 1e-9, f"max err {recover:.2e} (tol 1e-9)"),
    ]


def check_continuity() -> CheckResult:
    report = bench_continuity(bend_fixture(), grid=100)
    return CheckResult("SF jump >= 10x MLS jump on bend fixture", report.jump_ratio >= 10.0,
                       f"ratio {report.jump_ratio:.1f}")


def run_checks(workers: int = 1) -> list[CheckResult]:
    return [*check_constant_bake(workers), check_slab(), *check_mls(), check_continuity()]
