"""One test per acceptance criterion; each records a PASS/FAIL line with its measurements."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from relightkit.baker import DEFAULT_SHININESS, bake_all, oracle_shade, sample_lightmap
from relightkit.bench import bench_continuity, bench_shading
from relightkit.envmap import rotate_environment, rotation_about_axis, rotation_about_y
from relightkit.fixtures import bend_fixture, constant_env, smooth_env
from relightkit.mls import ControlSet, apply_to_point, mls_rotation_batch, mls_transform, mls_transform_batch
from relightkit.shading import SurfaceSample, shade_point
from relightkit.volume import Camera, GaussianBall, Slab, SphereShell, VolumeScene, march_ray, normal_from_density, render


class Criterion:
    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget = number, title, budget_s
        self.checks = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc_type is not None:
            self.check("raised", False, f"{exc_type.__name__}: {exc}")
        self.check("runtime", elapsed < self.budget, f"{elapsed:.1f}s < {self.budget}s")
        ok = all(c[1] for c in self.checks)
        parts = "; ".join(f"{label} {'ok' if good else 'FAILED'} ({detail})" for label, good, detail in self.checks)
        line = f"{'PASS' if ok else 'FAIL'} [{self.number}] {self.title}: {parts}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None:
            assert ok, line
        return False


def rel_err(value, expected):
    return float(np.max(np.abs(np.asarray(value) / expected - 1.0)))


def test_1_analytic_bake_values():
    with Criterion(1, "constant env bake at env 128x64", 10) as c:
        lights = bake_all(constant_env(64), DEFAULT_SHININESS, (128, 64))
        err = rel_err(lights.diffuse, math.pi)
        c.check("diffuse=pi", err < 5e-3, f"max rel {err:.2e}")
        for k in DEFAULT_SHININESS:
            err = rel_err(lights.specular[k], 2 * math.pi / (k + 1))
            c.check(f"specular n={k}", err < 1e-2, f"max rel {err:.2e}")


def test_2_oracle_agreement():
    with Criterion(2, "lookup vs brute force on smooth fixture", 30) as c:
        env = smooth_env(64)
        lights = bake_all(env, DEFAULT_SHININESS, (128, 64))
        rng = np.random.default_rng(2024)
        n = rng.normal(size=(1000, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        r = rng.normal(size=(1000, 3))
        r /= np.linalg.norm(r, axis=1, keepdims=True)
        s_d, s_s = oracle_shade(env, n, r, DEFAULT_SHININESS)
        err = np.mean(np.abs(sample_lightmap(lights, "diffuse", n) - s_d) / s_d)
        c.check("diffuse", err < 0.02, f"mean rel {err:.2e}")
        for k in DEFAULT_SHININESS:
            err = np.mean(np.abs(sample_lightmap(lights, k, r) - s_s[k]) / s_s[k])
            c.check(f"specular n={k}", err < 0.02, f"mean rel {err:.2e}")


def test_3_complexity():
    with Criterion(3, "lookup cost flat, oracle cost linear in env texels", 120) as c:
        rep = bench_shading(env_heights=(16, 32, 64, 128), queries=10_000)
        c.check("timer", rep.reliable, "medians above 10 ticks")
        c.check("lookup variation", rep.lookup_variation < 2.0, f"{rep.lookup_variation:.2f}x < 2x")
        c.check("oracle growth", rep.oracle_growth >= 32.0,
                f"{rep.oracle_growth:.1f}x >= 32x over {rep.texel_growth:.0f}x texels")
        c.check("speedup 256x128", rep.speedup[-1] > 50.0, f"{rep.speedup[-1]:.0f}x > 50x")


def test_4_mls_exactness_and_rigidity():
    with Criterion(4, "MLS interpolation, orthonormality, rigid recovery", 30) as c:
        rng = np.random.default_rng(4)
        worst_orth = worst_det = worst_interp = 0.0
        for _ in range(100):
            k = int(rng.integers(3, 16))
            nt = rng.normal(size=(k, 3))
            nc = rng.normal(size=(k, 3))
            ctrl = ControlSet(rng.normal(size=(k, 3)), rng.normal(size=(k, 3)),
                              nt / np.linalg.norm(nt, axis=1, keepdims=True),
                              nc / np.linalg.norm(nc, axis=1, keepdims=True))
            alpha = float(rng.uniform(0.5, 2.0))
            pts = rng.normal(scale=2.0, size=(100, 3))
            for rot in (mls_transform_batch(ctrl, pts, alpha)[0], mls_rotation_batch(ctrl, pts, alpha)[0]):
                worst_orth = max(worst_orth, np.abs(np.swapaxes(rot, 1, 2) @ rot - np.eye(3)).max())
                worst_det = max(worst_det, np.abs(np.linalg.det(rot) - 1.0).max())
            rot, trans = mls_transform_batch(ctrl, ctrl.posed, alpha)
            mapped = np.einsum("mij,mj->mi", rot, ctrl.posed) + trans
            worst_interp = max(worst_interp, np.abs(mapped - ctrl.unposed).max())
        c.check("interpolation", worst_interp < 1e-9, f"{worst_interp:.1e}")
        c.check("R^T R = I", worst_orth < 1e-9, f"{worst_orth:.1e} over 2x10^4 solves")
        c.check("det = +1", worst_det < 1e-9, f"{worst_det:.1e}")

        rot = rotation_about_axis(rng.normal(size=3), 1.1)
        shift = rng.normal(size=3)
        normals = rng.normal(size=(8, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        rigid = ControlSet.from_rigid_motion(rng.normal(size=(8, 3)), rot, shift, normals=normals)
        pts = rng.normal(scale=3.0, size=(500, 3))
        r_t, t_t = mls_transform_batch(rigid, pts)
        r_n, _ = mls_rotation_batch(rigid, pts)
        rec = max(np.abs(r_t - rot.T).max(), np.abs(t_t + rot.T @ shift).max(), np.abs(r_n - rot.T).max())
        c.check("rigid recovery", rec < 1e-9, f"{rec:.1e}")


def test_5_continuity():
    with Criterion(5, "MLS vs SF continuity on bend fixture", 10) as c:
        rep = bench_continuity(bend_fixture(), grid=100, octaves=3)
        c.check("SF/MLS jump", rep.jump_ratio >= 10, f"{rep.jump_ratio:.1f}x >= 10x")
        ratios = [b / a for a, b in zip(rep.mls_max_jump, rep.mls_max_jump[1:])]
        # the max jump of a smooth field cannot drop below half when the spacing halves on nested
        # grids; "halves" is checked as a ratio of one half to within 1%
        c.check("MLS halving", all(abs(q - 0.5) <= 0.005 for q in ratios),
                "ratios " + ", ".join(f"{q:.4f}" for q in ratios))
        a, b = bend_fixture().posed[:4].mean(axis=0), bend_fixture().posed[4:].mean(axis=0)
        mid = 0.5 * (a + b)
        x = apply_to_point(mls_transform(bend_fixture(), mid), mid)[0]
        c.check("midpoint between clusters", 0.125 < x < 3.875, f"x={x:.3f}")


def test_6_volume_quadrature():
    with Criterion(6, "constant slab closed form and weight invariants", 5) as c:
        sigma, color = 0.8, np.array([0.25, 0.5, 1.0])
        flat = bake_all(constant_env(8), (1,), (16, 8))
        scene = VolumeScene([Slab(axis=2, lo=-5.0, hi=5.0, density_scale=sigma, k_d=0.0)],
                            bounds=((-5.0,) * 3, (5.0,) * 3), residual=color)
        res = march_ray(scene, [0.0, 0.0, 4.0], [0.0, 0.0, -1.0], flat, samples=256)
        expected = color * (1 - math.exp(-sigma * 4.0))
        err = rel_err(res.color[0], expected)
        c.check("slab", err < 5e-3, f"max rel {err:.2e}")
        res128 = march_ray(scene, [0.0, 0.0, 4.0], [0.0, 0.0, -1.0], flat, samples=128)
        conv = rel_err(res128.color[0], res.color[0])
        c.check("128 vs 256", conv < 2e-3, f"{conv:.2e}")

        ball = VolumeScene([GaussianBall(density_scale=8.0, radius=0.6), SphereShell(density_scale=4.0)])
        rng = np.random.default_rng(6)
        dirs = np.array([0.0, 0.0, -1.0]) + 0.2 * rng.normal(size=(500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        from relightkit.volume import march_rays

        out = march_rays(ball, [0.0, 0.0, 4.0], dirs, flat, samples=128)
        mono = bool(np.all(np.diff(out.transmittance, axis=1) <= 0))
        c.check("transmittance monotone", mono, "500 rays")
        top = float(out.weights.sum(axis=1).max())
        c.check("sum of weights <= 1", top <= 1 + 1e-9, f"max {top:.6f}")


def test_7_density_normals():
    with Criterion(7, "sphere-shell normals from density gradient", 5) as c:
        shell = SphereShell(center=(0.1, 0.2, -0.3), radius=1.0, thickness=0.2, edge=0.05)
        scene = VolumeScene([shell])
        rng = np.random.default_rng(7)
        u = rng.normal(size=(100, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        n = normal_from_density(scene, np.array(shell.center) + shell.radius * u)
        worst = float(np.degrees(np.arccos(np.clip(np.sum(n * u, axis=1), -1, 1))).max())
        c.check("angle", worst < 1.0, f"max {worst:.3f} deg")


def test_8_equivariance():
    with Criterion(8, "reposed scene under co-rotated env matches unposed render", 120) as c:
        env = smooth_env(32)
        rot = rotation_about_y(math.pi / 2)  # texel-permuting for every 2:1 map with W divisible by 4
        prims = [
            GaussianBall(center=(0.6, 0.2, 0.0), radius=0.35, density_scale=20.0, albedo=(0.9, 0.4, 0.2),
                         k_d=0.8, k_s={16: 0.2}),
            SphereShell(center=(-0.4, 0.0, 0.1), radius=0.5, thickness=0.2, density_scale=30.0,
                        albedo=(0.3, 0.7, 0.5), k_d=0.6, k_s={64: 0.4}),
        ]
        anchors = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
        normals = anchors[1:4].tolist() + [[0.0, 0.6, 0.8], [0.6, 0.0, 0.8], [-1.0, 0.0, 0.0]]
        controls = ControlSet.from_rigid_motion(np.vstack([anchors, [[-1, 0, 0]]]), rot, normals=normals)
        cam = Camera.look_at([0.0, 0.5, 4.0], width=64, height=64)
        rest = render(VolumeScene(prims), cam, bake_all(env, (16, 64)), samples=128, workers=4)
        posed = render(VolumeScene(prims, deformation=controls), cam.transformed(rot),
                       bake_all(rotate_environment(env, rot), (16, 64)), samples=128, workers=4)
        mask = rest.alpha > 0.5
        rel = np.abs(posed.color[mask] - rest.color[mask]) / np.maximum(rest.color[mask], 1e-9)
        c.check("masked pixels", mask.sum() > 200, f"{int(mask.sum())}")
        c.check("mean rel err", rel.mean() < 0.02, f"{rel.mean():.2e}")


def test_9_channel_consistency():
    with Criterion(9, "color = diffuse + specular + residual", 30) as c:
        lights = bake_all(smooth_env(16), (16, 64), (64, 32))
        scene = VolumeScene([GaussianBall(density_scale=6.0, k_d=0.7, k_s={16: 0.3, 64: 0.5}, albedo=(0.6, 0.5, 0.3)),
                             SphereShell(density_scale=15.0, k_s={16: 0.9})])
        cam = Camera.look_at([0.0, 1.0, 4.0], width=32, height=32)
        out = render(scene, cam, lights, samples=64)
        c.check("delta=0 exact", np.array_equal(out.color, out.diffuse + out.specular), "bitwise per pixel")

        delta = np.array([0.05, -0.02, 0.1])
        shifted = render(VolumeScene(scene.primitives, residual=delta), cam, lights, samples=64)
        gap = float(np.abs(shifted.color - out.color - out.alpha[..., None] * delta).max())
        c.check("render shift = alpha*delta", gap < 1e-12, f"{gap:.1e}")

        rng = np.random.default_rng(9)
        worst = 0
        for _ in range(200):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            kw = dict(position=np.zeros(3), normal=n, canonical_normal=n, albedo=rng.uniform(size=3), k_d=0.5,
                      k_s={16: 0.4, 64: 0.2})
            base = shade_point(SurfaceSample(**kw), v, lights)
            moved = shade_point(SurfaceSample(**kw, residual=delta), v, lights)
            worst += not np.array_equal(moved.color, (base.diffuse + base.specular) + delta)
            worst += not np.array_equal(base.color, base.diffuse + base.specular)
        c.check("point shift = delta", worst == 0, "bitwise at 200 samples")
