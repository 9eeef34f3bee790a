import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relightkit.baker import MissingLobeError, bake_all, sample_lightmap
from relightkit.envmap import rotate_environment, rotation_about_axis, rotation_about_y
from relightkit.fixtures import smooth_env
from relightkit.shading import SurfaceSample, pose_normal, reflect, shade, shade_point

unit_vec = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


def sample(**kw):
    base = dict(position=[0.0, 0.0, 0.0], normal=[0.0, 0.0, 1.0], canonical_normal=[0.0, 0.0, 1.0],
                albedo=[1.0, 1.0, 1.0], k_d=1.0, k_s={})
    base.update(kw)
    return SurfaceSample(**base)


@pytest.mark.parametrize("n, v, r", [
    ((0, 0, 1), (0, 0, 1), (0, 0, 1)),
    ((0, 0, 1), (1, 0, 0), (-1, 0, 0)),
    ((0, 0, 1), (1 / math.sqrt(2), 0, 1 / math.sqrt(2)), (-1 / math.sqrt(2), 0, 1 / math.sqrt(2))),
])
def test_reflect_examples(n, v, r):
    assert reflect(n, v) == pytest.approx(r, abs=1e-15)


@given(unit_vec, unit_vec)
def test_reflect_is_unit_involution(n, v):
    r = reflect(n, v)
    assert abs(np.linalg.norm(r) - 1) < 1e-9
    assert np.allclose(reflect(n, r), v, atol=1e-9)


def test_diffuse_only_under_constant_light(const_lights):
    out = shade_point(sample(), [0.0, 0.0, 1.0], const_lights)
    assert out.color == pytest.approx([math.pi] * 3, rel=5e-3)
    assert not out.specular.any()


def test_specular_only_under_constant_light(const_lights):
    out = shade_point(sample(k_d=0.0, k_s={1: 1.0}), [0.6, 0.0, 0.8], const_lights)
    assert out.color == pytest.approx([math.pi] * 3, rel=1e-2)


def test_missing_exponent_propagates(const_lights):
    with pytest.raises(MissingLobeError):
        shade_point(sample(k_s={3: 1.0}), [0.0, 0.0, 1.0], const_lights)


def test_residual_is_additive(const_lights, rng):
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    v = np.roll(n, 1, axis=0)
    a = rng.uniform(size=(20, 3))
    base = shade(n, v, a, 0.7, {16: 0.3, 64: 0.2}, const_lights)
    assert np.array_equal(base.color, base.diffuse + base.specular)
    shifted = shade(n, v, a, 0.7, {16: 0.3, 64: 0.2}, const_lights, residual=[0.1, -0.2, 0.3])
    assert np.allclose(shifted.color - base.color, [0.1, -0.2, 0.3], atol=1e-15)
    hooked = shade(n, v, a, 0.7, {16: 0.3}, const_lights, residual=lambda alb, sd, ss: 0.5 * alb)
    plain = shade(n, v, a, 0.7, {16: 0.3}, const_lights)
    assert np.allclose(hooked.color - plain.color, 0.5 * a)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 4), unit_vec, unit_vec)
def test_color_scales_with_light_energy(scale, n, v):
    lights = bake_all(smooth_env(8), (1, 16), (16, 8))
    a = np.array([0.2, 0.5, 0.9])
    base = shade(n, v, a, 0.8, {1: 0.1, 16: 0.4}, lights)
    scaled = shade(n, v, a, 0.8, {1: 0.1, 16: 0.4}, lights.scaled(scale))
    assert np.allclose(scaled.color, scale * base.color, rtol=1e-12, atol=1e-14)


def test_rotated_sample_under_rotated_env():
    env = smooth_env(16)
    rot = rotation_about_y(math.pi / 2)
    base = bake_all(env, (16,), (32, 16))
    turned = bake_all(rotate_environment(env, rot), (16,), (32, 16))
    rng = np.random.default_rng(2)
    n = rng.normal(size=(200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    v = rng.normal(size=(200, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    a = np.array([0.8, 0.6, 0.4])
    c0 = shade(n, v, a, 0.9, {16: 0.5}, base).color
    c1 = shade(n @ rot.T, v @ rot.T, a, 0.9, {16: 0.5}, turned).color
    assert np.mean(np.abs(c1 - c0) / c0) < 0.02


def test_pose_normal_examples():
    assert pose_normal(np.eye(3), [0.0, 0.6, 0.8]).tolist() == [0.0, 0.6, 0.8]
    rz = rotation_about_axis([0.0, 0.0, 1.0], math.pi / 2)
    assert pose_normal(rz, [0.0, 1.0, 0.0]) == pytest.approx([1.0, 0.0, 0.0], abs=1e-15)


def test_lookup_consistency(const_lights):
    n = np.array([0.0, 1.0, 0.0])
    out = shade_point(sample(normal=n, albedo=[0.5, 0.25, 1.0]), [0.0, 1.0, 0.0], const_lights)
    assert np.allclose(out.diffuse, [0.5, 0.25, 1.0] * sample_lightmap(const_lights, "diffuse", n))


@pytest.mark.parametrize("kw, msg", [
    ({"normal": [0.0, 0.0, 2.0]}, "unit"),
    ({"albedo": [1.2, 0.0, 0.0]}, "albedo"),
    ({"k_d": [1.0, 1.0, 1.0]}, "scalar"),
    ({"k_s": {1: -0.5}}, "nonnegative"),
])
def test_surface_sample_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        sample(**kw)
