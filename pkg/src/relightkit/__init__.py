"""Baked environment lighting, MLS deformation fields and volume rendering."""

from .baker import (
    DEFAULT_SHININESS,
    LightMapSet,
    MissingLobeError,
    bake_all,
    bake_diffuse,
    bake_specular,
    load_bundle,
    oracle_shade,
    sample_lightmap,
    save_bundle,
)
from .envmap import (
    EnvironmentMap,
    EnvironmentMapError,
    direction_to_texel,
    load_hdr,
    rotate_environment,
    texel_solid_angle,
    texel_to_direction,
)
from .mls import (
    ControlSet,
    DegenerateControlsError,
    RigidTransform,
    apply_to_normal,
    apply_to_point,
    fit_rigid,
    load_controls,
    mls_rotation,
    mls_transform,
    mls_weights,
    sf_transform,
)
from .shading import Shading, SurfaceSample, pose_normal, reflect, shade, shade_point
from .volume import Camera, VolumeScene, march_ray, normal_from_density, render

__version__ = "0.1.0"
