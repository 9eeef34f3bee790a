"""Moving-least-squares rigid deformation fields and the nearest-triangle baseline.

For a query point ``p`` in the posed (target) space, the translation field solves
a weighted rigid registration of the posed control points onto their unposed
(canonical) partners, with weights ``w_i = |V^t_i - p| ** (-2 alpha)``. The
rotation field solves the same weighted problem on paired normals, with no
translation. Both are evaluated in batches: every public single-query function
is a thin wrapper over its ``*_batch`` counterpart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

COINCIDENCE_EPS = 1e-12
COLLINEAR_EPS = 1e-12
# beyond this dominance ratio the rotation fit is solved as a pinned (constrained)
# problem, since the weaker constraints would drown in round-off of the dominant one
PIN_RATIO = 1e12
DEFAULT_ALPHA = 1.0


class DegenerateControlsError(ValueError):
    """The weighted control set does not determine a unique rigid transform."""


@dataclass(frozen=True)
class RigidTransform:
    """``x -> rotation @ x + translation``; ``ambiguous`` marks underdetermined rotation fits."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ambiguous: bool = False

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        return apply_to_point(self, p)

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation, self.ambiguous)


@dataclass(frozen=True)
class ControlSet:
    """Paired posed/unposed control points, optional normals and triangles."""

    posed: np.ndarray
    unposed: np.ndarray
    posed_normals: np.ndarray | None = None
    unposed_normals: np.ndarray | None = None
    triangles: np.ndarray | None = None

    def __post_init__(self):
        posed = _as_points(self.posed, "posed")
        unposed = _as_points(self.unposed, "unposed")
        if posed.shape != unposed.shape:
            raise ValueError(f"posed and unposed point counts differ: {len(posed)} vs {len(unposed)}")
        if len(posed) < 3:
            raise ValueError(f"need at least 3 control points, got {len(posed)}")
        centered = posed - posed.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[0] == 0.0 or s[1] <= COLLINEAR_EPS * s[0]:
            raise DegenerateControlsError("posed control points are collinear; rigid fit is ill-posed")
        object.__setattr__(self, "posed", posed)
        object.__setattr__(self, "unposed", unposed)

        if (self.posed_normals is None) != (self.unposed_normals is None):
            raise ValueError("posed_normals and unposed_normals must be given together")
        if self.posed_normals is not None:
            for name in ("posed_normals", "unposed_normals"):
                nrm = _as_points(getattr(self, name), name)
                if len(nrm) != len(posed):
                    raise ValueError(f"{name} has {len(nrm)} entries, expected {len(posed)}")
                if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                    raise ValueError(f"{name} must be unit vectors (within 1e-6)")
                object.__setattr__(self, name, nrm)

        if self.triangles is not None:
            tri = np.array(self.triangles, dtype=np.intp).reshape(-1, 3)
            if len(tri) == 0:
                tri = None
            elif tri.min() < 0 or tri.max() >= len(posed):
                raise ValueError("triangle index out of range")
            else:
                tri.setflags(write=False)
            object.__setattr__(self, "triangles", tri)

    def __len__(self) -> int:
        return len(self.posed)

    @property
    def has_normals(self) -> bool:
        return self.posed_normals is not None

    @cached_property
    def _triangle_index(self) -> tuple[cKDTree, np.ndarray, np.ndarray]:
        if self.triangles is None:
            raise ValueError("control set has no triangles; the surface-field baseline needs a mesh")
        centroids = self.posed[self.triangles].mean(axis=1)
        rot, trans = [], []
        for tri in self.triangles:
            r, t = fit_rigid(self.posed[tri], self.unposed[tri], np.ones(3))
            rot.append(r)
            trans.append(t)
        return cKDTree(centroids), np.array(rot), np.array(trans)

    def to_json(self) -> dict:
        out = {"posed": self.posed.tolist(), "unposed": self.unposed.tolist()}
        if self.has_normals:
            out["posed_normals"] = self.posed_normals.tolist()
            out["unposed_normals"] = self.unposed_normals.tolist()
        if self.triangles is not None:
            out["triangles"] = self.triangles.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> ControlSet:
        unknown = set(obj) - {"posed", "unposed", "posed_normals", "unposed_normals", "triangles"}
        if unknown:
            raise ValueError(f"unknown control-set keys: {sorted(unknown)}")
        return cls(
            posed=obj["posed"],
            unposed=obj["unposed"],
            posed_normals=obj.get("posed_normals"),
            unposed_normals=obj.get("unposed_normals"),
            triangles=obj.get("triangles"),
        )

    @classmethod
    def from_rigid_motion(cls, canonical, rotation, translation=(0.0, 0.0, 0.0), normals=None,
                          triangles=None) -> ControlSet:
        """Controls whose posed copy is ``rotation @ canonical + translation``."""
        canonical = np.asarray(canonical, dtype=np.float64)
        rotation = np.asarray(rotation, dtype=np.float64)
        posed = canonical @ rotation.T + np.asarray(translation, dtype=np.float64)
        kw = {}
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64)
            kw = {"posed_normals": normals @ rotation.T, "unposed_normals": normals}
        return cls(posed, canonical, triangles=triangles, **kw)


def _as_points(arr, name: str) -> np.ndarray:
    a = np.array(arr, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be an (N, 3) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    a.setflags(write=False)
    return a


def load_controls(path: str | Path) -> ControlSet:
    with open(path) as f:
        return ControlSet.from_json(json.load(f))


def save_controls(controls: ControlSet, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(controls.to_json(), f)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def _weights(posed: np.ndarray, points: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Finite weights and coincidence mask, both (M, K).

    Weights are scaled so each row's largest finite weight is 1 (the argmin is
    invariant to per-row scaling), which avoids overflow for any alpha. Entries
    for controls coinciding with the query are zero in the weight array and
    flagged in the mask; the caller decides how to pin them.
    """
    if alpha <= 0:
        raise ValueError(f"fall-off alpha must be positive, got {alpha}")
    diff = points[:, None, :] - posed[None, :, :]
    d2 = np.einsum("mki,mki->mk", diff, diff)
    coincident = d2 < COINCIDENCE_EPS**2
    logd2 = np.log(np.where(coincident, 1.0, d2))
    logd2[coincident] = np.inf
    w = np.exp(-alpha * (logd2 - logd2.min(axis=1, keepdims=True)))
    return w, coincident


def mls_weights(controls: ControlSet, p, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``|V^t_i - p| ** (-2 alpha)``; an indicator vector when ``p`` hits a control point."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    if alpha <= 0:
        raise ValueError(f"fall-off alpha must be positive, got {alpha}")
    d = np.linalg.norm(controls.posed - p, axis=1)
    hit = d < COINCIDENCE_EPS
    if hit.any():
        return hit.astype(np.float64)
    return d ** (-2.0 * alpha)


# ---------------------------------------------------------------------------
# Weighted Kabsch
# ---------------------------------------------------------------------------


def _rotation_from_covariance(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotations maximising tr(R cov) for (M, 3, 3) ``cov = sum w x y^T``, plus singular values."""
    u, s, vt = np.linalg.svd(cov)
    v = np.swapaxes(vt, -1, -2)
    ut = np.swapaxes(u, -1, -2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    fix = np.ones(s.shape)
    fix[..., 2] = d
    return (v * fix[..., None, :]) @ ut, s


def fit_rigid(src: np.ndarray, dst: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single weighted rigid fit ``dst ~ R src + t``."""
    ws = w / w.sum()
    cs, cd = ws @ src, ws @ dst
    cov = ((src - cs) * ws[:, None]).T @ (dst - cd)
    r, _ = _rotation_from_covariance(cov[None])
    return r[0], cd - r[0] @ cs


def mls_transform_batch(controls: ControlSet, points, alpha: float = DEFAULT_ALPHA
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Per-query rigid transforms for (M, 3) points: rotations (M, 3, 3), translations (M, 3)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y = controls.posed, controls.unposed
    w, coincident = _weights(x, points, alpha)
    pinned = coincident.any(axis=1)

    wsum = w.sum(axis=1, keepdims=True)
    cx = (w @ x) / wsum
    cy = (w @ y) / wsum
    if pinned.any():
        # limit p -> V_i: the centroid sits on the hit control and the remaining
        # controls, with their finite weights, fix the rotation about it
        ind = coincident[pinned].astype(np.float64)
        cnt = ind.sum(axis=1, keepdims=True)
        cx[pinned] = (ind @ x) / cnt
        cy[pinned] = (ind @ y) / cnt

    xc = x[None] - cx[:, None]
    yc = y[None] - cy[:, None]
    cov = np.einsum("mk,mki,mkj->mij", w, xc, yc)
    _check_spread(w, xc)
    rot, _ = _rotation_from_covariance(cov)
    trans = cy - np.einsum("mij,mj->mi", rot, cx)
    return rot, trans


def _check_spread(w: np.ndarray, xc: np.ndarray) -> None:
    """Raise when a weighted, centred posed set is (numerically) collinear.

    Positive weights cannot change the rank of the control set, which is checked
    at construction, so only rows with vanished weights need the SVD test.
    """
    rows = np.flatnonzero((w == 0.0).any(axis=1))
    if len(rows) == 0:
        return
    scaled = np.sqrt(w[rows])[..., None] * xc[rows]
    s = np.linalg.svd(scaled, compute_uv=False)
    bad = (s[:, 0] == 0.0) | (s[:, 1] <= COLLINEAR_EPS * s[:, 0])
    if bad.any():
        raise DegenerateControlsError(
            f"weighted control set is collinear at {int(bad.sum())} query point(s); rigid fit is ill-posed"
        )


def mls_transform(controls: ControlSet, p, alpha: float = DEFAULT_ALPHA) -> RigidTransform:
    rot, trans = mls_transform_batch(controls, np.asarray(p, dtype=np.float64).reshape(1, 3), alpha)
    return RigidTransform(rot[0], trans[0])


# ---------------------------------------------------------------------------
# Rotation field
# ---------------------------------------------------------------------------


def _min_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched smallest rotations taking unit vectors a onto b."""
    axis = np.cross(a, b)
    s = np.linalg.norm(axis, axis=-1)
    c = np.einsum("mi,mi->m", a, b)
    out = np.empty(a.shape[:-1] + (3, 3))
    for m in range(len(a)):
        if s[m] > 1e-12:
            k = axis[m] / s[m]
            kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
            out[m] = np.eye(3) + s[m] * kx + (1.0 - c[m]) * (kx @ kx)
        elif c[m] > 0:
            out[m] = np.eye(3)
        else:
            # antiparallel: half turn about any axis perpendicular to a
            perp = np.cross(a[m], [1.0, 0.0, 0.0])
            if np.linalg.norm(perp) < 1e-6:
                perp = np.cross(a[m], [0.0, 1.0, 0.0])
            perp /= np.linalg.norm(perp)
            out[m] = 2.0 * np.outer(perp, perp) - np.eye(3)
    return out


def _twist_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    k = axis
    zero = np.zeros(len(k))
    kx = np.stack([
        np.stack([zero, -k[:, 2], k[:, 1]], -1),
        np.stack([k[:, 2], zero, -k[:, 0]], -1),
        np.stack([-k[:, 1], k[:, 0], zero], -1),
    ], axis=1)
    s = np.sin(angle)[:, None, None]
    c = np.cos(angle)[:, None, None]
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def _pinned_rotation(n_pin: np.ndarray, m_pin: np.ndarray, w: np.ndarray, nt: np.ndarray, nc: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Rotations with R n_pin = m_pin exactly, twist about m_pin fitted to the weighted rest."""
    r0 = _min_rotation(n_pin, m_pin)
    a = np.einsum("mij,kj->mki", r0, nt)  # rest of the posed normals after the pin rotation
    b = nc[None]
    m = m_pin[:, None, :]
    ma = np.einsum("mki,mki->mk", np.broadcast_to(m, a.shape), a)
    mb = np.einsum("mki,mki->mk", np.broadcast_to(m, a.shape), np.broadcast_to(b, a.shape))
    ab = np.einsum("mki,ki->mk", a, nc)
    cross = np.einsum("mki,mki->mk", np.broadcast_to(b, a.shape), np.cross(np.broadcast_to(m, a.shape), a))
    cos_term = np.einsum("mk,mk->m", w, ab - ma * mb)
    sin_term = np.einsum("mk,mk->m", w, cross)
    scale = np.maximum(np.abs(cos_term), np.abs(sin_term))
    ambiguous = scale <= 1e-12 * np.maximum(w.sum(axis=1), 1e-300)
    angle = np.where(ambiguous, 0.0, np.arctan2(sin_term, cos_term))
    return _twist_rotation(m_pin, angle) @ r0, ambiguous


def mls_rotation_batch(controls: ControlSet, points, alpha: float = DEFAULT_ALPHA
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Rotation field at (M, 3) points: rotations (M, 3, 3) and an ambiguity mask (M,)."""
    if not controls.has_normals:
        raise ValueError("rotation field needs posed_normals and unposed_normals in the control set")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    nt, nc = controls.posed_normals, controls.unposed_normals
    w, coincident = _weights(controls.posed, points, alpha)

    hits = coincident.sum(axis=1)
    w_fit = np.where((hits > 1)[:, None], coincident.astype(np.float64), w)
    cov = np.einsum("mk,ki,kj->mij", w_fit, nt, nc)
    rot, s = _rotation_from_covariance(cov)
    ambiguous = s[:, 1] <= 1e-9 * s[:, 0]

    # one hit or one overwhelmingly dominant control: solve the constrained limit
    # problem R n_k = m_k, with the twist about m_k fitted to the other controls
    rows = np.arange(len(points))
    top = np.argmax(w, axis=1)
    wtop = w[rows, top]
    dominant = (w.sum(axis=1) - wtop) * PIN_RATIO < wtop
    k = np.where(hits == 1, np.argmax(coincident, axis=1), top)
    pin = (hits == 1) | ((hits == 0) & dominant)
    if pin.any():
        idx = np.flatnonzero(pin)
        kk = k[idx]
        wr = w[idx].copy()
        wr[np.arange(len(idx)), kk] = 0.0
        rot[idx], ambiguous[idx] = _pinned_rotation(nt[kk], nc[kk], wr, nt, nc)
    return rot, ambiguous


def mls_rotation(controls: ControlSet, p, alpha: float = DEFAULT_ALPHA) -> RigidTransform:
    """Rotation-field value at ``p`` as a zero-translation RigidTransform."""
    rot, amb = mls_rotation_batch(controls, np.asarray(p, dtype=np.float64).reshape(1, 3), alpha)
    return RigidTransform(rot[0], np.zeros(3), bool(amb[0]))


# ---------------------------------------------------------------------------
# Application and the surface-field baseline
# ---------------------------------------------------------------------------


def apply_to_point(transform: RigidTransform, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p @ transform.rotation.T + transform.translation


def apply_to_normal(rotation, n) -> np.ndarray:
    """Inverse rotation of a (canonical) normal: ``R^-1 n = R^T n``; no translation."""
    rot = rotation.rotation if isinstance(rotation, RigidTransform) else np.asarray(rotation, dtype=np.float64)
    return np.asarray(n, dtype=np.float64) @ rot


def sf_transform_batch(controls: ControlSet, points) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-triangle (by centroid) rigid motion for each of (M, 3) points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tree, rot, trans = controls._triangle_index
    _, idx = tree.query(points)
    return rot[idx], trans[idx]


def sf_transform(controls: ControlSet, p) -> RigidTransform:
    rot, trans = sf_transform_batch(controls, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return RigidTransform(rot[0], trans[0])


def displacement(controls: ControlSet, points, method: str = "mls", alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``T(p)(p) - p`` for (M, 3) points under the chosen field."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if method == "mls":
        rot, trans = mls_transform_batch(controls, points, alpha)
    elif method == "sf":
        rot, trans = sf_transform_batch(controls, points)
    else:
        raise ValueError(f"unknown deformation method {method!r}; expected 'mls' or 'sf'")
    return np.einsum("mij,mj->mi", rot, points) + trans - points
