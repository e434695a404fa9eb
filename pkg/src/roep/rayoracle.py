"""Brute-force occlusion oracle based on ray sampling.

Independent of the analytic silhouette classifier: rays are aimed
uniformly over the target's projected outline (by image-plane area), and
each ray is tested for whether it enters the occluder before the target.
The target is fully occluded when every ray is blocked, unoccluded when
none is.  Used to validate `geometry.occlusion_level`.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import OcclusionLevel, PlacedObject, Point3, box_corners, convex_hull


def _to_local(obj: PlacedObject, points: np.ndarray, translate: bool) -> np.ndarray:
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    p = points.copy()
    if translate:
        p -= np.array([obj.center.x, obj.center.y, obj.center.z])
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] + s * p[:, 1]
    out[:, 1] = -s * p[:, 0] + c * p[:, 1]
    out[:, 2] = p[:, 2]
    return out


def silhouette_ray_directions(
    camera: np.ndarray, target: PlacedObject, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n ray directions covering the target's outline uniformly by area.

    The box's projection is the convex hull of its projected corners;
    sampling the hull's triangles area-uniformly resolves hairline
    occlusion slivers that surface-point sampling would miss.
    """
    center = target.volume_center()
    fwd = center - camera
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)

    d = box_corners(target) - camera
    depth = d @ fwd
    uv = np.stack([(d @ right) / depth, (d @ up) / depth], axis=1)
    hull = convex_hull(uv)
    anchor = hull[0]
    tri_a = hull[1:-1] - anchor
    tri_b = hull[2:] - anchor
    areas = 0.5 * np.abs(tri_a[:, 0] * tri_b[:, 1] - tri_a[:, 1] * tri_b[:, 0])
    total = areas.sum()
    if total <= 0:  # degenerate outline; aim everything at the center
        return np.tile(center - camera, (n, 1))
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    pts = (
        anchor
        + (r1 * (1 - r2))[:, None] * tri_a[tri]
        + (r1 * r2)[:, None] * tri_b[tri]
    )
    return fwd[None, :] + pts[:, 0:1] * right[None, :] + pts[:, 1:2] * up[None, :]


def ray_entries(origin: np.ndarray, dirs: np.ndarray, obj: PlacedObject) -> np.ndarray:
    """Entry parameter of each ray into the box; +inf where a ray misses."""
    o = _to_local(obj, origin[None, :], translate=True)[0]
    d = _to_local(obj, dirs, translate=False)
    lo = np.array([-0.5 * obj.spec.width_m, -0.5 * obj.spec.depth_m, 0.0])
    hi = np.array([0.5 * obj.spec.width_m, 0.5 * obj.spec.depth_m, obj.spec.height_m])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, :] - o[None, :]) / d
        t2 = (hi[None, :] - o[None, :]) / d
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    # rays parallel to a slab: hit only if the origin lies inside it
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    near[parallel] = -np.inf
    far[parallel] = np.inf
    miss_parallel = parallel & ~inside[None, :].repeat(len(d), axis=0)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    hit = (t_near <= t_far) & (t_far > 0) & ~miss_parallel.any(axis=1)
    return np.where(hit, t_near, np.inf)


def ray_occlusion_level(
    camera: Point3 | np.ndarray,
    occluder: PlacedObject,
    target: PlacedObject,
    n_rays: int = 10_000,
    rng: np.random.Generator | None = None,
) -> OcclusionLevel:
    """Classify occlusion of `target` by `occluder` via ray statistics."""
    rng = rng if rng is not None else np.random.default_rng(0)
    cam = camera.as_array() if isinstance(camera, Point3) else np.asarray(camera, float)
    dirs = silhouette_ray_directions(cam, target, n_rays, rng)
    t_tgt = ray_entries(cam, dirs, target)
    t_occ = ray_entries(cam, dirs, occluder)
    valid = np.isfinite(t_tgt)
    blocked = t_occ[valid] < t_tgt[valid]
    n_blocked = int(blocked.sum())
    if n_blocked == 0:
        return OcclusionLevel.NOT_OCCLUDED
    if n_blocked == int(valid.sum()):
        return OcclusionLevel.FULLY_OCCLUDED
    return OcclusionLevel.PARTIALLY_OCCLUDED
