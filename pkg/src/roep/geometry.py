"""Deterministic tabletop geometry: camera ring, box silhouettes, occlusion.

Objects are upright rectangular boxes standing on a circular table; the
camera moves on a surrounding ring in 30-degree increments and always
gazes at the table center.  Visibility is decided analytically from the
projected convex silhouettes of the boxes: an object is fully occluded
when its silhouette lies entirely inside a nearer object's silhouette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi
STEP_DEG = 30.0
NUM_VIEWPOINTS = 12


class SizeCategory(IntEnum):
    """Relative object size; ordering Small < Medium < Large."""

    SMALL = 0
    MEDIUM = 1
    LARGE = 2

    @classmethod
    def parse(cls, text: str) -> "SizeCategory":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown size category: {text!r}") from None

    def __str__(self) -> str:
        return self.name.capitalize()


class OcclusionLevel(IntEnum):
    """How much of a target an occluder hides, from a given camera."""

    NOT_OCCLUDED = 0
    PARTIALLY_OCCLUDED = 1
    FULLY_OCCLUDED = 2


class Action(Enum):
    """Agent actions: circle the table one 30-degree step, or stop."""

    CIRCLE_LEFT = 0
    CIRCLE_RIGHT = 1
    STOP = 2


@dataclass(frozen=True)
class Point3:
    """A point in meters; components must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError("Point3 components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class ObjectSpec:
    """Catalog entry: a named box with dimensions in centimeters.

    Category height bounds: Large >= 21 cm, Medium within [5, 14] cm,
    Small <= 3 cm.
    """

    name: str
    category: SizeCategory
    width: float
    depth: float
    height: float

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError(f"{self.name}: dimensions must be positive")
        h = self.height
        if self.category is SizeCategory.LARGE and h < 21.0:
            raise ValueError(f"{self.name}: Large objects are at least 21 cm tall")
        if self.category is SizeCategory.MEDIUM and not (5.0 <= h <= 14.0):
            raise ValueError(f"{self.name}: Medium heights lie in [5, 14] cm")
        if self.category is SizeCategory.SMALL and h > 3.0:
            raise ValueError(f"{self.name}: Small objects are at most 3 cm tall")

    @property
    def width_m(self) -> float:
        return self.width / 100.0

    @property
    def depth_m(self) -> float:
        return self.depth / 100.0

    @property
    def height_m(self) -> float:
        return self.height / 100.0


@dataclass(frozen=True)
class PlacedObject:
    """A catalog object standing on the table at `center` (z = table top)."""

    spec: ObjectSpec
    center: Point3
    yaw: float

    def volume_center(self) -> np.ndarray:
        return np.array(
            [self.center.x, self.center.y, self.center.z + 0.5 * self.spec.height_m]
        )


@dataclass(frozen=True)
class TableParams:
    radius: float = 0.5
    height: float = 0.75


@dataclass(frozen=True)
class RingParams:
    """Camera ring around the table; gaze aims at the table-center axis."""

    radius: float = 1.2
    height: float = 1.1
    look_z: float = 0.75


DEFAULT_TABLE = TableParams()
DEFAULT_RING = RingParams()


@dataclass(frozen=True)
class Viewpoint:
    """One of the 12 camera stations; azimuth = index * 30 degrees.

    The index increases counterclockwise seen from above; circle_left
    decrements it (clockwise motion), circle_right increments it.
    """

    index: int

    def __post_init__(self):
        object.__setattr__(self, "index", self.index % NUM_VIEWPOINTS)

    @property
    def azimuth(self) -> float:
        return math.radians(self.index * STEP_DEG)

    def moved(self, action: Action) -> "Viewpoint":
        if action is Action.CIRCLE_LEFT:
            return Viewpoint(self.index - 1)
        if action is Action.CIRCLE_RIGHT:
            return Viewpoint(self.index + 1)
        return self


def camera_pose(
    viewpoint: Viewpoint | int, ring: RingParams = DEFAULT_RING
) -> tuple[np.ndarray, np.ndarray]:
    """Camera position and unit gaze direction for a ring station."""
    index = viewpoint.index if isinstance(viewpoint, Viewpoint) else int(viewpoint)
    az = math.radians((index % NUM_VIEWPOINTS) * STEP_DEG)
    pos = np.array([ring.radius * math.cos(az), ring.radius * math.sin(az), ring.height])
    gaze = np.array([0.0, 0.0, ring.look_z]) - pos
    return pos, gaze / np.linalg.norm(gaze)


def _foot(obj: PlacedObject) -> list[tuple[float, float]]:
    """Footprint corners (CCW) as plain tuples; hot-path variant."""
    w2 = 0.5 * obj.spec.width_m
    d2 = 0.5 * obj.spec.depth_m
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    cx, cy = obj.center.x, obj.center.y
    ax, ay = c * w2, s * w2
    bx, by = -s * d2, c * d2
    return [
        (cx + ax + bx, cy + ay + by),
        (cx - ax + bx, cy - ay + by),
        (cx - ax - bx, cy - ay - by),
        (cx + ax - bx, cy + ay - by),
    ]


def footprint_corners(obj: PlacedObject) -> np.ndarray:
    """The 4 table-plane corners of the object's footprint, shape (4, 2)."""
    return np.array(_foot(obj))


def box_corners(obj: PlacedObject) -> np.ndarray:
    """All 8 corners of the upright box, shape (8, 3)."""
    foot = _foot(obj)
    z0 = obj.center.z
    z1 = z0 + obj.spec.height_m
    return np.array([(x, y, z) for z in (z0, z1) for x, y in foot])


def footprint_in_disc(obj: PlacedObject, table: TableParams = DEFAULT_TABLE) -> bool:
    r2 = table.radius * table.radius
    return all(x * x + y * y <= r2 for x, y in _foot(obj))


def footprints_disjoint(a: PlacedObject, b: PlacedObject) -> bool:
    """True when the two footprint rectangles do not overlap (SAT)."""
    fa, fb = _foot(a), _foot(b)
    for rect, other in ((fa, fb), (fb, fa)):
        for k in (0, 1):  # the two edge directions of the rectangle
            nx = rect[k + 1][1] - rect[k][1]
            ny = rect[k][0] - rect[k + 1][0]
            pr = [nx * x + ny * y for x, y in rect]
            po = [nx * x + ny * y for x, y in other]
            if max(po) < min(pr) or min(po) > max(pr):
                return True
    return False


# ---------------------------------------------------------------------------
# 2-D convex machinery (silhouettes are convex polygons of <= 8 vertices)

def _hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Counterclockwise convex hull (monotone chain) of 2-D tuples."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                ox, oy = chain[-2]
                ax, ay = chain[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    return lower[:-1] + upper[:-1]


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counterclockwise convex hull of an (n, 2) array, shape (m, 2)."""
    return np.array(_hull([tuple(p) for p in np.asarray(points, float)]))


class _Silhouette:
    """Projected box outline with cached SAT data.

    hull: CCW vertices (m, 2); normals: inward unit edge normals (m, 2);
    offsets: hull[e] . normals[e]; lo/hi: extents of the hull along its
    own normals.  A point p is inside iff p . normals - offsets >= 0.
    """

    __slots__ = ("obj", "uv", "hull", "normals", "offsets", "lo", "hi")

    def __init__(self, obj: PlacedObject, uv: np.ndarray):
        self.obj = obj
        self.uv = uv
        hull = np.array(_hull(list(map(tuple, uv.tolist()))))
        self.hull = hull
        edges = np.empty_like(hull)
        edges[:-1] = hull[1:]
        edges[-1] = hull[0]
        edges -= hull
        normals = np.empty_like(edges)
        normals[:, 0] = -edges[:, 1]
        normals[:, 1] = edges[:, 0]
        normals /= np.sqrt((normals * normals).sum(axis=1))[:, None]
        self.normals = normals
        self.offsets = (hull * normals).sum(axis=1)
        own = hull @ normals.T
        self.lo = own.min(axis=0)
        self.hi = own.max(axis=0)


def _pair_gap(a: _Silhouette, b: _Silhouette) -> float:
    """Largest signed gap over both silhouettes' separating axes.

    Positive: disjoint by that distance.  Negative: overlapping with
    penetration depth -gap.
    """
    pb = b.hull @ a.normals.T
    gap = float(np.maximum(pb.min(axis=0) - a.hi, a.lo - pb.max(axis=0)).max())
    pa = a.hull @ b.normals.T
    gap_b = float(np.maximum(pa.min(axis=0) - b.hi, b.lo - pa.max(axis=0)).max())
    return max(gap, gap_b)


def _depth_matrix(points: np.ndarray, sil: _Silhouette) -> np.ndarray:
    """Signed line distance of each point to each hull edge (+ inside)."""
    return points @ sil.normals.T - sil.offsets


def _distance_to_polygon(points: np.ndarray, hull: np.ndarray) -> np.ndarray:
    """Exact euclidean distance of points to a polygon's boundary."""
    seg_a = hull
    seg_b = np.roll(hull, -1, axis=0)
    p = points[:, None, :]
    ab = (seg_b - seg_a)[None, :, :]
    t = np.clip(
        np.einsum("pek,pek->pe", p - seg_a[None], ab)
        / np.maximum(np.einsum("pek,pek->pe", ab, ab), 1e-300),
        0.0,
        1.0,
    )
    closest = seg_a[None] + t[..., None] * ab
    return np.sqrt(np.einsum("pek,pek->pe", p - closest, p - closest).min(axis=1))


# ---------------------------------------------------------------------------
# Projection and occlusion

class _CameraFrame:
    """Orthonormal frame (forward, right, up) anchored at the camera."""

    __slots__ = ("camera", "forward", "right", "up", "_basis")

    def __init__(self, camera: np.ndarray, toward: np.ndarray):
        fx = toward[0] - camera[0]
        fy = toward[1] - camera[1]
        fz = toward[2] - camera[2]
        fn = math.sqrt(fx * fx + fy * fy + fz * fz)
        fx, fy, fz = fx / fn, fy / fn, fz / fn
        # right = forward x z_up, horizontal by construction
        rn = math.hypot(fy, fx)
        rx, ry = fy / rn, -fx / rn
        # up = right x forward
        ux = ry * fz
        uy = -rx * fz
        uz = rx * fy - ry * fx
        self.camera = camera
        self.forward = np.array([fx, fy, fz])
        self.right = np.array([rx, ry, 0.0])
        self.up = np.array([ux, uy, uz])
        self._basis = np.array(
            [[rx, ux, fx], [ry, uy, fy], [0.0, uz, fz]]
        )

    def project(self, points: np.ndarray) -> np.ndarray:
        """Perspective projection onto the plane at unit forward distance."""
        ruf = (points - self.camera) @ self._basis
        depth = ruf[:, 2]
        if np.any(depth <= 0):
            raise ValueError("point behind the camera plane")
        return ruf[:, :2] / depth[:, None]

    def silhouette(self, obj: PlacedObject) -> _Silhouette:
        return _Silhouette(obj, self.project(box_corners(obj)))


def _ray_box_entry(
    origin: np.ndarray, direction: np.ndarray, obj: PlacedObject
) -> float | None:
    """Entry parameter of a ray into the box, or None if it misses."""
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    ox = origin[0] - obj.center.x
    oy = origin[1] - obj.center.y
    oz = origin[2] - obj.center.z
    o = (c * ox + s * oy, -s * ox + c * oy, oz)
    d = (
        c * direction[0] + s * direction[1],
        -s * direction[0] + c * direction[1],
        direction[2],
    )
    w2 = 0.5 * obj.spec.width_m
    d2 = 0.5 * obj.spec.depth_m
    bounds = ((-w2, w2), (-d2, d2), (0.0, obj.spec.height_m))
    t_near, t_far = -math.inf, math.inf
    for k in range(3):
        dk = d[k]
        lo, hi = bounds[k]
        if dk == 0.0:
            if not (lo <= o[k] <= hi):
                return None
            continue
        t1 = (lo - o[k]) / dk
        t2 = (hi - o[k]) / dk
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_near:
            t_near = t1
        if t2 < t_far:
            t_far = t2
    if t_near > t_far or t_far <= 0:
        return None
    return t_near


def _nudge_inward(vertex: np.ndarray, own_hull: np.ndarray, depth: float) -> np.ndarray:
    """Move a hull vertex strictly into its own interior without leaving
    the other silhouette (displacement stays below `depth`)."""
    centroid = own_hull.mean(axis=0)
    offset = centroid - vertex
    dist = math.hypot(offset[0], offset[1])
    if dist == 0.0:
        return vertex
    step = min(0.5 * depth, 0.25 * dist)
    return vertex + (step / dist) * offset


def _overlap_probe(occ: _Silhouette, tgt: _Silhouette, depth_tgt: np.ndarray) -> np.ndarray | None:
    """A point strictly interior to both silhouettes, or None if degenerate.

    Probe rays through hull vertices can graze their own box and miss it
    numerically, so the chosen vertex is nudged toward its hull centroid.
    """
    per_point = depth_tgt.min(axis=1)
    k = int(per_point.argmax())
    if per_point[k] > 0:
        return _nudge_inward(tgt.uv[k], tgt.hull, per_point[k])
    occ_in_tgt = _depth_matrix(occ.hull, tgt).min(axis=1)
    k = int(occ_in_tgt.argmax())
    if occ_in_tgt[k] > 0:
        return _nudge_inward(occ.hull[k], occ.hull, occ_in_tgt[k])
    # crossing overlap: average the boundary intersection points
    hits = []
    ha, hb = occ.hull, tgt.hull
    for i in range(len(ha)):
        a0, a1 = ha[i], ha[(i + 1) % len(ha)]
        for j in range(len(hb)):
            b0, b1 = hb[j], hb[(j + 1) % len(hb)]
            r = a1 - a0
            q = b1 - b0
            denom = r[0] * q[1] - r[1] * q[0]
            if denom == 0.0:
                continue
            w = b0 - a0
            t = (w[0] * q[1] - w[1] * q[0]) / denom
            u = (w[0] * r[1] - w[1] * r[0]) / denom
            if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
                hits.append(a0 + t * r)
    if len(hits) < 2:
        return None
    return np.mean(hits, axis=0)


def _classify(
    cam: np.ndarray,
    frame: _CameraFrame,
    occ: _Silhouette,
    tgt: _Silhouette,
    exact_margin: bool = False,
) -> tuple[OcclusionLevel, float]:
    """Shared occlusion decision; margin is in image-plane units."""
    gap = _pair_gap(occ, tgt)
    if gap > 0:
        return OcclusionLevel.NOT_OCCLUDED, gap

    depth_tgt = _depth_matrix(tgt.uv, occ)
    probe = _overlap_probe(occ, tgt, depth_tgt)
    if probe is None:
        return OcclusionLevel.NOT_OCCLUDED, 0.0
    direction = frame.forward + probe[0] * frame.right + probe[1] * frame.up
    t_occ = _ray_box_entry(cam, direction, occ.obj)
    t_tgt = _ray_box_entry(cam, direction, tgt.obj)
    if t_occ is None or t_tgt is None:
        # numerically grazing probe; fall back to center distances
        t_occ = float(np.linalg.norm(occ.obj.volume_center() - cam))
        t_tgt = float(np.linalg.norm(tgt.obj.volume_center() - cam))
    if t_tgt < t_occ:
        return OcclusionLevel.NOT_OCCLUDED, -gap

    inner = float(depth_tgt.min())
    if inner > 0:
        return OcclusionLevel.FULLY_OCCLUDED, inner
    if exact_margin:
        # distance to the Fully boundary: the worst outside vertex must
        # travel this far; distance to NotOccluded is the penetration -gap
        outside = tgt.uv[depth_tgt.min(axis=1) < 0]
        to_full = float(_distance_to_polygon(outside, occ.hull).max())
        return OcclusionLevel.PARTIALLY_OCCLUDED, min(-gap, to_full)
    return OcclusionLevel.PARTIALLY_OCCLUDED, min(-gap, -inner)


def _check_occlusion_args(
    cam: np.ndarray, occluder: PlacedObject, target: PlacedObject, table: TableParams
) -> None:
    if occluder is target or (
        occluder.spec == target.spec
        and occluder.center == target.center
        and occluder.yaw == target.yaw
    ):
        raise ValueError("occluder and target must be distinct objects")
    if cam[0] ** 2 + cam[1] ** 2 <= table.radius**2:
        raise ValueError("camera must lie outside the table disc")
    for obj in (occluder, target):
        if min(obj.spec.width_m, obj.spec.depth_m, obj.spec.height_m) <= 0:
            raise ValueError("degenerate object")


def occlusion_with_margin(
    camera: Point3 | np.ndarray,
    occluder: PlacedObject,
    target: PlacedObject,
    table: TableParams = DEFAULT_TABLE,
) -> tuple[OcclusionLevel, float]:
    """Occlusion level plus the decision margin in image-plane units.

    The margin is the distance (in projected units, approximately radians
    at these viewing angles) to the nearest classification boundary;
    hairline configurations carry small margins.
    """
    cam = camera.as_array() if isinstance(camera, Point3) else np.asarray(camera, float)
    _check_occlusion_args(cam, occluder, target, table)
    frame = _CameraFrame(cam, occluder.volume_center())
    return _classify(
        cam, frame, frame.silhouette(occluder), frame.silhouette(target), exact_margin=True
    )


def occlusion_level(
    camera: Point3 | np.ndarray,
    occluder: PlacedObject,
    target: PlacedObject,
    table: TableParams = DEFAULT_TABLE,
) -> OcclusionLevel:
    """How much `occluder` hides `target` as seen from `camera`.

    Fully occluded means the target's silhouette lies inside the
    occluder's and the occluder is the nearer body; partial means the
    silhouettes overlap without containment; a target that is itself the
    nearer body is never occluded.
    """
    cam = camera.as_array() if isinstance(camera, Point3) else np.asarray(camera, float)
    _check_occlusion_args(cam, occluder, target, table)
    frame = _CameraFrame(cam, occluder.volume_center())
    return _classify(cam, frame, frame.silhouette(occluder), frame.silhouette(target))[0]


@dataclass(frozen=True)
class VisibleObject:
    obj: PlacedObject
    apparent_height: float
    bearing: float


def visible_set(
    viewpoint: Viewpoint | int,
    objects: list[PlacedObject],
    ring: RingParams = DEFAULT_RING,
    table: TableParams = DEFAULT_TABLE,
) -> list[VisibleObject]:
    """Objects not fully occluded by another, sorted by bearing.

    apparent_height = 2 atan(h / 2d) with d the camera-to-center distance;
    bearing is the horizontal signed angle from the gaze direction to the
    object (positive toward the camera's left).
    """
    cam, gaze = camera_pose(viewpoint, ring)
    out = []
    for i, obj in enumerate(objects):
        hidden = False
        for j, other in enumerate(objects):
            if i == j:
                continue
            frame = _CameraFrame(cam, other.volume_center())
            level, _ = _classify(cam, frame, frame.silhouette(other), frame.silhouette(obj))
            if level is OcclusionLevel.FULLY_OCCLUDED:
                hidden = True
                break
        if hidden:
            continue
        center = obj.volume_center()
        d = center - cam
        dist = float(np.linalg.norm(d))
        apparent = 2.0 * math.atan(obj.spec.height_m / (2.0 * dist))
        gx, gy = gaze[0], gaze[1]
        bearing = math.atan2(gx * d[1] - gy * d[0], gx * d[0] + gy * d[1])
        out.append(VisibleObject(obj, apparent, bearing))
    out.sort(key=lambda v: v.bearing)
    return out
