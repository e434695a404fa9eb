"""Conditional generation of (scene, query, label) triplets.

A sample is drawn query-first: the query word is uniform over the
catalog, the ground-truth label is a fair coin, and a scene consistent
with (query, label, scene type) is then constructed by rejection
sampling.  Two-object scenes always pair objects from two distinct size
categories, and never use a pair listed in the holdout set.

Placement distribution: the first (or occluding) object is uniform over
in-table placements; the second object is uniform over its feasible
region given the first.  A conservative bearing/distance pre-filter
discards hopeless occludee proposals before the exact occlusion test;
the filter provably never rejects a feasible placement, so it leaves the
accepted distribution unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np

from .catalog import Catalog
from .geometry import (
    DEFAULT_RING,
    DEFAULT_TABLE,
    ObjectSpec,
    OcclusionLevel,
    PlacedObject,
    Point3,
    RingParams,
    SizeCategory,
    TableParams,
    _CameraFrame,
    _classify,
    camera_pose,
    footprint_in_disc,
    footprints_disjoint,
)

PLACEMENT_RETRIES = 1000
IDENTITY_REDRAWS = 64


class GenerationError(RuntimeError):
    """The requested (query, label, scene type) cannot be generated."""


class SceneType(Enum):
    ONE_VISIBLE = "1-vis"
    TWO_VISIBLE = "2-vis"
    TWO_OCCLUDED = "2-occ"


class DataLevel(Enum):
    L1_1VIS = "L1-1-vis"
    L2_2VIS = "L2-2-vis"
    L3_2OCC = "L3-2-occ"
    L4_OVERALL = "L4-overall"

    @classmethod
    def parse(cls, text: str) -> "DataLevel":
        t = text.strip()
        for level in cls:
            if t == level.value or t.upper() == level.value.split("-")[0]:
                return level
        raise ValueError(f"unknown data level: {text!r}")


_LEVEL_TYPE = {
    DataLevel.L1_1VIS: SceneType.ONE_VISIBLE,
    DataLevel.L2_2VIS: SceneType.TWO_VISIBLE,
    DataLevel.L3_2OCC: SceneType.TWO_OCCLUDED,
}


def pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def all_cross_pairs(catalog: Catalog) -> list[tuple[str, str]]:
    """Every unordered pair of objects from two distinct categories."""
    pairs = []
    cats = {c: catalog.by_category(c) for c in SizeCategory}
    for ca, cb in [(SizeCategory.LARGE, SizeCategory.MEDIUM),
                   (SizeCategory.LARGE, SizeCategory.SMALL),
                   (SizeCategory.MEDIUM, SizeCategory.SMALL)]:
        for a, b in product(cats[ca], cats[cb]):
            pairs.append(pair_key(a.name, b.name))
    return pairs


def make_holdout(rng: np.random.Generator, per_pair_count: int, catalog: Catalog) -> frozenset:
    """Hold out `per_pair_count` pairs from each category-pair family.

    Redraws until every object still appears in at least one remaining
    pair, so nothing vanishes from the training distribution entirely.
    """
    if per_pair_count == 0:
        return frozenset()
    cats = {c: [s.name for s in catalog.by_category(c)] for c in SizeCategory}
    families = [
        (cats[SizeCategory.LARGE], cats[SizeCategory.MEDIUM]),
        (cats[SizeCategory.LARGE], cats[SizeCategory.SMALL]),
        (cats[SizeCategory.MEDIUM], cats[SizeCategory.SMALL]),
    ]
    max_per_family = min(len(a) * len(b) for a, b in families)
    if per_pair_count < 0 or per_pair_count > max_per_family:
        raise ValueError(f"per_pair_count must lie in [0, {max_per_family}]")

    all_names = set(catalog.names())
    while True:
        held = set()
        for a_names, b_names in families:
            pairs = [pair_key(a, b) for a, b in product(a_names, b_names)]
            idx = rng.choice(len(pairs), size=per_pair_count, replace=False)
            held.update(pairs[i] for i in idx)
        remaining = set(all_cross_pairs(catalog)) - held
        covered = {n for p in remaining for n in p}
        if covered == all_names:
            return frozenset(held)


@dataclass(frozen=True)
class Sample:
    """One task instance: a scene plus the query word and its truth."""

    scene: tuple[PlacedObject, ...]
    scene_type: SceneType
    query: str
    label: bool

    def object_names(self) -> list[str]:
        return [o.spec.name for o in self.scene]


class SceneGenerator:
    """Draws samples for one data level; owns no RNG state of its own.

    holdout_mode: "exclude" keeps held-out pairs away from generated
    scenes (training), "only" restricts two-object scenes to held-out
    pairs (generalization testing), "all" ignores the holdout.
    """

    def __init__(
        self,
        catalog: Catalog,
        holdout: frozenset = frozenset(),
        holdout_mode: str = "exclude",
        table: TableParams = DEFAULT_TABLE,
        ring: RingParams = DEFAULT_RING,
    ):
        if holdout_mode not in ("exclude", "only", "all"):
            raise ValueError(f"unknown holdout_mode: {holdout_mode!r}")
        if holdout_mode == "only" and not holdout:
            raise ValueError("holdout_mode='only' requires a non-empty holdout set")
        self.catalog = catalog
        self.table = table
        self.ring = ring
        self.holdout = frozenset(holdout)
        self.holdout_mode = holdout_mode
        self.camera, _ = camera_pose(0, ring)
        self._cam_xy = self.camera[:2]

        pairs = all_cross_pairs(catalog)
        if holdout_mode == "exclude":
            pairs = [p for p in pairs if p not in self.holdout]
        elif holdout_mode == "only":
            pairs = [p for p in pairs if p in self.holdout]
        self.pairs = pairs
        if not pairs:
            raise ValueError("no admissible cross-category pairs remain")

    # -- identity draws ----------------------------------------------------

    def _names_in_pairs(self) -> set[str]:
        return {n for p in self.pairs for n in p}

    def draw_query(self, rng: np.random.Generator, scene_type: SceneType, label: bool) -> str:
        names = self.catalog.names()
        if self.holdout_mode == "only" and scene_type is not SceneType.ONE_VISIBLE and label:
            names = sorted(self._names_in_pairs())
        return names[rng.integers(len(names))]

    def _partner_options(self, query: str) -> list[str]:
        return [b if a == query else a for a, b in self.pairs if query in (a, b)]

    def _occlusion_roles(self, query: str, label: bool) -> list[tuple[str, str]]:
        """Admissible (occluder, occludee) identities; occluder is the
        strictly larger category."""
        cat = {s.name: s.category for s in self.catalog}
        roles = []
        if label:
            for partner in self._partner_options(query):
                if cat[partner] < cat[query]:
                    roles.append((query, partner))
                elif cat[partner] > cat[query]:
                    roles.append((partner, query))
        else:
            for a, b in self.pairs:
                if query in (a, b):
                    continue
                occ, tgt = (a, b) if cat[a] > cat[b] else (b, a)
                roles.append((occ, tgt))
        return roles

    def _visible_pairs(self, query: str, label: bool) -> list[tuple[str, str]]:
        if label:
            return [(query, p) for p in self._partner_options(query)]
        return [p for p in self.pairs if query not in p]

    # -- placement ---------------------------------------------------------

    def _place_one(self, spec: ObjectSpec, rng: np.random.Generator) -> PlacedObject | None:
        r = self.table.radius * math.sqrt(rng.random())
        phi = rng.random() * 2.0 * math.pi
        yaw = rng.random() * 2.0 * math.pi
        obj = PlacedObject(
            spec, Point3(r * math.cos(phi), r * math.sin(phi), self.table.height), yaw
        )
        return obj if footprint_in_disc(obj, self.table) else None

    def _sample_one_visible(self, name: str, rng) -> tuple[PlacedObject, ...]:
        spec = self.catalog.get(name)
        for _ in range(PLACEMENT_RETRIES):
            obj = self._place_one(spec, rng)
            if obj is not None:
                return (obj,)
        raise GenerationError(f"cannot place {name} on the table")

    def _both_visible(self, a: PlacedObject, b: PlacedObject) -> bool:
        fa = _CameraFrame(self.camera, a.volume_center())
        if (
            _classify(self.camera, fa, fa.silhouette(a), fa.silhouette(b))[0]
            is OcclusionLevel.FULLY_OCCLUDED
        ):
            return False
        fb = _CameraFrame(self.camera, b.volume_center())
        return (
            _classify(self.camera, fb, fb.silhouette(b), fb.silhouette(a))[0]
            is not OcclusionLevel.FULLY_OCCLUDED
        )

    def _sample_two_visible(self, name_a: str, name_b: str, rng) -> tuple[PlacedObject, ...] | None:
        spec_a, spec_b = self.catalog.get(name_a), self.catalog.get(name_b)
        for _ in range(PLACEMENT_RETRIES):
            a = self._place_one(spec_a, rng)
            b = self._place_one(spec_b, rng)
            if a is None or b is None or not footprints_disjoint(a, b):
                continue
            if self._both_visible(a, b):
                return (a, b)
        return None

    def _sample_two_occluded(self, occ_name: str, tgt_name: str, rng) -> tuple[PlacedObject, ...] | None:
        occ_spec, tgt_spec = self.catalog.get(occ_name), self.catalog.get(tgt_name)
        occluder = None
        while occluder is None:
            occluder = self._place_one(occ_spec, rng)
        frame = _CameraFrame(self.camera, occluder.volume_center())
        occ_sil = frame.silhouette(occluder)
        # conservative pre-filter window: the occludee's top-face center
        # projects inside the occluder's silhouette whenever it is fully
        # hidden, so candidates outside the (padded) window are hopeless
        u_lo = float(occ_sil.uv[:, 0].min()) - 0.01
        u_hi = float(occ_sil.uv[:, 0].max()) + 0.01
        v_hi = float(occ_sil.uv[:, 1].max()) + 0.01
        r_occ = 0.5 * math.hypot(occ_spec.width_m, math.hypot(occ_spec.depth_m, occ_spec.height_m))
        r_tgt = 0.5 * math.hypot(tgt_spec.width_m, math.hypot(tgt_spec.depth_m, tgt_spec.height_m))
        d_occ = math.dist(self._cam_xy, (occluder.center.x, occluder.center.y))
        d_min = d_occ - r_occ - r_tgt - 0.1  # occludee cannot be nearer than this
        # beyond this distance the sight line over the occluder's top clears
        # the occludee's top, so full occlusion is impossible
        cam_h = self.ring.height - self.table.height
        if cam_h > occ_spec.height_m:
            d_max = (
                (d_occ + r_occ) * (cam_h - tgt_spec.height_m) / (cam_h - occ_spec.height_m)
                + r_tgt
                + 0.05
            )
        else:
            d_max = math.inf
        cx, cy, cz = self.camera
        fw, rt, up = frame.forward, frame.right, frame.up
        z_top = self.table.height + tgt_spec.height_m - cz

        for _ in range(PLACEMENT_RETRIES):
            r = self.table.radius * math.sqrt(rng.random())
            phi = rng.random() * 2.0 * math.pi
            x, y = r * math.cos(phi), r * math.sin(phi)
            dx, dy = x - cx, y - cy
            dh = math.hypot(dx, dy)
            if dh < d_min or dh > d_max:
                continue
            depth = dx * fw[0] + dy * fw[1] + z_top * fw[2]
            u = (dx * rt[0] + dy * rt[1]) / depth
            if not (u_lo <= u <= u_hi):
                continue
            v = (dx * up[0] + dy * up[1] + z_top * up[2]) / depth
            if v > v_hi:
                continue
            target = PlacedObject(
                tgt_spec, Point3(x, y, self.table.height), rng.random() * 2.0 * math.pi
            )
            if not footprint_in_disc(target, self.table):
                continue
            if not footprints_disjoint(occluder, target):
                continue
            level, _ = _classify(self.camera, frame, occ_sil, frame.silhouette(target))
            if level is OcclusionLevel.FULLY_OCCLUDED:
                return (occluder, target)
        return None

    # -- top-level draws ---------------------------------------------------

    def sample(self, level: DataLevel, rng: np.random.Generator) -> Sample:
        if level is DataLevel.L4_OVERALL:
            scene_type = list(SceneType)[rng.integers(3)]
        else:
            scene_type = _LEVEL_TYPE[level]
        label = bool(rng.random() < 0.5)
        query = self.draw_query(rng, scene_type, label)

        if scene_type is SceneType.ONE_VISIBLE:
            if label:
                scene = self._sample_one_visible(query, rng)
            else:
                others = [n for n in self.catalog.names() if n != query]
                scene = self._sample_one_visible(others[rng.integers(len(others))], rng)
            return Sample(scene, scene_type, query, label)

        if scene_type is SceneType.TWO_VISIBLE:
            options = self._visible_pairs(query, label)
            if not options:
                raise GenerationError(
                    f"no admissible pair for query={query!r} label={label}"
                )
            for _ in range(IDENTITY_REDRAWS):
                a, b = options[rng.integers(len(options))]
                scene = self._sample_two_visible(a, b, rng)
                if scene is not None:
                    return Sample(scene, scene_type, query, label)
            raise GenerationError(f"two-visible placement failed for query={query!r}")

        options = self._occlusion_roles(query, label)
        if not options:
            raise GenerationError(
                f"no admissible occlusion pair for query={query!r} label={label}"
            )
        for _ in range(IDENTITY_REDRAWS):
            occ, tgt = options[rng.integers(len(options))]
            scene = self._sample_two_occluded(occ, tgt, rng)
            if scene is not None:
                return Sample(scene, scene_type, query, label)
        raise GenerationError(f"occluded placement failed for query={query!r}")


def generate_sample(
    level: DataLevel,
    holdout: frozenset,
    rng: np.random.Generator,
    catalog: Catalog,
    **kwargs,
) -> Sample:
    """One-shot convenience wrapper around `SceneGenerator.sample`."""
    return SceneGenerator(catalog, holdout, **kwargs).sample(level, rng)


# ---------------------------------------------------------------------------
# JSONL export

def sample_to_record(sample: Sample, seed: int, index: int) -> dict:
    return {
        "objects": [
            {"name": o.spec.name, "x": o.center.x, "y": o.center.y, "z": o.center.z,
             "yaw": o.yaw}
            for o in sample.scene
        ],
        "scene_type": sample.scene_type.value,
        "query": sample.query,
        "label": sample.label,
        "seed": seed,
        "index": index,
    }


def sample_from_record(record: dict, catalog: Catalog) -> Sample:
    scene = tuple(
        PlacedObject(catalog.get(o["name"]), Point3(o["x"], o["y"], o["z"]), o["yaw"])
        for o in record["objects"]
    )
    return Sample(scene, SceneType(record["scene_type"]), record["query"], record["label"])


def write_jsonl(samples_with_meta, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample, seed, index in samples_with_meta:
            fh.write(json.dumps(sample_to_record(sample, seed, index)) + "\n")
