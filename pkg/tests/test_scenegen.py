import json
import math

import numpy as np
import pytest

from roep.geometry import OcclusionLevel, SizeCategory, camera_pose, footprints_disjoint, occlusion_level, visible_set
from roep.scenegen import (
    DataLevel,
    GenerationError,
    SceneGenerator,
    SceneType,
    all_cross_pairs,
    generate_sample,
    make_holdout,
    pair_key,
    sample_from_record,
    sample_to_record,
    write_jsonl,
)
from roep.seeding import stream


def test_level_parsing():
    assert DataLevel.parse("L1-1-vis") is DataLevel.L1_1VIS
    assert DataLevel.parse("l3") is DataLevel.L3_2OCC
    assert DataLevel.parse("L4") is DataLevel.L4_OVERALL
    with pytest.raises(ValueError):
        DataLevel.parse("L5")


def test_same_seed_gives_bit_identical_samples(generator):
    def draw(seed):
        rng = np.random.default_rng(seed)
        return [generator.sample(DataLevel.L4_OVERALL, rng) for _ in range(40)]

    a = draw(77)
    b = draw(77)
    for s1, s2 in zip(a, b):
        assert s1.query == s2.query and s1.label == s2.label
        assert s1.scene_type == s2.scene_type
        for o1, o2 in zip(s1.scene, s2.scene):
            assert o1.spec.name == o2.spec.name
            assert (o1.center.x, o1.center.y, o1.yaw) == (o2.center.x, o2.center.y, o2.yaw)


def test_label_iff_query_in_scene(generator, rng):
    for level in DataLevel:
        for _ in range(60):
            s = generator.sample(level, rng)
            assert s.label == (s.query in s.object_names())


def test_one_visible_positive_scene_contains_exactly_the_query(generator, rng):
    seen_positive = 0
    for _ in range(60):
        s = generator.sample(DataLevel.L1_1VIS, rng)
        assert len(s.scene) == 1
        if s.label:
            seen_positive += 1
            assert s.object_names() == [s.query]
        else:
            assert s.query not in s.object_names()
    assert seen_positive > 10


def test_two_object_scenes_span_two_categories(generator, rng):
    for level in (DataLevel.L2_2VIS, DataLevel.L3_2OCC):
        for _ in range(50):
            s = generator.sample(level, rng)
            cats = {o.spec.category for o in s.scene}
            assert len(cats) == 2
            assert footprints_disjoint(*s.scene)


def test_two_visible_means_both_in_initial_view(generator, rng):
    for _ in range(60):
        s = generator.sample(DataLevel.L2_2VIS, rng)
        assert len(visible_set(0, list(s.scene))) == 2


def test_two_occluded_hides_exactly_one_from_initial_view(generator, rng):
    cam, _ = camera_pose(0)
    for _ in range(60):
        s = generator.sample(DataLevel.L3_2OCC, rng)
        vis = visible_set(0, list(s.scene))
        assert len(vis) == 1
        occluder = vis[0].obj
        hidden = next(o for o in s.scene if o is not occluder)
        assert occluder.spec.category > hidden.spec.category
        assert occlusion_level(cam, occluder, hidden) >= OcclusionLevel.PARTIALLY_OCCLUDED


def test_l4_mixes_types_and_balances_labels(generator):
    rng = np.random.default_rng(3)
    n = 4000
    counts = {t: 0 for t in SceneType}
    positives = 0
    for _ in range(n):
        s = generator.sample(DataLevel.L4_OVERALL, rng)
        counts[s.scene_type] += 1
        positives += s.label
    for t in SceneType:
        assert abs(counts[t] / n - 1 / 3) < 0.03
    assert abs(positives / n - 0.5) < 0.03


# ---------------------------------------------------------------------------
# holdout machinery

def test_make_holdout_sizes(catalog):
    rng = stream(5, "holdout")
    assert make_holdout(rng, 0, catalog) == frozenset()
    h7 = make_holdout(rng, 7, catalog)
    assert len(h7) == 21
    h14 = make_holdout(rng, 14, catalog)
    assert len(h14) == 42
    with pytest.raises(ValueError):
        make_holdout(rng, 50, catalog)


def test_holdout_pairs_are_cross_category_and_leave_coverage(catalog):
    names_by_cat = {c: {s.name for s in catalog.by_category(c)} for c in SizeCategory}
    rng = stream(6, "holdout")
    held = make_holdout(rng, 14, catalog)
    for a, b in held:
        cat_a = catalog.get(a).category
        cat_b = catalog.get(b).category
        assert cat_a != cat_b
    remaining = set(all_cross_pairs(catalog)) - held
    covered = {n for p in remaining for n in p}
    assert covered == set(catalog.names())
    del names_by_cat


def test_generator_excludes_holdout_pairs(catalog):
    rng = stream(7, "holdout")
    held = make_holdout(rng, 14, catalog)
    gen = SceneGenerator(catalog, held, "exclude")
    draw = np.random.default_rng(8)
    for _ in range(400):
        s = gen.sample(DataLevel.L4_OVERALL, draw)
        if len(s.scene) == 2:
            key = pair_key(*s.object_names())
            assert key not in held


def test_holdout_only_mode_uses_only_held_pairs(catalog):
    rng = stream(9, "holdout")
    held = make_holdout(rng, 7, catalog)
    gen = SceneGenerator(catalog, held, "only")
    draw = np.random.default_rng(10)
    for _ in range(150):
        s = gen.sample(DataLevel.L3_2OCC, draw)
        assert pair_key(*s.object_names()) in held


def test_holdout_only_requires_nonempty_set(catalog):
    with pytest.raises(ValueError, match="non-empty"):
        SceneGenerator(catalog, frozenset(), "only")
    with pytest.raises(ValueError, match="holdout_mode"):
        SceneGenerator(catalog, frozenset(), "sometimes")


def test_generate_sample_wrapper(catalog):
    s = generate_sample(DataLevel.L1_1VIS, frozenset(), np.random.default_rng(4), catalog)
    assert s.scene_type is SceneType.ONE_VISIBLE


# ---------------------------------------------------------------------------
# JSONL export

def test_jsonl_round_trip(generator, catalog, rng, tmp_path):
    samples = [(generator.sample(DataLevel.L4_OVERALL, rng), 42, i) for i in range(25)]
    path = tmp_path / "data.jsonl"
    write_jsonl(samples, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 25
    for (orig, seed, idx), line in zip(samples, lines):
        rec = json.loads(line)
        assert rec["seed"] == seed and rec["index"] == idx
        restored = sample_from_record(rec, catalog)
        assert restored.query == orig.query
        assert restored.label == orig.label
        assert restored.scene_type == orig.scene_type
        for a, b in zip(restored.scene, orig.scene):
            assert a.spec == b.spec
            assert math.isclose(a.center.x, b.center.x)
            assert math.isclose(a.yaw, b.yaw)


def test_record_fields(generator, rng):
    s = generator.sample(DataLevel.L2_2VIS, rng)
    rec = sample_to_record(s, 7, 0)
    assert set(rec) == {"objects", "scene_type", "query", "label", "seed", "index"}
    assert set(rec["objects"][0]) == {"name", "x", "y", "z", "yaw"}
