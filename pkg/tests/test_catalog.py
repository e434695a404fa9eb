import pytest

from roep.catalog import Catalog, default_catalog, format_catalog, load_catalog, parse_catalog, save_catalog
from roep.geometry import ObjectSpec, SizeCategory

TABLE_NAMES = {
    SizeCategory.LARGE: [
        "cracker_box", "cleanser", "laptop", "pitcher", "desktop_plant", "wine", "teddy_bear",
    ],
    SizeCategory.MEDIUM: [
        "apple", "baseball", "foam_brick", "mug", "rubiks_cube", "meat_can", "coffee_can",
    ],
    SizeCategory.SMALL: [
        "bolt", "dice", "key", "marble", "card", "battery", "button_battery",
    ],
}


def test_catalog_has_21_objects_7_per_category(catalog):
    assert len(catalog) == 21
    for cat, names in TABLE_NAMES.items():
        assert [s.name for s in catalog.by_category(cat)] == names


def test_catalog_heights_respect_category_bounds(catalog):
    for spec in catalog:
        if spec.category is SizeCategory.LARGE:
            assert spec.height >= 21.0
        elif spec.category is SizeCategory.MEDIUM:
            assert 5.0 <= spec.height <= 14.0
        else:
            assert spec.height <= 3.0


def test_spec_rejects_out_of_bounds_heights():
    with pytest.raises(ValueError):
        ObjectSpec("too_short", SizeCategory.LARGE, 10, 10, 15)
    with pytest.raises(ValueError):
        ObjectSpec("too_tall", SizeCategory.SMALL, 2, 2, 5)
    with pytest.raises(ValueError):
        ObjectSpec("flat", SizeCategory.SMALL, 2, 0, 1)


def test_file_round_trip(catalog, tmp_path):
    path = tmp_path / "catalog.txt"
    save_catalog(catalog, path)
    loaded = load_catalog(path)
    assert loaded.specs == catalog.specs


def test_parse_skips_comments_and_blank_lines():
    text = """
    # a comment
    widget Large 10 10 25  # trailing comment

    gadget Small 1 1 1
    doohickey Medium 5 5 9
    """
    cat = parse_catalog(text.splitlines())
    assert cat.names() == ["widget", "gadget", "doohickey"]
    assert cat.get("widget").height == 25


def test_parse_rejects_malformed_lines():
    with pytest.raises(ValueError, match="expected 5 fields"):
        parse_catalog(["widget Large 10 10"])
    with pytest.raises(ValueError, match="unknown size category"):
        parse_catalog(["widget Huge 10 10 25"])


def test_duplicate_names_rejected():
    spec = ObjectSpec("twin", SizeCategory.MEDIUM, 5, 5, 7)
    other = ObjectSpec("twin", SizeCategory.SMALL, 1, 1, 1)
    big = ObjectSpec("big", SizeCategory.LARGE, 10, 10, 22)
    with pytest.raises(ValueError, match="unique"):
        Catalog((spec, other, big))


def test_format_is_line_oriented(catalog):
    lines = format_catalog(catalog).strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 22
    assert lines[1].split()[0] == "cracker_box"
