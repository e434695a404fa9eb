"""The 21-object catalog and its line-oriented file format.

Each object is a named box with fixed dimensions (cm) chosen once, within
the size-category height bounds, so that every cross-category pair admits
both side-by-side and occluded placements on the default table.  Format:
one `name category width depth height` record per line, '#' comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .geometry import ObjectSpec, SizeCategory

_L = SizeCategory.LARGE
_M = SizeCategory.MEDIUM
_S = SizeCategory.SMALL

# name, category, width, depth, height (cm)
_DEFAULT_ENTRIES = [
    ("cracker_box", _L, 16.0, 7.1, 21.3),
    ("cleanser", _L, 9.8, 6.6, 25.1),
    ("laptop", _L, 30.2, 5.8, 21.8),
    ("pitcher", _L, 13.1, 12.4, 23.7),
    ("desktop_plant", _L, 14.2, 13.8, 23.5),
    ("wine", _L, 8.3, 8.3, 29.5),
    ("teddy_bear", _L, 13.6, 11.2, 23.9),
    ("apple", _M, 7.4, 7.2, 7.3),
    ("baseball", _M, 7.3, 7.3, 7.3),
    ("foam_brick", _M, 7.7, 5.1, 5.3),
    ("mug", _M, 11.7, 8.3, 9.6),
    ("rubiks_cube", _M, 5.7, 5.7, 5.7),
    ("meat_can", _M, 10.1, 6.3, 8.3),
    ("coffee_can", _M, 10.2, 10.2, 13.1),
    ("bolt", _S, 4.6, 1.6, 1.6),
    ("dice", _S, 1.7, 1.7, 1.7),
    ("key", _S, 5.9, 2.4, 0.4),
    ("marble", _S, 1.6, 1.6, 1.6),
    ("card", _S, 8.7, 5.6, 0.3),
    ("battery", _S, 5.0, 1.4, 1.4),
    ("button_battery", _S, 2.0, 2.0, 0.4),
]


@dataclass(frozen=True)
class Catalog:
    """An ordered object catalog; the order defines identity indices."""

    specs: tuple[ObjectSpec, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("catalog names must be unique")
        for cat in SizeCategory:
            if not any(s.category is cat for s in self.specs):
                raise ValueError(f"catalog needs at least one {cat} object")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def index(self, name: str) -> int:
        return self._index[name]

    def get(self, name: str) -> ObjectSpec:
        return self.specs[self._index[name]]

    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def by_category(self, category: SizeCategory) -> list[ObjectSpec]:
        return [s for s in self.specs if s.category is category]


def default_catalog() -> Catalog:
    return Catalog(
        tuple(ObjectSpec(n, c, w, d, h) for n, c, w, d, h in _DEFAULT_ENTRIES)
    )


def parse_catalog(lines) -> Catalog:
    specs = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"catalog line {lineno}: expected 5 fields, got {len(parts)}")
        name, cat, w, d, h = parts
        specs.append(
            ObjectSpec(name, SizeCategory.parse(cat), float(w), float(d), float(h))
        )
    return Catalog(tuple(specs))


def load_catalog(path: str | Path) -> Catalog:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_catalog(fh)


def format_catalog(catalog: Catalog) -> str:
    lines = ["# name category width_cm depth_cm height_cm"]
    for s in catalog:
        lines.append(f"{s.name} {s.category} {s.width:g} {s.depth:g} {s.height:g}")
    return "\n".join(lines) + "\n"


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).write_text(format_catalog(catalog), encoding="utf-8")
