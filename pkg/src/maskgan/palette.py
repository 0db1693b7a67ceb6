"""Category palette for semantic label masks.

A palette fixes the category count C, the index -> name mapping and a
display color per category. Masks on disk are single-channel indexed PNGs
whose pixel values are category indices; the palette manifest
(``palette.json``) is the authority on what those indices mean. The order
of categories in the manifest doubles as the fusion priority when a mask
is assembled from per-category part files (later entries overwrite
earlier ones).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Category:
    index: int
    name: str
    color: Tuple[int, int, int]


@dataclass(frozen=True)
class CategoryPalette:
    """Ordered set of mask categories with display colors."""

    categories: Tuple[Category, ...]

    def __post_init__(self):
        indices = [c.index for c in self.categories]
        if indices != list(range(len(indices))):
            raise ValueError(f"palette indices must be exactly 0..{len(indices) - 1}, got {indices}")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("palette category names must be unique")
        for c in self.categories:
            if len(c.color) != 3 or any(not (0 <= v <= 255) for v in c.color):
                raise ValueError(f"bad color for category {c.name!r}: {c.color}")

    @property
    def count(self) -> int:
        return len(self.categories)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def index_of(self, name: str) -> int:
        for c in self.categories:
            if c.name == name:
                return c.index
        raise KeyError(name)

    def color_array(self) -> np.ndarray:
        """(C, 3) uint8 display colors in index order."""
        return np.array([c.color for c in self.categories], dtype=np.uint8)

    def pil_palette(self) -> list:
        """Flat 768-entry list for PIL putpalette."""
        flat = np.zeros((256, 3), dtype=np.uint8)
        flat[: self.count] = self.color_array()
        return flat.flatten().tolist()

    def to_json(self) -> dict:
        return {
            "categories": [
                {"index": c.index, "name": c.name, "color": list(c.color)} for c in self.categories
            ]
        }

    @classmethod
    def from_json(cls, payload: dict) -> "CategoryPalette":
        cats = sorted(payload["categories"], key=lambda c: c["index"])
        return cls(tuple(Category(c["index"], c["name"], tuple(c["color"])) for c in cats))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CategoryPalette":
        return cls.from_json(json.loads(Path(path).read_text()))


def make_palette(entries: Sequence[Tuple[str, Tuple[int, int, int]]]) -> CategoryPalette:
    return CategoryPalette(tuple(Category(i, n, tuple(c)) for i, (n, c) in enumerate(entries)))


# Default 19-category facial-component palette. The index order is a project
# convention (dataset manifests may override it); the first eight categories
# are the ones the procedural toy dataset draws, so one palette file serves
# both toy and real data. Display colors for the toy categories sit at far
# corners of the RGB cube so a nearest-color parse is unambiguous.
DEFAULT_PALETTE = make_palette(
    [
        ("background", (30, 30, 30)),
        ("skin", (230, 230, 230)),
        ("nose", (225, 30, 30)),
        ("left_eye", (30, 30, 225)),
        ("right_eye", (30, 225, 225)),
        ("mouth", (225, 30, 225)),
        ("hair", (30, 225, 30)),
        ("eyeglass", (225, 225, 30)),
        ("left_brow", (113, 15, 15)),
        ("right_brow", (15, 113, 15)),
        ("left_ear", (15, 15, 113)),
        ("right_ear", (113, 113, 15)),
        ("upper_lip", (113, 15, 113)),
        ("lower_lip", (15, 113, 113)),
        ("hat", (113, 113, 113)),
        ("earring", (170, 60, 15)),
        ("necklace", (15, 60, 170)),
        ("neck", (60, 170, 15)),
        ("cloth", (170, 15, 60)),
    ]
)

# Categories the toy generator actually draws (a prefix of the default order).
TOY_CATEGORY_COUNT = 8
