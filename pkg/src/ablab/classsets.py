"""Class-set algebra: the 14-class base vocabulary, reduced class sets,
remapping, one-hot encoding, box-over-segmentation composition, and the
annotation cost model.

Grids are uint8 arrays of class ids where id 0 is always `void` (cells not
covered by any class of the set). A ClassSet's ids run 1..K in declared
order; the base vocabulary has no void cells by construction (`other`
catches everything).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Base vocabulary, ids 1..14. Order fixes painter layering elsewhere.
BASE14 = (
    "road", "lane_marking", "vehicle", "pedestrian", "green_light",
    "red_light", "sidewalk", "building", "fence", "pole",
    "vegetation", "wall", "traffic_sign", "other",
)
BASE_ID = {name: i + 1 for i, name in enumerate(BASE14)}
VOID = 0

# Object-like classes that carry bounding boxes.
THING_CLASSES = ("vehicle", "pedestrian", "green_light", "red_light")

# Fine masks vs coarse boxes, seconds per image per class.
FINE_SECONDS = 300.0
COARSE_SECONDS = 20.0


@dataclass(frozen=True)
class CostModelParams:
    fine_seconds: float = FINE_SECONDS
    coarse_seconds: float = COARSE_SECONDS

    def __post_init__(self):
        if self.fine_seconds <= 0 or self.coarse_seconds <= 0:
            raise ValueError("annotation seconds must be positive")
        if self.fine_seconds <= self.coarse_seconds:
            raise ValueError("fine labeling must cost more than coarse")


@dataclass(frozen=True)
class ClassSet:
    """Ordered class list with a total remap from the 14-class base set."""

    name: str
    classes: tuple[str, ...]                   # ids 1..K, void excluded
    remap: tuple[int, ...] = field(repr=False)  # base id 1..14 -> set id (0 = void)
    priority: tuple[str, ...] = ()             # thing classes, highest first
    things: tuple[str, ...] = ()
    stuff: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.remap) != len(BASE14):
            raise ValueError(f"classset {self.name}: remap must cover all {len(BASE14)} base ids")
        for tid in self.remap:
            if not 0 <= tid <= len(self.classes):
                raise ValueError(f"classset {self.name}: remap target {tid} out of range")
        if set(self.priority) != set(self.things):
            raise ValueError(f"classset {self.name}: priority must cover exactly the thing classes")
        for c in self.things + self.stuff:
            if c not in self.classes:
                raise ValueError(f"classset {self.name}: unknown class {c!r}")

    @property
    def k(self) -> int:
        return len(self.classes)

    def id_of(self, name: str) -> int:
        return self.classes.index(name) + 1

    def remap_table(self) -> np.ndarray:
        """Lookup table over ids 0..14 (index 0 stays void)."""
        table = np.zeros(len(BASE14) + 1, dtype=np.uint8)
        for base_id, tid in enumerate(self.remap, start=1):
            table[base_id] = tid
        return table

    def stuff_subset(self, name: str | None = None) -> "ClassSet":
        """Derived set keeping only this set's stuff classes (for the
        stuff-only segmentation model of the hybrid pipeline)."""
        classes = tuple(c for c in self.classes if c in self.stuff)
        remap = []
        for base_id in range(1, len(BASE14) + 1):
            tid = self.remap[base_id - 1]
            cname = self.classes[tid - 1] if tid else None
            remap.append(classes.index(cname) + 1 if cname in classes else 0)
        return ClassSet(name=name or f"{self.name}-stuff", classes=classes,
                        remap=tuple(remap), priority=(), things=(), stuff=classes)


def remap_grid(grid: np.ndarray, classset: ClassSet) -> np.ndarray:
    """Relabel a base-14 grid into `classset` ids (unmapped -> void)."""
    if classset.remap is None:
        raise ValueError(f"classset {classset.name} lacks a remap table")
    return classset.remap_table()[grid]


def one_hot(grid: np.ndarray, classset: ClassSet, dtype=np.float32) -> np.ndarray:
    """(K, H, W) indicator planes; void cells are all-zero."""
    if grid.max(initial=0) > classset.k:
        raise ValueError(f"grid ids exceed classset {classset.name} size {classset.k}")
    ids = np.arange(1, classset.k + 1, dtype=grid.dtype).reshape(-1, 1, 1)
    return (grid[None, :, :] == ids).astype(dtype)


def hybrid_compose(stuff_grid: np.ndarray, detections, classset: ClassSet) -> np.ndarray:
    """Paint detected boxes over a stuff segmentation.

    `detections` is an iterable of (class_name, (r0, c0, r1, c1)) with
    inclusive cell bounds. Boxes are painted in ascending priority so the
    highest-priority class wins overlaps; boxes are clipped to the grid.
    """
    out = stuff_grid.copy()
    h, w = out.shape
    rank = {name: i for i, name in enumerate(classset.priority)}  # 0 = highest
    order = sorted(detections, key=lambda d: (-rank[d[0]], d[1]))
    for name, (r0, c0, r1, c1) in order:
        if name not in rank:
            raise ValueError(f"detection class {name!r} not a thing class of {classset.name}")
        r0c, c0c = max(int(r0), 0), max(int(c0), 0)
        r1c, c1c = min(int(r1), h - 1), min(int(c1), w - 1)
        if r1c < r0c or c1c < c0c:
            continue
        out[r0c : r1c + 1, c0c : c1c + 1] = classset.id_of(name)
    return out


def annotation_cost_hours(n_images: int, n_classes: int, granularity: str,
                          params: CostModelParams = CostModelParams()) -> float:
    """Modeled labeling effort: images x classes x seconds-per-both / 3600."""
    if n_images < 0 or n_classes < 0:
        raise ValueError("n_images and n_classes must be nonnegative")
    if granularity == "fine":
        sec = params.fine_seconds
    elif granularity == "coarse":
        sec = params.coarse_seconds
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    return n_images * n_classes * sec / 3600.0


# -- named class sets ---------------------------------------------------

_ASSET = Path(__file__).parent / "assets" / "classsets.toml"
_cache: dict[str, ClassSet] | None = None


def _from_spec(name: str, spec: dict) -> ClassSet:
    classes = tuple(spec["classes"])
    remap = [0] * len(BASE14)
    for base_name, target in spec["remap"].items():
        if base_name not in BASE_ID:
            raise ValueError(f"classset {name}: unknown base class {base_name!r}")
        if target not in classes and target != "void":
            raise ValueError(f"classset {name}: remap target {target!r} not in classes")
        remap[BASE_ID[base_name] - 1] = 0 if target == "void" else classes.index(target) + 1
    return ClassSet(
        name=name,
        classes=classes,
        remap=tuple(remap),
        priority=tuple(spec.get("priority", ())),
        things=tuple(spec.get("things", ())),
        stuff=tuple(spec.get("stuff", ())),
    )


def load_classsets(path=None) -> dict[str, ClassSet]:
    """Parse class sets from the packaged (or a user) classsets.toml."""
    global _cache
    if path is None and _cache is not None:
        return _cache
    with open(path or _ASSET, "rb") as f:
        raw = tomllib.load(f)
    sets = {name: _from_spec(name, spec) for name, spec in raw.items()}
    if path is None:
        _cache = sets
    return sets


def get_classset(name: str) -> ClassSet:
    sets = load_classsets()
    if name not in sets:
        raise KeyError(f"unknown classset {name!r}; have {sorted(sets)}")
    return sets[name]
