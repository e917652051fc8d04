"""Label and instance grids plus the segment extraction feeding PQ matching.

Coordinates follow raster conventions: x indexes columns, y indexes rows,
origin at the top-left corner. All grids are row-major and immutable after
construction, so they are safe to share across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .boxes import BBox
from .errors import (
    ClassRangeError,
    DimensionError,
    InstanceOverflowError,
    RemapDomainError,
)

SOIL = 0
CROP = 1
WEED = 2
PARTIAL_CROP = 3
PARTIAL_WEED = 4
IGNORE = 255

MAX_INSTANCES = 65534


def _as_grid(data, dtype, overflow_error) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"expected a non-empty 2D grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) and arr.dtype != np.bool_:
        raise overflow_error(f"grid dtype {arr.dtype} is not integral")
    if arr.dtype != dtype:
        info = np.iinfo(dtype)
        if arr.size and (int(arr.min()) < info.min or int(arr.max()) > info.max):
            raise overflow_error(f"grid values exceed {np.dtype(dtype).name} range")
        arr = arr.astype(dtype)
    else:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Semantic class ID per pixel, stored as an immutable uint8 grid."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_grid(self.data, np.uint8, ClassRangeError))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class InstanceMap:
    """Instance ID per pixel (0 = no instance), immutable uint16 grid."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "data", _as_grid(self.data, np.uint16, InstanceOverflowError)
        )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class PanopticSample:
    """Aligned semantic, plant-instance, and leaf-instance layers.

    Construction enforces the hierarchy: plant pixels carry the crop or weed
    class, and leaf pixels lie inside crop plant pixels.
    """

    semantics: LabelMap
    plant_instances: InstanceMap
    leaf_instances: InstanceMap

    def __post_init__(self):
        if not (
            self.semantics.shape
            == self.plant_instances.shape
            == self.leaf_instances.shape
        ):
            raise DimensionError("sample layers disagree on dimensions")
        sem = self.semantics.data
        plant = self.plant_instances.data
        leaf = self.leaf_instances.data
        on_plant = plant != 0
        if not np.isin(sem[on_plant], (CROP, WEED)).all():
            raise ClassRangeError("plant-instance pixel without crop/weed class")
        on_leaf = leaf != 0
        if not (on_plant[on_leaf].all() and (sem[on_leaf] == CROP).all()):
            raise ClassRangeError("leaf-instance pixel outside any crop plant")

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantics.shape


@dataclass(frozen=True)
class ClassRemap:
    """Total mapping from source class IDs to targets (IGNORE allowed).

    The ignore value maps to itself unless explicitly overridden, so masked
    ground truth passes through untouched.
    """

    mapping: Mapping[int, int]

    def __post_init__(self):
        for src, dst in self.mapping.items():
            if not (0 <= src <= 255 and 0 <= dst <= 255):
                raise ClassRangeError(f"remap entry {src}->{dst} outside uint8 range")

    @classmethod
    def identity(cls, classes: Iterable[int]) -> "ClassRemap":
        return cls({int(c): int(c) for c in classes})

    @classmethod
    def default_fold(cls) -> "ClassRemap":
        """Fold the 5-class field schema down to soil/crop/weed."""
        return cls(
            {
                SOIL: SOIL,
                CROP: CROP,
                WEED: WEED,
                PARTIAL_CROP: CROP,
                PARTIAL_WEED: WEED,
            }
        )


@dataclass(frozen=True, eq=False)
class Segment:
    """One instance's single-class pixel set, run-length encoded."""

    class_id: int
    instance_id: int
    area: int
    bbox: BBox
    pixels: np.ndarray  # (k, 2) int64 rows of (start, length) over flat indices

    def decode(self) -> np.ndarray:
        """Sorted flat pixel indices."""
        return rle_decode(self.pixels)


def rle_encode(flat_indices: np.ndarray) -> np.ndarray:
    """Run-length encode sorted unique flat indices as (start, length) rows."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    if idx.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return np.stack([idx[starts], ends - starts + 1], axis=1)


def rle_decode(runs: np.ndarray) -> np.ndarray:
    """Expand (start, length) rows back into sorted flat indices."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.size == 0:
        return np.empty(0, dtype=np.int64)
    lengths = runs[:, 1]
    total = int(lengths.sum())
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.repeat(runs[:, 0], lengths) + offsets


def connected_components(mask, connectivity: int = 4) -> InstanceMap:
    """Label maximal connected foreground regions of a binary grid.

    Uses run-based two-pass labeling: row runs are extracted in raster order
    and merged across adjacent rows with union-find, so cost scales with the
    number of runs rather than pixels. Component IDs are assigned in
    first-encounter raster order, starting at 1; background stays 0.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    grid = np.asarray(mask)
    if grid.ndim != 2 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise DimensionError(f"expected a non-empty 2D grid, got shape {grid.shape}")
    fg = grid != 0
    h, w = fg.shape

    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = fg
    edges = np.diff(padded, axis=1)
    srow, scol = np.nonzero(edges == 1)  # run starts, raster order
    _, ecol = np.nonzero(edges == -1)  # matching exclusive ends
    n_runs = srow.size
    if n_runs == 0:
        return InstanceMap(np.zeros((h, w), dtype=np.uint16))

    parent = np.arange(n_runs, dtype=np.int64)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = int(parent[x])
        return x

    # 8-connectivity lets runs touch diagonally, i.e. intervals within 1 px
    touch = 0 if connectivity == 4 else 1
    row_begin = np.searchsorted(srow, np.arange(h + 1))
    for r in range(1, h):
        i, end_i = int(row_begin[r - 1]), int(row_begin[r])
        j, end_j = int(row_begin[r]), int(row_begin[r + 1])
        while i < end_i and j < end_j:
            if scol[i] < ecol[j] + touch and scol[j] < ecol[i] + touch:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            if ecol[i] <= ecol[j]:
                i += 1
            else:
                j += 1

    labels = np.zeros(n_runs, dtype=np.int64)
    ids_by_root: dict[int, int] = {}
    for k in range(n_runs):  # raster order fixes first-encounter numbering
        root = find(k)
        if root not in ids_by_root:
            ids_by_root[root] = len(ids_by_root) + 1
        labels[k] = ids_by_root[root]
    if len(ids_by_root) > MAX_INSTANCES:
        raise InstanceOverflowError(
            f"{len(ids_by_root)} components exceed the 16-bit instance limit"
        )

    lengths = ecol - scol
    out = np.zeros(h * w, dtype=np.uint16)
    flat_starts = srow.astype(np.int64) * w + scol
    total = int(lengths.sum())
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    out[np.repeat(flat_starts, lengths) + offsets] = np.repeat(
        labels.astype(np.uint16), lengths
    )
    return InstanceMap(out.reshape(h, w))


def segments_of(
    labels: LabelMap, instances: InstanceMap, thing_classes: Iterable[int]
) -> list[Segment]:
    """Extract one segment per instance over the given thing classes.

    Pixels with a nonzero instance but a class outside ``thing_classes`` are
    dropped. A segment's class is the majority class over the instance's
    remaining pixels (ties to the lower class ID); pixels of losing classes
    are excluded from the segment, keeping every segment single-class.
    """
    if labels.shape != instances.shape:
        raise DimensionError(
            f"label grid {labels.shape} vs instance grid {instances.shape}"
        )
    things = np.array(sorted({int(c) for c in thing_classes}), dtype=np.uint8)
    w = labels.width
    lab = labels.data.ravel()
    inst = instances.data.ravel()
    flat = np.flatnonzero(inst)
    if flat.size == 0 or things.size == 0:
        return []
    flat = flat[np.isin(lab[flat], things)]
    if flat.size == 0:
        return []
    inst_sel = inst[flat]
    order = np.argsort(inst_sel, kind="stable")  # keeps raster order per instance
    flat = flat[order]
    inst_sel = inst_sel[order]
    lab_sel = lab[flat]

    ids, group_starts = np.unique(inst_sel, return_index=True)
    bounds = np.append(group_starts, inst_sel.size)
    out = []
    for gi, iid in enumerate(ids):
        lo, hi = bounds[gi], bounds[gi + 1]
        px_lab = lab_sel[lo:hi]
        majority = int(np.argmax(np.bincount(px_lab, minlength=256)))
        sel = flat[lo:hi][px_lab == majority]
        ys, xs = np.divmod(sel, w)
        out.append(
            Segment(
                class_id=majority,
                instance_id=int(iid),
                area=int(sel.size),
                bbox=BBox(
                    int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1
                ),
                pixels=rle_encode(sel),
            )
        )
    return out


def remap_classes(labels: LabelMap, remap: ClassRemap) -> LabelMap:
    """Pointwise class translation; IGNORE targets become the ignore value."""
    lut = np.full(256, -1, dtype=np.int16)
    lut[IGNORE] = IGNORE
    for src, dst in remap.mapping.items():
        lut[src] = dst
    mapped = lut[labels.data]
    if (mapped < 0).any():
        missing = np.unique(labels.data[mapped < 0]).tolist()
        raise RemapDomainError(f"classes {missing} missing from remap")
    return LabelMap(mapped.astype(np.uint8))


def boxes_from_instances(instances: InstanceMap) -> list[tuple[int, BBox]]:
    """Tight half-open box per nonzero instance ID, ascending by ID."""
    w = instances.width
    flat = instances.data.ravel()
    nz = np.flatnonzero(flat)
    if nz.size == 0:
        return []
    ids_px = flat[nz]
    order = np.argsort(ids_px, kind="stable")
    nz = nz[order]
    ids_px = ids_px[order]
    ids, starts = np.unique(ids_px, return_index=True)
    bounds = np.append(starts, ids_px.size)
    ys, xs = np.divmod(nz, w)
    out = []
    for gi, iid in enumerate(ids):
        lo, hi = bounds[gi], bounds[gi + 1]
        out.append(
            (
                int(iid),
                BBox(
                    int(xs[lo:hi].min()),
                    int(ys[lo:hi].min()),
                    int(xs[lo:hi].max()) + 1,
                    int(ys[lo:hi].max()) + 1,
                ),
            )
        )
    return out
