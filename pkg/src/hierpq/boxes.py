"""Axis-aligned box geometry, prompt jitter, and cross-detector fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import BoxError
from .rng import substream

PRIMARY_SOURCE = "primary_detector"
SECONDARY_SOURCE = "secondary_detector"
_SOURCES = (PRIMARY_SOURCE, SECONDARY_SOURCE)


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: [x_min, x_max) x [y_min, y_max).

    Coordinates may be negative so that raw detector output can be carried
    around before ``clip_box`` normalizes it into the image rectangle.
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxError(f"degenerate box {self!r}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Detection:
    """One detector output box: the prompt currency of the pipeline."""

    bbox: BBox
    class_id: int
    score: float
    source: str = PRIMARY_SOURCE

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise BoxError(f"score {self.score} outside [0, 1]")
        if self.source not in _SOURCES:
            raise BoxError(f"unknown source tag {self.source!r}")


@dataclass(frozen=True)
class JitterPolicy:
    """Per-coordinate uniform noise with amplitude min(fraction * side, cap)."""

    fraction: float = 0.10
    cap: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.fraction < 0:
            raise BoxError("jitter fraction must be non-negative")
        if self.cap < 0:
            raise BoxError("jitter cap must be non-negative")

    def amplitude(self, side: int) -> float:
        return min(self.fraction * side, float(self.cap))


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union, counting half-open pixel areas."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def clip_box(box: BBox, bounds: tuple[int, int]) -> BBox:
    """Intersect a box with the image rectangle given as (width, height)."""
    w, h = bounds
    x_min, y_min = max(box.x_min, 0), max(box.y_min, 0)
    x_max, y_max = min(box.x_max, w), min(box.y_max, h)
    if x_min >= x_max or y_min >= y_max:
        raise BoxError(f"{box!r} lies outside {w}x{h} bounds")
    return BBox(x_min, y_min, x_max, y_max)


def jitter_box(
    box: BBox, policy: JitterPolicy, bounds: tuple[int, int], stream_key: int
) -> BBox:
    """Perturb each coordinate independently, then clip back into bounds.

    The noise amplitude is min(fraction * side, cap) per coordinate, with the
    box width governing x coordinates and the height governing y coordinates.
    Deltas are truncated toward zero so an integer output never moves farther
    than the amplitude. A box collapsed by the noise is repaired to a one
    pixel span around its midpoint. The same (policy.seed, stream_key) pair
    always produces the same output, regardless of call order.
    """
    w, h = bounds
    if box.x_min < 0 or box.y_min < 0 or box.x_max > w or box.y_max > h:
        raise BoxError(f"{box!r} not inside {w}x{h} bounds")
    ax = policy.amplitude(box.width)
    ay = policy.amplitude(box.height)
    rng = substream(policy.seed, stream_key)
    dx_min, dx_max = (int(d) for d in rng.uniform(-ax, ax, size=2))
    dy_min, dy_max = (int(d) for d in rng.uniform(-ay, ay, size=2))
    x_min = min(max(box.x_min + dx_min, 0), w)
    x_max = min(max(box.x_max + dx_max, 0), w)
    y_min = min(max(box.y_min + dy_min, 0), h)
    y_max = min(max(box.y_max + dy_max, 0), h)
    if x_min >= x_max:
        mid = min(max((x_min + x_max) // 2, 0), w - 1)
        x_min, x_max = mid, mid + 1
    if y_min >= y_max:
        mid = min(max((y_min + y_max) // 2, 0), h - 1)
        y_min, y_max = mid, mid + 1
    return BBox(x_min, y_min, x_max, y_max)


def fuse_detections(
    primary: Sequence[Detection],
    secondary: Sequence[Detection],
    iou_thresh: float = 0.5,
    min_w: int = 50,
    min_h: int = 50,
    class_filter: Iterable[int] | None = None,
) -> list[Detection]:
    """Merge a second detector's boxes into the primary list.

    Every primary detection is kept. A secondary detection is appended only
    if its class passes the filter, both of its sides strictly exceed the
    minimum size, and it does not overlap any already-accepted detection of
    the same class at IoU >= iou_thresh. Candidates are tried best score
    first, so mutually overlapping secondary boxes cannot all slip in.
    """
    allowed = None if class_filter is None else frozenset(class_filter)
    accepted = list(primary)
    for det in sorted(secondary, key=_candidate_priority):
        if allowed is not None and det.class_id not in allowed:
            continue
        if det.bbox.width <= min_w or det.bbox.height <= min_h:
            continue
        if any(
            other.class_id == det.class_id
            and box_iou(det.bbox, other.bbox) >= iou_thresh
            for other in accepted
        ):
            continue
        accepted.append(det)
    accepted.sort(key=_output_order)
    return accepted


def _candidate_priority(det: Detection):
    b = det.bbox
    return (-det.score, b.x_min, b.y_min, b.x_max, b.y_max, det.class_id)


def _output_order(det: Detection):
    b = det.bbox
    return (det.class_id, -det.score, b.x_min, b.y_min, b.x_max, b.y_max)
