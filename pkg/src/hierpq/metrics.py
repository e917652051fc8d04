"""Semantic IoU, panoptic quality, and the six-column hierarchical report.

Accumulation is pure integer arithmetic (pixel counts and per-pair
intersection/union sums), so accumulators merge losslessly in any order.
Floating point enters only in ``finalize``, which sums per-pair ratios in a
canonical order to keep results bit-identical regardless of how work was
split across workers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

import numpy as np

from .errors import AccumulatorMismatchError, ClassRangeError, DimensionError
from .masks import (
    CROP,
    IGNORE,
    SOIL,
    WEED,
    InstanceMap,
    LabelMap,
    PanopticSample,
    Segment,
    segments_of,
)

PLANT_LAYER = "crop"
LEAF_LAYER = "leaf"
REPORT_LAYERS = (PLANT_LAYER, LEAF_LAYER)


@dataclass(eq=False)
class ConfusionMatrix:
    """Pixel counts indexed [ground truth class][predicted class]."""

    counts: np.ndarray

    @classmethod
    def empty(cls, n_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


@dataclass
class PQCell:
    """Integer matching state for one thing layer."""

    pairs: list[tuple[int, int]] = field(default_factory=list)  # (inter, union)
    fp: int = 0
    fn: int = 0

    @property
    def tp(self) -> int:
        return len(self.pairs)


@dataclass(eq=False)
class MetricsAccumulator:
    """Mergeable integer-count state from which IoU/PQ/PQ+ are finalized."""

    confusion: ConfusionMatrix
    layers: dict[str, PQCell]

    @classmethod
    def empty(cls, n_classes: int = 3) -> "MetricsAccumulator":
        return cls(
            confusion=ConfusionMatrix.empty(n_classes),
            layers={name: PQCell() for name in REPORT_LAYERS},
        )


@dataclass(eq=False)
class SegMatching:
    """Unique IoU > 0.5 matching between prediction and ground truth."""

    tp: list[tuple[Segment, Segment, int, int]]  # (gt, pred, inter, union)
    fp: list[Segment]
    fn: list[Segment]


@dataclass(frozen=True)
class LayerScores:
    pq: float | None
    sq: float | None
    rq: float | None


@dataclass(frozen=True)
class HierReport:
    """The six-column result row, as percentages (None = undefined)."""

    iou_soil: float | None
    iou_weed: float | None
    pq_leaf: float | None
    pq_crop: float | None
    pq: float | None
    pq_plus: float | None
    layers: Mapping[str, LayerScores]


def confusion_update(
    acc: MetricsAccumulator, pred: LabelMap, gt: LabelMap
) -> MetricsAccumulator:
    """Add one prediction/ground-truth pair to the pixel confusion counts.

    Ground-truth pixels carrying the ignore value are skipped entirely.
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} vs gt {gt.shape}")
    n = acc.confusion.n_classes
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    valid = g != IGNORE
    g = g[valid]
    p = p[valid]
    if g.size:
        if int(g.max()) >= n:
            raise ClassRangeError(f"ground-truth class {int(g.max())} >= {n}")
        if int(p.max()) >= n:
            raise ClassRangeError(f"predicted class {int(p.max())} >= {n}")
        acc.confusion.counts += np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    return acc


def iou_per_class(confusion: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU: diagonal over (row sum + column sum - diagonal).

    Classes absent from both prediction and ground truth get NaN so that
    averages can exclude them.
    """
    c = confusion.counts
    diag = np.diag(c).astype(np.float64)
    denom = (c.sum(axis=1) + c.sum(axis=0) - np.diag(c)).astype(np.float64)
    out = np.full(confusion.n_classes, np.nan)
    present = denom > 0
    out[present] = diag[present] / denom[present]
    return out


def _boxes_overlap(a, b) -> bool:
    return a.x_min < b.x_max and b.x_min < a.x_max and a.y_min < b.y_max and b.y_min < a.y_max


def match_segments(pred: Sequence[Segment], gt: Sequence[Segment]) -> SegMatching:
    """Match same-class segments at pixel IoU strictly above 0.5.

    The strict threshold makes the matching a partial bijection, so a single
    pass is already optimal: no segment can clear 0.5 with two counterparts.
    """
    classes = {s.class_id for s in pred} | {s.class_id for s in gt}
    if len(classes) > 1:
        raise ClassRangeError(
            f"segments span classes {sorted(classes)}; matching is per-class"
        )
    pred_px = [p.decode() for p in pred]
    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    tp: list[tuple[Segment, Segment, int, int]] = []
    for gi, g in enumerate(gt):
        g_px = g.decode()
        for pi, p in enumerate(pred):
            if pi in matched_pred or not _boxes_overlap(g.bbox, p.bbox):
                continue
            inter = int(
                np.intersect1d(g_px, pred_px[pi], assume_unique=True).size
            )
            if inter == 0:
                continue
            union = g.area + p.area - inter
            if 2 * inter > union:  # exact integer test for IoU > 0.5
                tp.append((g, p, inter, union))
                matched_pred.add(pi)
                matched_gt.add(gi)
                break
    fp = [p for pi, p in enumerate(pred) if pi not in matched_pred]
    fn = [g for gi, g in enumerate(gt) if gi not in matched_gt]
    return SegMatching(tp=tp, fp=fp, fn=fn)


def _sorted_iou_sum(pairs: Sequence[tuple[int, int]]) -> float:
    # canonical summation order keeps finalize independent of merge history
    return float(sum(i / u for i, u in sorted(pairs)))


def pq_from_counts(
    tp_pairs: Sequence[tuple[int, int]], fp_count: int, fn_count: int
) -> tuple[float, float, float]:
    """(pq, sq, rq) from matched (intersection, union) pairs and FP/FN counts.

    PQ is defined as SQ * RQ so the identity holds exactly in floating point.
    All-empty input yields NaNs (nothing to score).
    """
    if fp_count < 0 or fn_count < 0:
        raise ValueError("FP/FN counts must be non-negative")
    tp = len(tp_pairs)
    denom = tp + 0.5 * fp_count + 0.5 * fn_count
    if denom == 0:
        return (math.nan, math.nan, math.nan)
    sq = _sorted_iou_sum(tp_pairs) / tp if tp else 0.0
    rq = tp / denom
    return (sq * rq, sq, rq)


def evaluate_sample(
    acc: MetricsAccumulator,
    pred_sem: LabelMap,
    pred_plant: InstanceMap,
    pred_leaf: InstanceMap,
    gt: PanopticSample,
) -> MetricsAccumulator:
    """Score one sample into the accumulator.

    Semantics feed the confusion matrix; crop plant segments are matched at
    the plant layer and leaf segments at the leaf layer. Weed instances are
    scored semantically only, matching the report's column set. Partial
    classes must already be remapped away.
    """
    shape = gt.shape
    for grid in (pred_sem, pred_plant, pred_leaf):
        if grid.shape != shape:
            raise DimensionError(f"prediction layer {grid.shape} vs sample {shape}")
    confusion_update(acc, pred_sem, gt.semantics)
    _match_layer(
        acc.layers[PLANT_LAYER], pred_sem, pred_plant, gt.semantics, gt.plant_instances
    )
    _match_layer(
        acc.layers[LEAF_LAYER], pred_sem, pred_leaf, gt.semantics, gt.leaf_instances
    )
    return acc


def _match_layer(cell, pred_sem, pred_inst, gt_sem, gt_inst):
    matching = match_segments(
        segments_of(pred_sem, pred_inst, (CROP,)),
        segments_of(gt_sem, gt_inst, (CROP,)),
    )
    cell.pairs.extend((inter, union) for (_, _, inter, union) in matching.tp)
    cell.fp += len(matching.fp)
    cell.fn += len(matching.fn)


def merge(a: MetricsAccumulator, b: MetricsAccumulator) -> MetricsAccumulator:
    """Lossless elementwise combination; commutative and associative."""
    if a.confusion.n_classes != b.confusion.n_classes:
        raise AccumulatorMismatchError(
            f"class counts differ: {a.confusion.n_classes} vs {b.confusion.n_classes}"
        )
    if a.layers.keys() != b.layers.keys():
        raise AccumulatorMismatchError(
            f"layer sets differ: {sorted(a.layers)} vs {sorted(b.layers)}"
        )
    out = MetricsAccumulator(
        confusion=ConfusionMatrix(a.confusion.counts + b.confusion.counts),
        layers={
            name: PQCell(
                pairs=a.layers[name].pairs + b.layers[name].pairs,
                fp=a.layers[name].fp + b.layers[name].fp,
                fn=a.layers[name].fn + b.layers[name].fn,
            )
            for name in a.layers
        },
    )
    return out


def _pct(value: float) -> float | None:
    return None if math.isnan(value) else 100.0 * value


def _mean_defined(
    values: Sequence[float | None], label: str, warn: bool
) -> float | None:
    defined = [v for v in values if v is not None]
    if len(defined) < len(values) and warn:
        warnings.warn(
            f"{len(values) - len(defined)} of {len(values)} components of "
            f"{label} are undefined and were excluded from the mean",
            stacklevel=3,
        )
    if not defined:
        return None
    return sum(defined) / len(defined)


def hier_aggregate(
    iou_soil: float | None,
    iou_weed: float | None,
    pq_leaf: float | None,
    pq_crop: float | None,
    warn: bool = True,
) -> tuple[float | None, float | None]:
    """Competition aggregation over percentage inputs.

    PQ is the mean of the two panoptic columns; PQ+ is the mean of all four
    columns. Undefined components drop out of the means.
    """
    pq = _mean_defined((pq_leaf, pq_crop), "pq", warn)
    pq_plus = _mean_defined((iou_soil, iou_weed, pq_leaf, pq_crop), "pq_plus", warn)
    return pq, pq_plus


def finalize(acc: MetricsAccumulator, warn: bool = True) -> HierReport:
    """Fold the accumulator into the six-column report, as percentages."""
    iou = iou_per_class(acc.confusion)
    layer_scores = {}
    for name, cell in acc.layers.items():
        pq, sq, rq = pq_from_counts(cell.pairs, cell.fp, cell.fn)
        layer_scores[name] = LayerScores(pq=_pct(pq), sq=_pct(sq), rq=_pct(rq))
    iou_soil = _pct(float(iou[SOIL]))
    iou_weed = _pct(float(iou[WEED]))
    pq_leaf = layer_scores[LEAF_LAYER].pq
    pq_crop = layer_scores[PLANT_LAYER].pq
    pq, pq_plus = hier_aggregate(iou_soil, iou_weed, pq_leaf, pq_crop, warn=warn)
    return HierReport(
        iou_soil=iou_soil,
        iou_weed=iou_weed,
        pq_leaf=pq_leaf,
        pq_crop=pq_crop,
        pq=pq,
        pq_plus=pq_plus,
        layers=layer_scores,
    )


def format_percent(value: float | None) -> str:
    """Two-decimal display string, rounding half up; undefined prints as such."""
    if value is None:
        return "undefined"
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
