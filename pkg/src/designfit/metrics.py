"""Refinement evaluation metrics: mIoU, mBDE and type-pooled IoU.

All three compare a predicted document against its ground truth by
element index; backgrounds never participate (they are not refined).
Boxes live in normalized coordinates, so edge displacements are already
normalized by the canvas dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .document import DesignDocument, ElementKind, rect_iou


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    """Ground truth / prediction pair with per-index element correspondence."""

    ground_truth: DesignDocument
    predicted: DesignDocument

    def __post_init__(self):
        gt, pr = self.ground_truth.elements, self.predicted.elements
        if len(gt) != len(pr):
            raise MetricsError(f"element count mismatch: {len(gt)} vs {len(pr)}")
        for i, (a, b) in enumerate(zip(gt, pr)):
            if a.kind is not b.kind:
                raise MetricsError(f"element {i} kind mismatch: {a.kind} vs {b.kind}")

    def text_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, e in enumerate(self.ground_truth.elements) if e.kind is ElementKind.TEXT
        )


def _check_targets(record: EvalRecord, targets) -> None:
    for t in targets:
        if not 0 <= t < len(record.ground_truth.elements):
            raise MetricsError(f"target index {t} out of range")
        if record.ground_truth.elements[t].kind is ElementKind.BACKGROUND:
            raise MetricsError("background elements are excluded from metrics")


def mean_iou(records: list[EvalRecord], target_indices: list) -> float:
    """Mean IoU of the target boxes; per-record average over targets first."""
    if not records:
        raise MetricsError("mean_iou needs at least one record")
    if len(target_indices) != len(records):
        raise MetricsError("one target index list per record required")
    per_record = []
    for record, targets in zip(records, target_indices):
        targets = list(targets)
        if not targets:
            raise MetricsError("every record needs at least one target")
        _check_targets(record, targets)
        ious = [
            rect_iou(record.ground_truth.elements[t].rect, record.predicted.elements[t].rect)
            for t in targets
        ]
        per_record.append(sum(ious) / len(ious))
    return sum(per_record) / len(per_record)


def mean_bde(records: list[EvalRecord], target_indices: list) -> float:
    """Mean boundary displacement: average absolute shift of the 4 box edges.

    Left/right edges are displacements in normalized x (fractions of
    canvas width), top/bottom in normalized y.
    """
    if not records:
        raise MetricsError("mean_bde needs at least one record")
    if len(target_indices) != len(records):
        raise MetricsError("one target index list per record required")
    per_record = []
    for record, targets in zip(records, target_indices):
        targets = list(targets)
        if not targets:
            raise MetricsError("every record needs at least one target")
        _check_targets(record, targets)
        per_target = []
        for t in targets:
            a = record.ground_truth.elements[t].rect
            b = record.predicted.elements[t].rect
            per_target.append(
                (abs(a.x0 - b.x0) + abs(a.x1 - b.x1) + abs(a.y0 - b.y0) + abs(a.y1 - b.y1)) / 4.0
            )
        per_record.append(sum(per_target) / len(per_target))
    return sum(per_record) / len(per_record)


def type_mean_iou(records: list[EvalRecord]) -> float:
    """Type-pooled IoU, averaged over element types.

    For each type (image, svg, text) the intersection and union areas of
    every element of that type are pooled across all records into one
    ratio; the result is the unweighted mean of the per-type ratios over
    the types present.
    """
    if not records:
        raise MetricsError("type_mean_iou needs at least one record")
    inter: dict[ElementKind, float] = {}
    union: dict[ElementKind, float] = {}
    for record in records:
        for gt, pr in zip(record.ground_truth.elements, record.predicted.elements):
            if gt.kind is ElementKind.BACKGROUND:
                continue
            a, b = gt.rect, pr.rect
            i = a.intersection_area(b)
            u = a.area + b.area - i
            inter[gt.kind] = inter.get(gt.kind, 0.0) + i
            union[gt.kind] = union.get(gt.kind, 0.0) + u
    ratios = [inter[k] / union[k] for k in inter if union[k] > 0.0]
    if not ratios:
        raise MetricsError("no non-background elements with positive union area")
    return sum(ratios) / len(ratios)
