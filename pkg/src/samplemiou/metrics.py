"""Dataset-level localization metrics.

Three ways of averaging per-sample IoU live here:

* ``pooled_miou`` sums confusion counts over every pixel of every image and
  divides once. Large defects dominate it.
* ``sample_miou`` macro-averages IoU over *relevant* samples only, i.e. those
  whose ground-truth/prediction union is non-empty. Pure true negatives are
  tracked separately through ``tn_ratio``.
* ``naive_sample_miou`` averages over all samples and has to invent a score
  for pure true negatives; it exists to show how that choice shifts results.

All reductions run in ascending sample-id order so the floating-point result
does not depend on how the records were produced or ordered.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .masks import BinaryMask, PixelConfusion, iou, pixel_confusion


class EmptyPolicy(enum.Enum):
    SCORE_ONE = "score_one"
    SCORE_ZERO = "score_zero"
    SKIP = "skip"


@dataclass(frozen=True)
class SampleRecord:
    id: str
    confusion: PixelConfusion
    iou: Optional[float]
    relevant: bool
    gt_positive: bool
    weight: float = 1.0

    def __post_init__(self):
        c = self.confusion
        if not self.weight > 0 or not math.isfinite(self.weight):
            raise ValueError(f"sample {self.id!r}: weight must be positive, got {self.weight!r}")
        if self.relevant != (c.union > 0):
            raise ValueError(f"sample {self.id!r}: relevant flag disagrees with confusion")
        if (self.iou is None) == self.relevant:
            raise ValueError(f"sample {self.id!r}: iou must be absent exactly when not relevant")
        if self.gt_positive != (c.tp + c.fn > 0):
            raise ValueError(f"sample {self.id!r}: gt_positive disagrees with confusion")

    @classmethod
    def from_confusion(cls, id: str, confusion: PixelConfusion, weight: float = 1.0) -> "SampleRecord":
        return cls(
            id=id,
            confusion=confusion,
            iou=iou(confusion),
            relevant=confusion.union > 0,
            gt_positive=confusion.tp + confusion.fn > 0,
            weight=weight,
        )

    @classmethod
    def from_masks(cls, id: str, gt: BinaryMask, pred: BinaryMask, weight: float = 1.0) -> "SampleRecord":
        return cls.from_confusion(id, pixel_confusion(gt, pred), weight)

    @property
    def predicted_empty(self) -> bool:
        return self.confusion.tp + self.confusion.fp == 0


@dataclass(frozen=True)
class LocalizationSummary:
    pooled_miou: Optional[float]
    sample_miou: Optional[float]
    m_eff: int
    m_total: int
    tn_ratio: float


def _ordered(records: Sequence[SampleRecord]) -> list:
    if len(records) == 0:
        raise ValueError("at least one sample record is required")
    ordered = sorted(records, key=lambda r: r.id)
    for a, b in zip(ordered, ordered[1:]):
        if a.id == b.id:
            raise ValueError(f"duplicate sample id {a.id!r}")
    return ordered


def pooled_miou(records: Sequence[SampleRecord]) -> Optional[float]:
    _ordered(records)
    tp = sum(r.confusion.tp for r in records)
    union = sum(r.confusion.union for r in records)
    if union == 0:
        return None
    return tp / union


def _sample_mean(ordered) -> Optional[float]:
    ious = [r.iou for r in ordered if r.relevant]
    if not ious:
        return None
    return math.fsum(ious) / len(ious)


def sample_miou(records: Sequence[SampleRecord]) -> LocalizationSummary:
    """Macro-average IoU over relevant samples, plus the pooled figure and TN ratio."""
    ordered = _ordered(records)
    m_total = len(ordered)
    m_eff = sum(1 for r in ordered if r.relevant)
    n_tn = sum(1 for r in ordered if not r.gt_positive and r.predicted_empty)
    return LocalizationSummary(
        pooled_miou=pooled_miou(ordered),
        sample_miou=_sample_mean(ordered),
        m_eff=m_eff,
        m_total=m_total,
        tn_ratio=n_tn / m_total,
    )


def naive_sample_miou(records: Sequence[SampleRecord], empty_policy: EmptyPolicy) -> Optional[float]:
    """Average IoU over *all* samples, scoring pure true negatives per ``empty_policy``.

    With ``SKIP`` this is the relevant-only average and is None when nothing
    is relevant; the scoring policies always return a number.
    """
    ordered = _ordered(records)
    policy = EmptyPolicy(empty_policy)
    if policy is EmptyPolicy.SKIP:
        return _sample_mean(ordered)
    fill = 1.0 if policy is EmptyPolicy.SCORE_ONE else 0.0
    scores = [r.iou if r.relevant else fill for r in ordered]
    return math.fsum(scores) / len(scores)


def weighted_sample_miou(records: Sequence[SampleRecord]) -> Optional[float]:
    ordered = _ordered(records)
    relevant = [r for r in ordered if r.relevant]
    if not relevant:
        return None
    num = math.fsum(r.weight * r.iou for r in relevant)
    den = math.fsum(r.weight for r in relevant)
    return num / den
