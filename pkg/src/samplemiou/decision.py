"""Sample-level decisions derived from segmentation output.

A sample is flagged defective when a scalar statistic of its predicted mask
reaches a threshold: ``y_hat = phi(S) >= tau``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, ProbabilityMap, binarize

Prediction = Union[BinaryMask, ProbabilityMap]

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Statistic(enum.Enum):
    POSITIVE_PIXEL_COUNT = "positive_pixel_count"
    POSITIVE_PIXEL_FRACTION = "positive_pixel_fraction"
    MAX_COMPONENT_AREA = "max_component_area"
    MAX_PROBABILITY = "max_probability"

    @classmethod
    def parse(cls, name: str) -> "Statistic":
        key = name.strip().lower().replace("-", "_")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(
            f"unknown statistic {name!r}; choose from {', '.join(m.value for m in cls)}"
        )


@dataclass(frozen=True)
class DecisionRule:
    """Statistic, threshold and binarization level used to decide each sample.

    The default (any predicted defect pixel flags the sample) is the most
    recall-preserving rule available.
    """

    statistic: Statistic = Statistic.POSITIVE_PIXEL_COUNT
    tau: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "theta", float(self.theta))
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta!r}")
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise ValueError(f"tau must be a finite nonnegative number, got {self.tau!r}")
        if self.statistic in (Statistic.POSITIVE_PIXEL_FRACTION, Statistic.MAX_PROBABILITY):
            if self.tau > 1:
                raise ValueError(f"{self.statistic.value} needs tau in [0, 1], got {self.tau!r}")
        elif float(self.tau) != int(self.tau):
            raise ValueError(f"{self.statistic.value} needs an integer tau, got {self.tau!r}")

    def as_dict(self) -> dict:
        return {"statistic": self.statistic.value, "tau": self.tau, "theta": self.theta}


@dataclass(frozen=True)
class SampleConfusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def max_component_area(mask: BinaryMask) -> int:
    """Area of the largest 8-connected group of defect pixels (0 for an empty mask)."""
    labels, n = ndimage.label(mask.pixels, structure=_EIGHT_CONNECTED)
    if n == 0:
        return 0
    return int(np.bincount(labels.ravel())[1:].max())


def phi(pred: Prediction, rule: DecisionRule) -> float:
    stat = rule.statistic
    if stat is Statistic.MAX_PROBABILITY:
        if isinstance(pred, ProbabilityMap):
            return float(pred.values.max())
        return 1.0 if pred.any() else 0.0
    mask = binarize(pred, rule.theta) if isinstance(pred, ProbabilityMap) else pred
    if stat is Statistic.POSITIVE_PIXEL_COUNT:
        return float(mask.count())
    if stat is Statistic.POSITIVE_PIXEL_FRACTION:
        return mask.count() / mask.pixels.size
    return float(max_component_area(mask))


def decide(pred: Prediction, rule: DecisionRule) -> bool:
    return phi(pred, rule) >= rule.tau


def sample_confusion(pairs: Iterable) -> SampleConfusion:
    """Tally ``(y, y_hat)`` pairs into a 2x2 sample-level confusion."""
    tp = tn = fp = fn = 0
    n = 0
    for y, y_hat in pairs:
        n += 1
        if y and y_hat:
            tp += 1
        elif y:
            fn += 1
        elif y_hat:
            fp += 1
        else:
            tn += 1
    if n == 0:
        raise ValueError("cannot tally an empty sequence of decisions")
    return SampleConfusion(tp=tp, tn=tn, fp=fp, fn=fn)


def seg_accuracy(c: SampleConfusion) -> float:
    if c.total == 0:
        raise ValueError("seg_accuracy is undefined for zero samples")
    return (c.tp + c.tn) / c.total


def seg_recall(c: SampleConfusion) -> Optional[float]:
    positives = c.tp + c.fn
    if positives == 0:
        return None
    return c.tp / positives


@dataclass(frozen=True)
class SweepRow:
    tau: float
    confusion: SampleConfusion
    seg_accuracy: float
    seg_recall: Optional[float]


def threshold_sweep(records: Sequence, tau_grid: Sequence[float]) -> list:
    """Re-decide every sample at each threshold of ``tau_grid``.

    ``records`` holds ``(y, phi_value)`` pairs with phi already computed, so
    the masks are visited once no matter how long the grid is.
    """
    grid = [float(t) for t in tau_grid]
    if not grid:
        raise ValueError("tau grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("tau grid must be strictly ascending")
    if len(records) == 0:
        raise ValueError("at least one record is required")

    y = np.array([bool(r[0]) for r in records])
    values = np.array([float(r[1]) for r in records])
    pos = np.sort(values[y])
    neg = np.sort(values[~y])
    taus = np.array(grid)
    # count of values >= tau is len - (number strictly below tau)
    tp = len(pos) - np.searchsorted(pos, taus, side="left")
    fp = len(neg) - np.searchsorted(neg, taus, side="left")

    rows = []
    for tau, tp_i, fp_i in zip(grid, tp, fp):
        c = SampleConfusion(
            tp=int(tp_i), tn=len(neg) - int(fp_i), fp=int(fp_i), fn=len(pos) - int(tp_i)
        )
        rows.append(SweepRow(tau, c, seg_accuracy(c), seg_recall(c)))
    return rows
