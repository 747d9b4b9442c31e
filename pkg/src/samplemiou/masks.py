"""Binary masks, probability maps and exact per-sample pixel confusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class DimensionMismatchError(ValueError):
    """Two maps that must share a shape do not."""

    def __init__(self, left_shape, right_shape, what="masks"):
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape)
        super().__init__(
            f"{what} differ in shape: {self.left_shape} (H, W) vs {self.right_shape} (H, W)"
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """H x W boolean defect map; True marks a defect pixel."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be at least 1x1, got shape {arr.shape}")
        object.__setattr__(self, "pixels", _frozen(arr))

    @classmethod
    def from_flat(cls, width: int, height: int, pixels) -> "BinaryMask":
        flat = np.asarray(pixels, dtype=bool).ravel()
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} pixels for {width}x{height}, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def any(self) -> bool:
        return bool(self.pixels.any())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """H x W defect probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"probability map must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"probability map must be at least 1x1, got shape {arr.shape}")
        # NaN fails both comparisons, so it is rejected here too
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("probability values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(arr))

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "ProbabilityMap":
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} values for {width}x{height}, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, ProbabilityMap):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class PixelConfusion:
    """Pixel counts of one (ground truth, prediction) pair."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @property
    def union(self) -> int:
        return self.tp + self.fp + self.fn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "PixelConfusion") -> "PixelConfusion":
        return PixelConfusion(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


def binarize(prob: ProbabilityMap, theta: float) -> BinaryMask:
    """Threshold a probability map; a pixel is a defect iff its value >= theta."""
    return BinaryMask(prob.values >= theta)


def as_binary(pred, theta: float = 0.5) -> BinaryMask:
    """Return ``pred`` unchanged if already binary, else binarize it at ``theta``."""
    if isinstance(pred, BinaryMask):
        return pred
    if isinstance(pred, ProbabilityMap):
        return binarize(pred, theta)
    raise TypeError(f"expected BinaryMask or ProbabilityMap, got {type(pred).__name__}")


def pixel_confusion(gt: BinaryMask, pred: BinaryMask) -> PixelConfusion:
    if gt.shape != pred.shape:
        raise DimensionMismatchError(gt.shape, pred.shape, "ground truth and prediction")
    g = gt.pixels
    p = pred.pixels
    n_gt = np.count_nonzero(g)
    n_pred = np.count_nonzero(p)
    tp = int(np.count_nonzero(g & p))
    fp = int(n_pred) - tp
    fn = int(n_gt) - tp
    tn = g.size - tp - fp - fn
    return PixelConfusion(tp, fp, fn, tn)


def iou(c: PixelConfusion) -> Optional[float]:
    """tp / (tp + fp + fn), or None for a pure true-negative pair."""
    union = c.tp + c.fp + c.fn
    if union == 0:
        return None
    return c.tp / union
