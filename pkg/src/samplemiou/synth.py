"""Seeded synthetic defect datasets and a parametric imperfect detector.

Randomness comes from numpy's PCG64. Every sample gets its own substream,
seeded from ``SeedSequence([seed, stream_tag, key])`` where ``key`` is the
sample index (generation) or a 64-bit digest of the sample id (simulation).
Output therefore depends only on the config and seed, never on the order or
parallelism with which samples are produced.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .masks import BinaryMask

_GEN_STREAM = 0
_SIM_STREAM = 1
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
MAX_PLACEMENT_TRIES = 200


class PlacementError(RuntimeError):
    """A defect could not be placed without touching the others."""

    def __init__(self, sample_id: str, area: int):
        self.sample_id = sample_id
        self.area = area
        super().__init__(
            f"sample {sample_id}: no free spot for a {area}-pixel defect "
            f"after {MAX_PLACEMENT_TRIES} tries"
        )


def _pair(value, name) -> Tuple[int, int]:
    lo, hi = (int(v) for v in value)
    if lo > hi:
        raise ValueError(f"{name}: min {lo} exceeds max {hi}")
    return lo, hi


class _FromMapping:
    @classmethod
    def from_mapping(cls, data: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class SynthConfig(_FromMapping):
    width: int = 128
    height: int = 128
    num_samples: int = 100
    defect_probability: float = 0.1
    defects_per_positive: Tuple[int, int] = (1, 3)
    scale_alpha: float = 2.0
    area_range: Tuple[int, int] = (4, 1024)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "defects_per_positive", _pair(self.defects_per_positive, "defects_per_positive"))
        object.__setattr__(self, "area_range", _pair(self.area_range, "area_range"))
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if not 0.0 <= self.defect_probability <= 1.0:
            raise ValueError("defect_probability must be in [0, 1]")
        if self.defects_per_positive[0] < 1:
            raise ValueError("a positive sample needs at least one defect")
        if not self.scale_alpha > 0:
            raise ValueError("scale_alpha must be positive")
        if self.area_range[0] < 1:
            raise ValueError("defect areas must be at least one pixel")
        if self.area_range[1] > self.width * self.height:
            raise ValueError("area_range max exceeds the image size")


@dataclass(frozen=True)
class DetectorProfile(_FromMapping):
    """Knobs of the simulated segmenter. All-zero fields give a perfect detector."""

    detect_floor_area: int = 0
    miss_prob_small: float = 0.0
    boundary_jitter: int = 0
    false_positive_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.miss_prob_small <= 1.0:
            raise ValueError("miss_prob_small must be in [0, 1]")
        if self.detect_floor_area < 0 or self.boundary_jitter < 0:
            raise ValueError("detect_floor_area and boundary_jitter must be nonnegative")
        if not self.false_positive_rate >= 0:
            raise ValueError("false_positive_rate must be nonnegative")


class DiscretePowerLaw:
    """P(a) proportional to a**-alpha on the integers lo..hi, sampled by inverse CDF."""

    def __init__(self, alpha: float, lo: int, hi: int):
        if lo < 1 or hi < lo:
            raise ValueError(f"bad support [{lo}, {hi}]")
        self.alpha = alpha
        self.lo = lo
        self.hi = hi
        support = np.arange(lo, hi + 1, dtype=np.float64)
        pmf = support ** -alpha
        cdf = np.cumsum(pmf)
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        self._cdf = cdf

    def cdf(self, a) -> np.ndarray:
        a = np.floor(np.asarray(a, dtype=np.float64))
        idx = np.clip(a - self.lo, -1, self.hi - self.lo).astype(np.int64)
        return np.where(idx < 0, 0.0, self._cdf[np.maximum(idx, 0)])

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return self.lo + np.searchsorted(self._cdf, u, side="right")


def _substream(seed: int, tag: int, key: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, tag, key])
    return np.random.Generator(np.random.PCG64(ss))


def _id_key(sample_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(sample_id.encode(), digest_size=8).digest(), "little")


def sample_id(index: int) -> str:
    return f"sample_{index:05d}"


def _defect_footprint(rng, area: int, width: int, height: int) -> np.ndarray:
    """Rectangle of exactly ``area`` pixels with a notch eroded from one corner."""
    ratio = math.exp(rng.uniform(math.log(0.25), math.log(4.0)))
    w_min = -(-area // height)
    w_max = min(width, area)
    w = int(min(max(round(math.sqrt(area * ratio)), w_min), w_max))
    h = -(-area // w)
    shape = np.ones((h, w), dtype=bool)
    notch = w * h - area
    if notch:
        row = 0 if rng.random() < 0.5 else h - 1
        if rng.random() < 0.5:
            shape[row, :notch] = False
        else:
            shape[row, w - notch:] = False
    return shape


def _place(rng, canvas: np.ndarray, shape: np.ndarray, sid: str, area: int) -> None:
    H, W = canvas.shape
    h, w = shape.shape
    for _ in range(MAX_PLACEMENT_TRIES):
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        # one-pixel moat keeps defects separate 8-connected components
        if canvas[max(top - 1, 0):top + h + 1, max(left - 1, 0):left + w + 1].any():
            continue
        canvas[top:top + h, left:left + w] |= shape
        return
    raise PlacementError(sid, area)


def generate_sample(cfg: SynthConfig, index: int) -> Tuple[str, BinaryMask, List[int]]:
    """Build one sample; returns its id, mask and the drawn defect areas."""
    sid = sample_id(index)
    rng = _substream(cfg.seed, _GEN_STREAM, index)
    canvas = np.zeros((cfg.height, cfg.width), dtype=bool)
    areas: List[int] = []
    if rng.random() < cfg.defect_probability:
        lo, hi = cfg.defects_per_positive
        n = int(rng.integers(lo, hi + 1))
        law = DiscretePowerLaw(cfg.scale_alpha, *cfg.area_range)
        areas = [int(a) for a in law.sample(rng, n)]
        # big ones first, they are the hardest to fit
        for area in sorted(areas, reverse=True):
            _place(rng, canvas, _defect_footprint(rng, area, cfg.width, cfg.height), sid, area)
    return sid, BinaryMask(canvas), areas


def gen_dataset(cfg: SynthConfig) -> List[Tuple[str, BinaryMask]]:
    return [generate_sample(cfg, i)[:2] for i in range(cfg.num_samples)]


class SimulationLogEntry(NamedTuple):
    id: str
    defects: int
    missed: int
    detected: int  # defects whose predicted footprint is non-empty after jitter
    spurious: int


def _jitter(rng, footprint: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return footprint
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    if rng.random() < 0.5:
        return ndimage.binary_dilation(footprint, structure=structure)
    return ndimage.binary_erosion(footprint, structure=structure)


def simulate_sample(sid: str, gt: BinaryMask, profile: DetectorProfile, seed: int):
    rng = _substream(seed, _SIM_STREAM, _id_key(sid))
    labels, n = ndimage.label(gt.pixels, structure=_EIGHT_CONNECTED)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    pred = np.zeros(gt.shape, dtype=bool)
    missed = detected = 0
    for label in range(1, n + 1):
        if areas[label] < profile.detect_floor_area and rng.random() < profile.miss_prob_small:
            missed += 1
            continue
        footprint = _jitter(rng, labels == label, profile.boundary_jitter)
        if footprint.any():
            detected += 1
        pred |= footprint
    spurious = int(rng.poisson(profile.false_positive_rate)) if profile.false_positive_rate else 0
    H, W = gt.shape
    for _ in range(spurious):
        side = int(rng.integers(1, 4))
        top = int(rng.integers(0, H))
        left = int(rng.integers(0, W))
        pred[top:top + side, left:left + side] = True
    return BinaryMask(pred), SimulationLogEntry(sid, n, missed, detected, spurious)


def simulate_predictions(gt_set: Sequence, profile: DetectorProfile, seed: int):
    """Run the simulated detector over ``(id, gt)`` pairs.

    Defects are the 8-connected components of each ground-truth mask. Returns
    ``(predictions, log)`` where ``predictions`` is a list of ``(id, pred)``.
    """
    predictions = []
    log = []
    for sid, gt in gt_set:
        pred, entry = simulate_sample(sid, gt, profile, seed)
        predictions.append((sid, pred))
        log.append(entry)
    return predictions, log


DILUTION_SIZE = (64, 64)


def dilution_scenario() -> List[Tuple[str, BinaryMask, BinaryMask]]:
    """Two samples: a 1000-pixel defect found exactly, a 50-pixel defect missed."""
    h, w = DILUTION_SIZE
    big = np.zeros((h, w), dtype=bool)
    big[10:35, 10:50] = True  # 25 x 40
    small = np.zeros((h, w), dtype=bool)
    small[30:35, 20:30] = True  # 5 x 10
    return [
        ("large_found", BinaryMask(big), BinaryMask(big)),
        ("small_missed", BinaryMask(small), BinaryMask.empty(w, h)),
    ]
