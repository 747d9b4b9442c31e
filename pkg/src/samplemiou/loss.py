"""Joint segmentation + classification objective with hand-derived gradients.

    L = lambda_seg * L_seg + lambda_cls * L_cls

``L_seg`` is pixel BCE averaged over the image, ``L_cls`` is BCE on the
sample-level defect probability. Inputs are clamped to ``[eps, 1 - eps]``
before taking logs; the gradient is zero wherever the clamp is active.

The two gradient channels are independent at this boundary: ``dS`` never
depends on ``p_hat`` and ``dp`` never depends on ``S``. Any coupling happens
inside whatever shared encoder produced both outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .masks import BinaryMask, DimensionMismatchError, ProbabilityMap

DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_seg: float = 0.5
    lambda_cls: float = 0.5

    def __post_init__(self):
        if self.lambda_seg < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_seg + self.lambda_cls <= 0:
            raise ValueError("at least one loss weight must be positive")

    def scaled(self, a: float) -> "LossWeights":
        return LossWeights(a * self.lambda_seg, a * self.lambda_cls)


@dataclass(frozen=True, eq=False)
class GradientField:
    """dL/dS for every pixel, same H x W layout as the probability map."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps!r}")


def _seg_inputs(S: ProbabilityMap, Y: BinaryMask, eps: float):
    _check_eps(eps)
    if S.shape != Y.shape:
        raise DimensionMismatchError(S.shape, Y.shape, "probability map and target mask")
    return S.values, Y.pixels


def seg_bce(S: ProbabilityMap, Y: BinaryMask, eps: float = DEFAULT_EPS) -> float:
    s, y = _seg_inputs(S, Y, eps)
    s = np.clip(s, eps, 1.0 - eps)
    per_pixel = np.where(y, -np.log(s), -np.log1p(-s))
    return float(per_pixel.sum() / s.size)


def seg_bce_grad(S: ProbabilityMap, Y: BinaryMask, eps: float = DEFAULT_EPS) -> GradientField:
    s, y = _seg_inputs(S, Y, eps)
    clamped = (s < eps) | (s > 1.0 - eps)
    with np.errstate(divide="ignore"):
        g = np.where(y, -1.0 / s, 1.0 / (1.0 - s)) / s.size
    g[clamped] = 0.0
    return GradientField(g)


def cls_bce(p_hat: float, y: bool, eps: float = DEFAULT_EPS) -> float:
    _check_eps(eps)
    p = min(max(p_hat, eps), 1.0 - eps)
    return -math.log(p) if y else -math.log1p(-p)


def cls_bce_grad(p_hat: float, y: bool, eps: float = DEFAULT_EPS) -> float:
    _check_eps(eps)
    if p_hat < eps or p_hat > 1.0 - eps:
        return 0.0
    return -1.0 / p_hat if y else 1.0 / (1.0 - p_hat)


def joint_loss(S, Y, p_hat, y, w: LossWeights = LossWeights(), eps: float = DEFAULT_EPS):
    """Return ``(total, seg_part, cls_part)``; the parts are unweighted."""
    seg = seg_bce(S, Y, eps)
    cls = cls_bce(p_hat, y, eps)
    return w.lambda_seg * seg + w.lambda_cls * cls, seg, cls


def joint_grads(S, Y, p_hat, y, w: LossWeights = LossWeights(), eps: float = DEFAULT_EPS):
    """Return ``(dS, dp)``: gradients of the joint loss w.r.t. ``S`` and ``p_hat``."""
    dS = seg_bce_grad(S, Y, eps)
    return GradientField(w.lambda_seg * dS.values), w.lambda_cls * cls_bce_grad(p_hat, y, eps)


def _relative_error(analytic, numeric) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale == 0.0:
        return 0.0
    return abs(analytic - numeric) / scale


@dataclass
class GradCheckReport:
    trials: int
    seg_max_rel_error: float = 0.0
    cls_max_rel_error: float = 0.0
    joint_max_rel_error: float = 0.0
    linearity_failures: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def grad_check(
    trials: int = 500,
    eps: float = DEFAULT_EPS,
    step: float = 1e-6,
    seg_tolerance: float = 1e-5,
    cls_tolerance: float = 1e-7,
    seed: int = 0,
    max_side: int = 6,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Each trial draws a random map/target pair and a random sample probability
    and checks every pixel whose probability lies in [0.01, 0.99]. It also
    checks that scaling both loss weights scales every loss component exactly.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport(trials=trials)
    for trial in range(trials):
        h, w_ = rng.integers(1, max_side + 1, size=2)
        s = rng.uniform(0.0, 1.0, size=(h, w_))
        Y = BinaryMask(rng.random((h, w_)) < 0.5)
        S = ProbabilityMap(s)
        p_hat = float(rng.uniform(0.01, 0.99))
        y = bool(rng.random() < 0.5)
        weights = LossWeights(float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0)))

        grad = seg_bce_grad(S, Y, eps).values
        dS, dp = joint_grads(S, Y, p_hat, y, weights, eps)
        for (i, j) in zip(*np.nonzero((s >= 0.01) & (s <= 0.99))):
            plus = s.copy()
            minus = s.copy()
            plus[i, j] += step
            minus[i, j] -= step
            Sp, Sm = ProbabilityMap(plus), ProbabilityMap(minus)
            numeric = (seg_bce(Sp, Y, eps) - seg_bce(Sm, Y, eps)) / (2 * step)
            err = _relative_error(grad[i, j], numeric)
            report.seg_max_rel_error = max(report.seg_max_rel_error, err)
            if err >= seg_tolerance:
                report.failures.append(f"trial {trial}: seg grad at ({i}, {j}) rel err {err:.3e}")
            numeric = (
                joint_loss(Sp, Y, p_hat, y, weights, eps)[0]
                - joint_loss(Sm, Y, p_hat, y, weights, eps)[0]
            ) / (2 * step)
            err = _relative_error(dS.values[i, j], numeric)
            report.joint_max_rel_error = max(report.joint_max_rel_error, err)
            if err >= seg_tolerance:
                report.failures.append(f"trial {trial}: joint dS at ({i}, {j}) rel err {err:.3e}")

        numeric = (cls_bce(p_hat + step, y, eps) - cls_bce(p_hat - step, y, eps)) / (2 * step)
        err = _relative_error(cls_bce_grad(p_hat, y, eps), numeric)
        report.cls_max_rel_error = max(report.cls_max_rel_error, err)
        if err >= cls_tolerance:
            report.failures.append(f"trial {trial}: cls grad rel err {err:.3e}")
        numeric = (
            joint_loss(S, Y, p_hat + step, y, weights, eps)[0]
            - joint_loss(S, Y, p_hat - step, y, weights, eps)[0]
        ) / (2 * step)
        err = _relative_error(dp, numeric)
        report.joint_max_rel_error = max(report.joint_max_rel_error, err)
        if err >= seg_tolerance:
            report.failures.append(f"trial {trial}: joint dp rel err {err:.3e}")

        # power-of-two scale keeps every product exact
        total, seg, cls = joint_loss(S, Y, p_hat, y, weights, eps)
        total2, seg2, cls2 = joint_loss(S, Y, p_hat, y, weights.scaled(2.0), eps)
        if not (total2 == 2.0 * total and seg2 == seg and cls2 == cls):
            report.linearity_failures += 1
            report.failures.append(f"trial {trial}: joint loss not linear in weights")
    return report
