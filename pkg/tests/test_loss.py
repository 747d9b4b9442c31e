import math

import numpy as np
import pytest

from oracles import bce_scalar_sum
from samplemiou import (
    BinaryMask,
    LossWeights,
    ProbabilityMap,
    cls_bce,
    cls_bce_grad,
    joint_grads,
    joint_loss,
    seg_bce,
    seg_bce_grad,
)
from samplemiou.loss import DEFAULT_EPS, grad_check
from samplemiou.masks import DimensionMismatchError

EPS = DEFAULT_EPS
LOG2 = math.log(2.0)


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def random_instance(rng, h=4, w=4):
    return ProbabilityMap(rng.uniform(0, 1, (h, w))), BinaryMask(rng.random((h, w)) < 0.5)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert w.lambda_seg == 0.5 and w.lambda_cls == 0.5

    @pytest.mark.parametrize("args", [(-0.1, 1.0), (1.0, -0.1), (0.0, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            LossWeights(*args)


class TestSegBCE:
    def test_uniform_half(self, rng):
        S = ProbabilityMap(np.full((3, 5), 0.5))
        Y = BinaryMask(rng.random((3, 5)) < 0.5)
        assert math.isclose(seg_bce(S, Y), LOG2, rel_tol=1e-15)

    def test_perfect_prediction(self, rng):
        Y = BinaryMask(rng.random((4, 4)) < 0.5)
        S = ProbabilityMap(Y.pixels.astype(float))
        assert math.isclose(seg_bce(S, Y, EPS), -math.log(1 - EPS), rel_tol=1e-9)
        assert math.isclose(seg_bce(S, Y, EPS), EPS, rel_tol=1e-6)

    def test_matches_scalar_reference(self, rng):
        for _ in range(50):
            S, Y = random_instance(rng)
            ref = bce_scalar_sum(S.values.tolist(), Y.pixels.tolist(), EPS)
            assert math.isclose(seg_bce(S, Y), ref, rel_tol=1e-12)

    def test_finite_at_extremes(self):
        S = ProbabilityMap(np.array([[0.0, 1.0], [0.0, 1.0]]))
        Y = BinaryMask(np.array([[True, False], [False, True]]))
        assert math.isfinite(seg_bce(S, Y))
        assert np.all(np.isfinite(seg_bce_grad(S, Y).values))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            seg_bce(ProbabilityMap(np.zeros((2, 3))), BinaryMask.empty(2, 3))

    @pytest.mark.parametrize("eps", [0.0, 0.5, -1e-3])
    def test_bad_eps(self, eps):
        with pytest.raises(ValueError):
            seg_bce(ProbabilityMap(np.zeros((1, 1))), BinaryMask.empty(1, 1), eps)

    def test_minimized_by_matching_target(self, rng):
        Y = BinaryMask(rng.random((3, 3)) < 0.5)
        best = seg_bce(ProbabilityMap(Y.pixels.astype(float)), Y)
        for _ in range(100):
            S, _ = random_instance(rng, 3, 3)
            assert seg_bce(S, Y) > best


class TestSegBCEGrad:
    def test_single_positive_pixel(self):
        g = seg_bce_grad(ProbabilityMap(np.array([[0.5]])), BinaryMask(np.array([[True]])))
        assert g.values[0, 0] == -2.0

    def test_negative_pixel_in_2x2(self):
        g = seg_bce_grad(ProbabilityMap(np.full((2, 2), 0.5)), BinaryMask.empty(2, 2))
        assert g.values[0, 0] == 0.5
        assert g.width == 2 and g.height == 2

    def test_zero_where_clamped(self):
        S = ProbabilityMap(np.array([[0.0, 1.0, 1e-9, 0.3]]))
        g = seg_bce_grad(S, BinaryMask(np.array([[True, False, True, True]])))
        assert g.values[0, :3].tolist() == [0.0, 0.0, 0.0]
        assert g.values[0, 3] != 0.0

    def test_finite_differences(self, rng):
        for _ in range(30):
            h, w = (int(v) for v in rng.integers(1, 7, size=2))
            S, Y = random_instance(rng, h, w)
            grad = seg_bce_grad(S, Y).values
            s = S.values
            for i, j in zip(*np.nonzero((s >= 0.01) & (s <= 0.99))):
                def f(v):
                    t = s.copy()
                    t[i, j] = v
                    return seg_bce(ProbabilityMap(t), Y)

                numeric = central_difference(f, s[i, j])
                assert abs(grad[i, j] - numeric) / abs(numeric) < 1e-5


class TestClsBCE:
    def test_half(self):
        assert cls_bce(0.5, True) == cls_bce(0.5, False) == LOG2

    def test_confident_correct(self):
        assert math.isclose(cls_bce(1 - EPS, True), EPS, rel_tol=1e-6)

    def test_quarter(self):
        assert math.isclose(cls_bce(0.25, True), 1.386294, abs_tol=1e-6)
        assert cls_bce(0.25, True) == -math.log(0.25)

    def test_finite_at_extremes(self):
        assert math.isfinite(cls_bce(0.0, True)) and math.isfinite(cls_bce(1.0, False))

    def test_grad_values(self):
        assert cls_bce_grad(0.5, True) == -2.0
        assert cls_bce_grad(0.5, False) == 2.0
        assert cls_bce_grad(0.0, True) == 0.0 and cls_bce_grad(1.0, False) == 0.0

    def test_finite_differences(self, rng):
        for _ in range(500):
            p = float(rng.uniform(0.01, 0.99))
            y = bool(rng.random() < 0.5)
            numeric = central_difference(lambda v: cls_bce(v, y), p)
            assert abs(cls_bce_grad(p, y) - numeric) / abs(numeric) < 1e-7


class TestJoint:
    def test_cls_branch_off(self, rng):
        S, Y = random_instance(rng)
        total, seg, _ = joint_loss(S, Y, 0.3, True, LossWeights(0.7, 0.0))
        assert total == 0.7 * seg

    def test_paper_default_weights(self, monkeypatch):
        import samplemiou.loss as loss

        monkeypatch.setattr(loss, "seg_bce", lambda *a: 0.4)
        monkeypatch.setattr(loss, "cls_bce", lambda *a: 0.8)
        total, seg, cls = loss.joint_loss(None, None, 0.5, True, LossWeights())
        assert (seg, cls) == (0.4, 0.8)
        assert math.isclose(total, 0.6, rel_tol=1e-15)

    def test_parts_are_raw_losses(self, rng):
        S, Y = random_instance(rng)
        _, seg, cls = joint_loss(S, Y, 0.3, False, LossWeights(0.2, 0.9))
        assert seg == seg_bce(S, Y) and cls == cls_bce(0.3, False)

    def test_linearity(self, rng):
        S, Y = random_instance(rng)
        w = LossWeights(0.3, 0.6)
        t, s, c = joint_loss(S, Y, 0.7, True, w)
        for a in (0.25, 2.0, 8.0):
            t2, s2, c2 = joint_loss(S, Y, 0.7, True, w.scaled(a))
            assert (s2, c2) == (s, c)
            assert t2 == a * t
        for a in (0.1, 3.0, 17.7):
            t2, _, _ = joint_loss(S, Y, 0.7, True, w.scaled(a))
            assert math.isclose(t2, a * t, rel_tol=1e-15)

    def test_seg_branch_detached(self, rng):
        S, Y = random_instance(rng)
        dS, dp = joint_grads(S, Y, 0.4, True, LossWeights(0.0, 1.0))
        assert not dS.values.any()
        assert dp == cls_bce_grad(0.4, True)

    def test_halved_weights_halve_gradients(self, rng):
        S, Y = random_instance(rng)
        w = LossWeights(0.8, 0.6)
        dS, dp = joint_grads(S, Y, 0.4, False, w)
        dS2, dp2 = joint_grads(S, Y, 0.4, False, w.scaled(0.5))
        assert np.array_equal(dS2.values, dS.values * 0.5) and dp2 == dp * 0.5

    def test_gradient_channels_independent(self, rng):
        S, Y = random_instance(rng)
        S2, _ = random_instance(rng)
        w = LossWeights()
        dS_a, dp_a = joint_grads(S, Y, 0.2, True, w)
        dS_b, dp_b = joint_grads(S, Y, 0.9, False, w)
        assert np.array_equal(dS_a.values, dS_b.values)
        _, dp_c = joint_grads(S2, BinaryMask(~Y.pixels), 0.2, True, w)
        assert dp_c == dp_a

    def test_finite_differences(self, rng):
        w = LossWeights(0.35, 0.8)
        for _ in range(20):
            S, Y = random_instance(rng, 3, 4)
            p = float(rng.uniform(0.01, 0.99))
            y = bool(rng.random() < 0.5)
            dS, dp = joint_grads(S, Y, p, y, w)
            numeric = central_difference(lambda v: joint_loss(S, Y, v, y, w)[0], p)
            assert abs(dp - numeric) / abs(numeric) < 1e-5
            s = S.values
            for i, j in zip(*np.nonzero((s >= 0.01) & (s <= 0.99))):
                def f(v):
                    t = s.copy()
                    t[i, j] = v
                    return joint_loss(ProbabilityMap(t), Y, p, y, w)[0]

                numeric = central_difference(f, s[i, j])
                assert abs(dS.values[i, j] - numeric) / abs(numeric) < 1e-5


def test_grad_check_reports_failures_when_tolerance_is_impossible():
    report = grad_check(trials=5, seg_tolerance=1e-15, cls_tolerance=1e-15)
    assert not report.ok and report.failures


def test_grad_check_passes_small_run():
    assert grad_check(trials=50, seed=9).ok
