import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import confusion_loop
from samplemiou import BinaryMask, PixelConfusion, ProbabilityMap, binarize, iou, pixel_confusion
from samplemiou.masks import DimensionMismatchError


def mask_pair(max_side=12):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: st.tuples(
            arrays(bool, hw, elements=st.booleans()), arrays(bool, hw, elements=st.booleans())
        )
    )


class TestTypes:
    def test_from_flat_row_major(self):
        m = BinaryMask.from_flat(3, 2, [1, 0, 0, 0, 0, 1])
        assert m.width == 3 and m.height == 2
        assert m.pixels[0, 0] and m.pixels[1, 2]

    def test_from_flat_wrong_length(self):
        with pytest.raises(ValueError):
            BinaryMask.from_flat(3, 2, [True] * 5)

    @pytest.mark.parametrize("shape", [(0, 3), (3, 0), (4,)])
    def test_rejects_degenerate_shapes(self, shape):
        with pytest.raises(ValueError):
            BinaryMask(np.zeros(shape, dtype=bool))

    def test_masks_are_immutable(self):
        m = BinaryMask(np.zeros((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            m.pixels[0, 0] = True

    def test_source_array_is_copied(self):
        src = np.zeros((2, 2), dtype=bool)
        m = BinaryMask(src)
        src[0, 0] = True
        assert not m.any()

    @pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
    def test_probability_range(self, bad):
        with pytest.raises(ValueError):
            ProbabilityMap(np.array([[0.5, bad]]))

    def test_confusion_rejects_negative(self):
        with pytest.raises(ValueError):
            PixelConfusion(1, -1, 0, 0)


class TestBinarize:
    def test_straddle(self):
        out = binarize(ProbabilityMap.from_flat(2, 1, [0.4, 0.6]), 0.5)
        assert out.pixels.ravel().tolist() == [False, True]

    def test_zero_threshold_all_true(self):
        rng = np.random.default_rng(0)
        out = binarize(ProbabilityMap(rng.random((5, 7))), 0.0)
        assert out.pixels.all() and out.shape == (5, 7)

    def test_boundary_value_maps_to_true(self):
        out = binarize(ProbabilityMap.from_flat(2, 2, [0.5, 0.49, 1.0, 0.0]), 0.5)
        assert out.pixels.ravel().tolist() == [True, False, True, False]


class TestPixelConfusion:
    def test_identity(self):
        rng = np.random.default_rng(1)
        g = BinaryMask(rng.random((9, 11)) < 0.2)
        k = g.count()
        assert pixel_confusion(g, g) == PixelConfusion(k, 0, 0, 99 - k)

    def test_pure_true_negative(self):
        e = BinaryMask.empty(10, 10)
        assert pixel_confusion(e, e) == PixelConfusion(0, 0, 0, 100)

    def test_matches_pixel_loop(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            g = rng.random((8, 8)) < rng.random()
            p = rng.random((8, 8)) < rng.random()
            c = pixel_confusion(BinaryMask(g), BinaryMask(p))
            assert (c.tp, c.fp, c.fn, c.tn) == confusion_loop(g.tolist(), p.tolist())

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionMismatchError) as err:
            pixel_confusion(BinaryMask.empty(4, 3), BinaryMask.empty(3, 4))
        assert err.value.left_shape == (3, 4) and err.value.right_shape == (4, 3)
        assert "(3, 4)" in str(err.value) and "(4, 3)" in str(err.value)

    def test_counts_are_python_ints(self):
        c = pixel_confusion(BinaryMask.empty(3, 3), BinaryMask.empty(3, 3))
        assert all(type(v) is int for v in (c.tp, c.fp, c.fn, c.tn))

    @given(mask_pair())
    @settings(max_examples=200, deadline=None)
    def test_swap_symmetry(self, pair):
        g, p = BinaryMask(pair[0]), BinaryMask(pair[1])
        a = pixel_confusion(g, p)
        b = pixel_confusion(p, g)
        assert (a.tp, a.tn, a.fp, a.fn) == (b.tp, b.tn, b.fn, b.fp)
        assert a.total == g.pixels.size

    @given(mask_pair(), st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_permutation_equivariance(self, pair, rnd):
        g, p = pair
        perm = list(range(g.size))
        rnd.shuffle(perm)
        g2 = g.ravel()[perm].reshape(g.shape)
        p2 = p.ravel()[perm].reshape(p.shape)
        assert pixel_confusion(BinaryMask(g), BinaryMask(p)) == pixel_confusion(BinaryMask(g2), BinaryMask(p2))

    def test_sum_equals_concatenation(self):
        rng = np.random.default_rng(7)
        gts = [rng.random((6, 9)) < 0.3 for _ in range(20)]
        preds = [rng.random((6, 9)) < 0.3 for _ in range(20)]
        total = PixelConfusion(0, 0, 0, 0)
        for g, p in zip(gts, preds):
            total = total + pixel_confusion(BinaryMask(g), BinaryMask(p))
        big = pixel_confusion(BinaryMask(np.vstack(gts)), BinaryMask(np.vstack(preds)))
        assert total == big


class TestIoU:
    def test_half(self):
        assert iou(PixelConfusion(50, 25, 25, 0)) == 0.5

    def test_pure_true_negative_is_absent(self):
        assert iou(PixelConfusion(0, 0, 0, 123)) is None

    def test_complete_miss(self):
        assert iou(PixelConfusion(0, 0, 50, 10)) == 0.0

    @given(arrays(bool, (7, 5), elements=st.booleans()))
    def test_self_iou(self, arr):
        m = BinaryMask(arr)
        value = iou(pixel_confusion(m, m))
        if arr.any():
            assert value == 1.0
        else:
            assert value is None
