import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from landmark_cascade.geometry import (BBox, ShapeError, SimilarityTransform, as_shape,
                                       denormalize_shape, mean_shape, normalize_shape,
                                       similarity_fit, similarity_params)

coords = st.floats(-1e4, 1e4, allow_nan=False)
shapes = st.integers(3, 12).flatmap(lambda k: arrays(np.float64, (k, 2), elements=coords))
boxes = st.builds(BBox, coords, coords, st.floats(1e-2, 1e4), st.floats(1e-2, 1e4))


def test_normalize_center_point():
    out = normalize_shape([[50, 50]], BBox(0, 0, 100, 100))
    np.testing.assert_array_equal(out, [[0.5, 0.5]])


def test_normalize_unit_box_is_identity():
    s = np.array([[1.5, -2.0], [3.0, 4.25], [0.0, 7.0]])
    np.testing.assert_array_equal(normalize_shape(s, BBox(0, 0, 1, 1)), s)


def test_denormalize_examples():
    np.testing.assert_array_equal(denormalize_shape([[0.5, 0.5]], BBox(0, 0, 100, 100)), [[50, 50]])
    np.testing.assert_array_equal(denormalize_shape([[0, 0]], BBox(10, 20, 30, 40)), [[10, 20]])


def test_normalize_rejects_non_finite():
    with pytest.raises(ShapeError):
        normalize_shape([[np.nan, 1.0]], BBox(0, 0, 1, 1))
    with pytest.raises(ShapeError):
        as_shape([[1.0, 2.0, 3.0]])


@pytest.mark.parametrize("bad", [(0, 0, 0, 1), (0, 0, 1, -1), (0, math.inf, 1, 1)])
def test_bbox_validation(bad):
    with pytest.raises(ValueError):
        BBox(*bad)


def test_bbox_size_is_geometric_mean():
    assert BBox(0, 0, 4, 9).size == 6.0


@given(shapes, boxes)
def test_normalize_roundtrip(shape, box):
    back = denormalize_shape(normalize_shape(shape, box), box)
    scale = max(1.0, float(np.abs(shape).max()))
    assert np.max(np.abs(back - shape)) <= 1e-12 * scale * max(1.0, box.w, box.h, 1 / box.w, 1 / box.h)


def test_mean_shape_examples():
    s = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(mean_shape([s]), s)
    np.testing.assert_array_equal(mean_shape([[[0, 0]], [[2, 2]]]), [[1, 1]])
    with pytest.raises(ShapeError):
        mean_shape([np.zeros((3, 2)), np.zeros((4, 2))])
    with pytest.raises(ShapeError):
        mean_shape([])


@given(st.lists(arrays(np.float64, (4, 2), elements=st.floats(-100, 100)), min_size=1, max_size=6),
       st.randoms())
def test_mean_shape_permutation_invariant(items, rnd):
    perm = list(items)
    rnd.shuffle(perm)
    np.testing.assert_allclose(mean_shape(perm), mean_shape(items), rtol=0, atol=1e-12)


def test_similarity_identity_and_scale():
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
    t = similarity_fit(ref, ref)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(t.translation, (0, 0), atol=1e-12)
    t2 = similarity_fit(ref, 2 * ref)
    assert t2.scale == pytest.approx(2.0, abs=1e-12)
    assert t2.rotation == pytest.approx(0.0, abs=1e-12)


def test_similarity_recovers_known_transform(rng):
    ref = rng.normal(size=(5, 2))
    true = SimilarityTransform(1.3, 0.4, (3.0, -2.0))
    t = similarity_fit(ref, true.apply(ref))
    assert abs(t.scale - 1.3) < 1e-6
    assert abs(t.rotation - 0.4) < 1e-6
    np.testing.assert_allclose(t.translation, (3.0, -2.0), atol=1e-6)


@given(st.floats(0.2, 5.0), st.floats(-math.pi + 1e-6, math.pi), st.tuples(coords, coords),
       st.integers(0, 2**32 - 1))
def test_similarity_fit_inverts_any_transform(scale, rot, shift, seed):
    ref = np.random.default_rng(seed).normal(size=(6, 2)) * 10
    t = similarity_fit(ref, SimilarityTransform(scale, rot, shift).apply(ref))
    assert abs(t.scale - scale) < 1e-6
    d = (t.rotation - rot + math.pi) % (2 * math.pi) - math.pi
    assert abs(d) < 1e-6


def test_similarity_degenerate_reference():
    with pytest.raises(ShapeError):
        similarity_fit(np.ones((4, 2)), np.zeros((4, 2)))


@given(st.floats(0.1, 10), st.floats(-3.1, 3.1), st.tuples(coords, coords))
def test_inverse_roundtrip(scale, rot, shift):
    t = SimilarityTransform(scale, rot, shift)
    p = np.array([[1.0, -2.0], [30.0, 4.0]])
    back = t.inverse().apply(t.apply(p))
    assert np.max(np.abs(back - p)) < 1e-9 * max(1.0, max(abs(v) for v in shift) / scale)


def test_similarity_params_batched_matches_single(rng):
    ref = rng.normal(size=(5, 2))
    targets = np.stack([SimilarityTransform(s, r).apply(ref) + 7 for s, r in [(0.5, 1.0), (2.0, -2.0)]])
    ab = similarity_params(ref, targets)
    np.testing.assert_allclose(ab[0], [0.5 * math.cos(1.0), 0.5 * math.sin(1.0)], atol=1e-12)
    np.testing.assert_allclose(ab[1], [2.0 * math.cos(-2.0), 2.0 * math.sin(-2.0)], atol=1e-12)
