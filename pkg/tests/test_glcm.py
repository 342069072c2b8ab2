import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sarviews.errors import DegenerateInput, ParamError
from sarviews.glcm import (
    GlcmConfig,
    GlcmMatrix,
    GlcmOffset,
    compute_glcm,
    glcm_features,
    texture_features,
)
from sarviews.image import QuantizedImage


def enumerate_pairs_glcm(idx, levels, dx, dy, symmetric):
    """Oracle: visit every pixel, look up its displaced partner, count."""
    h, w = len(idx), len(idx[0])
    counts = [[0] * levels for _ in range(levels)]
    total = 0
    for y in range(h):
        for x in range(w):
            xx, yy = x + dx, y + dy
            if 0 <= xx < w and 0 <= yy < h:
                i, j = idx[y][x], idx[yy][xx]
                counts[i][j] += 1
                total += 1
                if symmetric:
                    counts[j][i] += 1
                    total += 1
    return [[c / total for c in row] for row in counts]


def q(rows, levels):
    return QuantizedImage(np.array(rows), levels)


@st.composite
def small_quantized(draw):
    levels = draw(st.integers(2, 4))
    h = draw(st.integers(1, 8))
    w = draw(st.integers(1, 8))
    idx = draw(arrays(np.int64, (h, w), elements=st.integers(0, levels - 1)))
    return idx, levels


offsets = st.sampled_from([(1, 0), (0, 1), (1, 1), (1, -1), (-1, 0), (2, 1), (0, -2)])


def test_constant_image_single_entry():
    m = compute_glcm(q(np.full((5, 5), 2), 4), GlcmOffset(1, 0, True))
    expected = np.zeros((4, 4))
    expected[2, 2] = 1.0
    np.testing.assert_array_equal(m.p, expected)


def test_two_row_image():
    m = compute_glcm(q([[0, 0], [1, 1]], 2), GlcmOffset(1, 0, True))
    np.testing.assert_allclose(m.p, [[0.5, 0.0], [0.0, 0.5]], atol=1e-15)


def test_checkerboard():
    m = compute_glcm(q([[0, 1], [1, 0]], 2), GlcmOffset(1, 0, True))
    np.testing.assert_allclose(m.p, [[0.0, 0.5], [0.5, 0.0]], atol=1e-15)


def test_no_pairs_is_degenerate():
    with pytest.raises(DegenerateInput):
        compute_glcm(q([[0]], 2), GlcmOffset(1, 0))


def test_zero_offset_rejected():
    with pytest.raises(ParamError):
        GlcmOffset(0, 0)


@settings(max_examples=200, deadline=None)
@given(small_quantized(), offsets, st.booleans())
def test_matches_pair_enumeration(img, off, symmetric):
    idx, levels = img
    dx, dy = off
    h, w = idx.shape
    if abs(dx) >= w or abs(dy) >= h:
        with pytest.raises(DegenerateInput):
            compute_glcm(QuantizedImage(idx, levels), GlcmOffset(dx, dy, symmetric))
        return
    m = compute_glcm(QuantizedImage(idx, levels), GlcmOffset(dx, dy, symmetric))
    oracle = enumerate_pairs_glcm(idx.tolist(), levels, dx, dy, symmetric)
    np.testing.assert_allclose(m.p, oracle, atol=1e-12, rtol=0)
    assert abs(m.p.sum() - 1.0) <= 1e-9
    assert np.all(m.p >= 0)
    if symmetric:
        assert np.array_equal(m.p, m.p.T)


# -- features ----------------------------------------------------------------

def test_features_constant():
    p = np.zeros((4, 4))
    p[1, 1] = 1.0
    f = glcm_features(GlcmMatrix(4, p))
    assert f.as_tuple() == (0.0, 0.0, 1.0)


def test_features_checkerboard():
    f = glcm_features(GlcmMatrix(2, np.array([[0.0, 0.5], [0.5, 0.0]])))
    # by hand: C = 2 * 0.5 * 1, E = -2 * 0.5 ln 0.5, H = 2 * 0.5 / 2
    assert f.contrast == pytest.approx(1.0, abs=1e-12)
    assert f.entropy == pytest.approx(math.log(2), abs=1e-12)
    assert f.homogeneity == pytest.approx(0.5, abs=1e-12)


def test_features_uniform_2x2():
    f = glcm_features(GlcmMatrix(2, np.full((2, 2), 0.25)))
    assert f.contrast == pytest.approx(0.5, abs=1e-12)
    assert f.entropy == pytest.approx(math.log(4), abs=1e-12)
    assert f.homogeneity == pytest.approx(0.75, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(small_quantized(), offsets)
def test_feature_bounds(img, off):
    idx, levels = img
    dx, dy = off
    if abs(dx) >= idx.shape[1] or abs(dy) >= idx.shape[0]:
        return
    f = glcm_features(compute_glcm(QuantizedImage(idx, levels), GlcmOffset(dx, dy)))
    assert 0.0 <= f.contrast <= (levels - 1) ** 2 + 1e-12
    assert 0.0 <= f.entropy <= math.log(levels ** 2) + 1e-12
    assert 0.0 < f.homogeneity <= 1.0 + 1e-12
    on_diagonal = f.contrast == 0.0
    assert on_diagonal == (abs(f.homogeneity - 1.0) < 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shuffled_pixels_keep_bounds(seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 16, (12, 12))
    rng.shuffle(idx.ravel())
    f = glcm_features(compute_glcm(QuantizedImage(idx, 16), GlcmOffset()))
    assert 0.0 <= f.contrast <= 225.0
    assert 0.0 <= f.entropy <= math.log(256) + 1e-12
    assert 0.0 < f.homogeneity <= 1.0


def test_averaged_mode_means_four_directions():
    rng = np.random.default_rng(3)
    qi = QuantizedImage(rng.integers(0, 4, (6, 7)), 4)
    per_dir = [glcm_features(compute_glcm(qi, GlcmOffset(dx, dy))).as_tuple()
               for dx, dy in [(1, 0), (0, 1), (1, 1), (1, -1)]]
    avg = texture_features(qi, GlcmConfig(levels=4, averaged=True))
    np.testing.assert_allclose(avg.as_tuple(), np.mean(per_dir, axis=0), atol=1e-12)


def test_averaged_mode_skips_impossible_directions():
    qi = QuantizedImage(np.array([[0, 1, 0]]), 2)
    avg = texture_features(qi, GlcmConfig(levels=2, averaged=True))
    single = glcm_features(compute_glcm(qi, GlcmOffset(1, 0)))
    assert avg == single
