import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fafilter.candidates import (
    check_feature_spec,
    extract_features,
    feature_matrix,
    find_candidates,
    label_components,
    threshold_map,
)

from .oracles import flood_fill_components

masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_threshold_examples():
    m = np.array([[0.2, 0.7], [0.5, 0.9]])
    assert threshold_map(m, 0.6).tolist() == [[False, True], [False, True]]
    assert threshold_map(m, 0.0).all()
    assert threshold_map(np.array([[1.0, 0.99]]), 1.0).tolist() == [[True, False]]
    with pytest.raises(ValueError):
        threshold_map(m, 1.0000001)
    with pytest.raises(ValueError):
        threshold_map(m, -0.1)


def test_label_examples():
    assert label_components(np.zeros((4, 4), bool)) == []
    (c,) = label_components(np.ones((5, 5), bool))
    assert c.area == 25 and c.bbox == (0, 0, 4, 4)
    diag = np.zeros((3, 3), bool)
    diag[0, 0] = diag[1, 1] = True
    assert len(label_components(diag, 4)) == 2
    (c,) = label_components(diag, 8)
    assert c.area == 2
    with pytest.raises(ValueError):
        label_components(diag, 6)


def test_components_sorted_by_bbox_origin():
    m = np.zeros((6, 6), bool)
    m[4, 0] = m[0, 5] = m[0, 1] = m[2, 3] = True
    origins = [c.bbox[:2] for c in label_components(m)]
    assert origins == sorted(origins)


@settings(max_examples=200, deadline=None)
@given(masks, st.sampled_from([4, 8]))
def test_matches_flood_fill_and_partitions(mask, conn):
    comps = label_components(mask, conn)
    ours = {frozenset(map(tuple, c.pixels.tolist())) for c in comps}
    assert ours == set(flood_fill_components(mask, conn))
    assert sum(c.area for c in comps) == int(mask.sum())
    for c in comps:
        r0, c0, r1, c1 = c.bbox
        assert (c.rows.min(), c.cols.min(), c.rows.max(), c.cols.max()) == (r0, c0, r1, c1)
        assert mask[c.rows, c.cols].all()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(m, a, b):
    lo, hi = sorted((a, b))
    assert threshold_map(m, hi).sum() <= threshold_map(m, lo).sum()


def test_feature_examples():
    m = np.zeros((10, 10))
    m[0, 0] = 1.0
    (c,) = find_candidates(m, 0.5)
    assert extract_features(c, m, ("area", "aspect", "cx", "cy")).tolist() == [1, 1, 0.05, 0.05]

    m = np.zeros((8, 8))
    m[2:4, 4:7] = 0.9
    (c,) = find_candidates(m, 0.5)
    w, h, a = extract_features(c, m, ("width", "height", "aspect"))
    assert (w, h, a) == (3, 2, 1.5)

    m = np.zeros((3, 3))
    m[1, 1], m[1, 2] = 0.6, 0.8
    (c,) = find_candidates(m, 0.5)
    mean, mx = extract_features(c, m, ("mean_score", "max_score"))
    assert mean == pytest.approx(0.7) and mx == 0.8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10), st.integers(1, 5), st.integers(1, 5))
def test_translation_changes_only_location(dr, dc, h, w):
    H, W = 20, 24
    base = np.zeros((H, W))
    base[0:h, 0:w] = 0.9
    moved = np.roll(np.roll(base, dr, axis=0), dc, axis=1)
    spec = ("area", "width", "height", "aspect", "cx", "cy", "mean_score", "max_score")
    f0 = feature_matrix(find_candidates(base, 0.5), base, spec)[0]
    f1 = feature_matrix(find_candidates(moved, 0.5), moved, spec)[0]
    delta = f1 - f0
    assert np.allclose(delta[[0, 1, 2, 3, 6, 7]], 0)
    assert delta[4] == pytest.approx(dc / W) and delta[5] == pytest.approx(dr / H)


def test_min_area_filter():
    m = np.zeros((6, 6))
    m[0, 0] = 0.9
    m[3:5, 3:5] = 0.9
    assert [c.area for c in find_candidates(m, 0.5, min_area=4)] == [4]


def test_feature_spec_validation():
    assert check_feature_spec("area, cx") == ("area", "cx")
    for bad in ([], ["area", "area"], ["colour"]):
        with pytest.raises(ValueError):
            check_feature_spec(bad)
    m = np.zeros((3, 3))
    m[1, 1] = 1
    (c,) = find_candidates(m, 0.5)
    with pytest.raises(ValueError):
        extract_features(c, m, [])
    assert feature_matrix([], m, ("area",)).shape == (0, 1)
