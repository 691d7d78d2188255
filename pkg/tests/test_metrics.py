import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fafilter.metrics import (
    auroc,
    best_f1,
    f1_at_threshold,
    format_metric_table,
    image_metrics,
    pixel_metrics,
    score_histograms,
    score_report,
    write_metric_table,
)

from .oracles import pairwise_auroc

scored = st.lists(
    st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), st.integers(0, 1)),
    min_size=2, max_size=60,
).filter(lambda xs: 0 < sum(l for _, l in xs) < len(xs))


def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert auroc([0.5, 0.5], [0, 1], exact=True) == Fraction(1, 2)
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=300, deadline=None)
@given(scored)
def test_auroc_matches_pairwise_oracle(pairs):
    s, l = zip(*pairs)
    assert auroc(s, l, exact=True) == pairwise_auroc(s, l)


@settings(max_examples=100, deadline=None)
@given(scored)
def test_auroc_invariant_under_increasing_transform(pairs):
    s, l = zip(*pairs)
    s = np.array(s)
    t = np.exp(3 * s) + 7
    # Only a transform that stays strictly increasing in floating point counts.
    assume(len(np.unique(t)) == len(np.unique(s)))
    assert auroc(s, l, exact=True) == auroc(t, l, exact=True)


def test_f1_examples():
    assert f1_at_threshold([0.1, 0.2, 0.3, 0.4], [0, 1, 0, 1], 0.0) == pytest.approx(2 / 3)
    assert f1_at_threshold([0.1, 0.9], [1, 0], 0.5) == 0.0
    f1, t = best_f1([0.2, 0.9], [0, 1])
    assert f1 == 1.0 and 0.2 < t <= 0.9
    f1, t = best_f1([0.1, 0.3, 0.3, 0.8], [0, 1, 0, 1])
    assert f1 == pytest.approx(0.8) and t == pytest.approx(0.2)


@settings(max_examples=200, deadline=None)
@given(scored)
def test_best_f1_is_max_over_all_thresholds(pairs):
    s, l = zip(*pairs)
    f1, t = best_f1(s, l)
    grid = sorted(set(s)) + [max(s) + 1]
    assert f1 == pytest.approx(max(f1_at_threshold(s, l, g) for g in grid))
    assert f1_at_threshold(s, l, t) == pytest.approx(f1)


@settings(max_examples=200, deadline=None)
@given(scored, st.integers(0, 10**6))
def test_best_f1_not_hurt_by_lowering_false_positive(pairs, pick):
    s, l = map(list, zip(*pairs))
    f1, t = best_f1(s, l)
    fps = [i for i in range(len(s)) if l[i] == 0 and s[i] >= t]
    if not fps:
        return
    i = fps[pick % len(fps)]
    s[i] = max(0.0, min(s) - 0.01) if min(s) < t else t / 2
    if s[i] >= t:
        return
    assert best_f1(s, l)[0] >= f1 - 1e-12


def test_pixel_pooling_and_degenerate():
    a, b = np.array([[0.1, 0.7]]), np.array([[0.4, 0.9]])
    ga, gb = np.array([[0, 1]], bool), np.array([[0, 1]], bool)
    flat = np.array([0.1, 0.7, 0.4, 0.9]), [0, 1, 0, 1]
    assert pixel_metrics([a, b], [ga, gb]) == (auroc(*flat), best_f1(*flat)[0])
    assert pixel_metrics([a, b], [None, gb])[0] == auroc(flat[0], [0, 0, 0, 1])
    with pytest.raises(ValueError):
        pixel_metrics([np.zeros((2, 2))], [None])
    with pytest.raises(ValueError):
        pixel_metrics([a], [np.zeros((2, 1), bool)])
    assert image_metrics([0.1, 0.9], [0, 1]) == (1.0, 1.0)


def test_histograms():
    edges, dens = score_histograms({"c": np.full(10, 0.5)})
    assert len(edges) == 65
    assert np.count_nonzero(dens["c"]) == 1 and dens["c"].max() == 64.0
    rng = np.random.default_rng(0)
    _, dens = score_histograms({"u": rng.random(1000), "b": rng.beta(2, 5, 500)})
    for d in dens.values():
        assert abs(d.sum() / 64 - 1.0) <= 1e-9
    with pytest.warns(UserWarning, match="empty"):
        _, dens = score_histograms({"e": [], "x": [0.2]})
    assert list(dens) == ["x"]


def test_score_report_files(tmp_path):
    rng = np.random.default_rng(1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        csv_path, svg_path = score_report(rng.random(100), {"normal": rng.random(50), "anomalous": rng.random(20)},
                                          tmp_path / "rep")
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "bin_lo,bin_hi,train,normal,anomalous" and len(rows) == 65
    svg = svg_path.read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 3 and "href" not in svg


def test_metric_table(tmp_path):
    raw = {("image", "auroc"): 0.9, ("image", "f1"): 0.8, ("pixel", "auroc"): 0.97, ("pixel", "f1"): None}
    filt = {k: 1.0 for k in raw}
    write_metric_table(tmp_path / "m.csv", "Sim", raw, filt)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "level,model,metric,raw,filtered"
    assert lines[4] == "pixel,Sim,f1,N/A,1.000000"
    text = format_metric_table("Sim", raw, filt)
    assert "Filtered Sim" in text and "N/A" in text
