"""Mining false-alarm samples from anomaly maps of anomaly-free images."""

from __future__ import annotations

import numpy as np

from .candidates import check_feature_spec, feature_matrix, find_candidates
from .knowledge import FALSE_ALARM, SampleSet


class InsufficientSamplesError(ValueError):
    """One class of the training set is empty, so no classifier can be fit."""


def compute_candidate_threshold(train_maps, q=0.99):
    """Linear-interpolation ``q``-quantile of all pooled training scores."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {q!r}")
    maps = list(train_maps)
    if not maps:
        raise ValueError("need at least one training map")
    pooled = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
    return float(np.quantile(pooled, q, method="linear"))


def harvest_false_alarms(train_maps, tau_c, features, min_area=4, connectivity=8):
    """Every high-response region of every training map, labelled false alarm.

    A region whose pixels all score exactly 0 carries no response and is
    skipped, so flat-zero maps contribute nothing even when ``tau_c`` is 0.
    """
    features = check_feature_spec(features)
    blocks = []
    for scores in train_maps:
        scores = np.asarray(scores, dtype=np.float64)
        cands = [
            c for c in find_candidates(scores, tau_c, connectivity, min_area)
            if scores[c.rows, c.cols].max() > 0.0
        ]
        if cands:
            blocks.append(feature_matrix(cands, scores, features))
    if not blocks:
        return SampleSet.empty(len(features))
    X = np.vstack(blocks)
    return SampleSet(X, np.full(len(X), FALSE_ALARM))


def balance(defects, false_alarms, seed=0):
    """Downsample the larger class so both have ``min(|D|, |FA|)`` samples.

    The result is shuffled with a seeded generator; no sample is duplicated.
    """
    if len(false_alarms) == 0:
        raise InsufficientSamplesError(
            "no false-alarm samples were harvested; lower the candidate-threshold "
            "quantile or the minimum area"
        )
    if len(defects) == 0:
        raise InsufficientSamplesError(
            "no defect samples; check the knowledge document's count and intervals"
        )
    rng = np.random.default_rng(seed)
    n = min(len(defects), len(false_alarms))

    def pick(s):
        if len(s) == n:
            return s
        idx = np.sort(rng.choice(len(s), size=n, replace=False))
        return SampleSet(s.X[idx], s.y[idx])

    merged = SampleSet.concat(pick(defects), pick(false_alarms))
    order = rng.permutation(len(merged))
    return SampleSet(merged.X[order], merged.y[order])
