"""Object-level candidate regions on anomaly maps and their feature vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FEATURES = ("area", "width", "height", "aspect", "cx", "cy", "mean_score", "max_score")
LOCATION_FEATURES = ("cx", "cy")

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def check_feature_spec(features):
    """Validate a feature selection and return it as a tuple of names."""
    if isinstance(features, str):
        features = [f.strip() for f in features.split(",")]
    features = tuple(features)
    if not features:
        raise ValueError("feature spec must name at least one feature")
    unknown = [f for f in features if f not in FEATURES]
    if unknown:
        raise ValueError(f"unknown feature(s) {unknown}; choose from {FEATURES}")
    if len(set(features)) != len(features):
        raise ValueError(f"duplicate feature in spec {features}")
    return features


@dataclass(frozen=True, eq=False)
class Candidate:
    """A connected region of above-threshold pixels.

    ``pixels`` is an ``(area, 2)`` int array of ``(row, col)`` coordinates and
    ``bbox`` is ``(min_row, min_col, max_row, max_col)``, inclusive.
    """

    pixels: np.ndarray
    bbox: tuple
    shape: tuple

    @property
    def area(self):
        return len(self.pixels)

    @property
    def rows(self):
        return self.pixels[:, 0]

    @property
    def cols(self):
        return self.pixels[:, 1]

    def to_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.rows, self.cols] = True
        return mask


def threshold_map(scores, tau):
    """Segmentation mask: ``True`` where ``score >= tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau!r}")
    return np.asarray(scores) >= tau


def label_components(mask, connectivity=8):
    """Split the true pixels of ``mask`` into maximal connected components.

    Components are returned sorted by bounding-box origin ``(min_row, min_col)``.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity!r}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got {mask.ndim}-D")
    labels, n = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    if n == 0:
        return []
    # Group pixel coordinates by label in raster order.
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    starts = np.cumsum(counts)[:-1]
    width = mask.shape[1]
    out = []
    for lab in range(1, n + 1):
        idx = order[starts[lab - 1]:starts[lab - 1] + counts[lab]]
        pixels = np.column_stack(np.divmod(idx, width)).astype(np.intp)
        r0, c0 = pixels.min(axis=0)
        r1, c1 = pixels.max(axis=0)
        out.append(Candidate(pixels, (int(r0), int(c0), int(r1), int(c1)), mask.shape))
    out.sort(key=lambda c: (c.bbox[0], c.bbox[1], int(c.pixels[0, 0]), int(c.pixels[0, 1])))
    return out


def find_candidates(scores, tau, connectivity=8, min_area=1):
    """Threshold, label, and drop components smaller than ``min_area``."""
    comps = label_components(threshold_map(scores, tau), connectivity)
    return [c for c in comps if c.area >= min_area]


def extract_features(candidate, scores, features):
    features = check_feature_spec(features)
    scores = np.asarray(scores)
    if scores.shape != tuple(candidate.shape):
        raise ValueError(
            f"candidate comes from a {candidate.shape} grid but the map is {scores.shape}"
        )
    H, W = candidate.shape
    r0, c0, r1, c1 = candidate.bbox
    width = c1 - c0 + 1
    height = r1 - r0 + 1
    values = {
        "area": float(candidate.area),
        "width": float(width),
        "height": float(height),
        "aspect": width / height,
        "cx": (c0 + c1 + 1) / (2.0 * W),
        "cy": (r0 + r1 + 1) / (2.0 * H),
    }
    if "mean_score" in features or "max_score" in features:
        pix = scores[candidate.rows, candidate.cols]
        values["mean_score"] = float(pix.mean())
        values["max_score"] = float(pix.max())
    return np.array([values[f] for f in features], dtype=np.float64)


def feature_matrix(candidates, scores, features):
    """Stack feature vectors of ``candidates`` into an ``(n, d)`` array."""
    features = check_feature_spec(features)
    if not candidates:
        return np.empty((0, len(features)))
    return np.vstack([extract_features(c, scores, features) for c in candidates])
