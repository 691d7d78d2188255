"""Synthetic detector outputs with overlapping normal/defect score distributions.

Each simulated anomaly map has a low-score Beta background. Anomaly-free
images additionally carry "nuisance" blobs, elongated hot regions the
detector fires on although nothing is wrong; abnormal images get defect blobs
that are also the ground truth. Nuisance and defect pixels share the same
kind of hot score distribution, so thresholding alone cannot separate them,
but their geometry differs.

Blobs are axis-aligned ellipses inscribed in a sampled bounding box. The
Beta draws for a blob's pixels are sorted so the hottest values sit at the
centre, which keeps every level set of a blob a single connected core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _config
from ._config import ConfigError
from .io import (
    IMAGE_SCORES,
    SUFFIXES,
    TENSOR_FILE,
    save_anomaly_map,
    save_mask,
    scan_dataset,
    write_image_scores,
)

BLOB_MARGIN = 2
MAX_PLACEMENT_TRIES = 200


@dataclass
class BlobGeometry:
    """Bounding-box size ranges (pixels) and the box allowed for its centre."""

    width: tuple
    height: tuple
    region: tuple = (0.0, 0.0, 1.0, 1.0)

    def aspect_range(self):
        return self.width[0] / self.height[1], self.width[1] / self.height[0]


@dataclass
class DetectorProfile:
    height: int = 128
    width: int = 128
    background_beta: tuple = (2.0, 100.0)
    nuisance_rate: float = 3.0
    nuisance_beta: tuple = (6.0, 3.0)
    nuisance: BlobGeometry = field(
        default_factory=lambda: BlobGeometry((36, 56), (3, 5), (0.0, 0.0, 1.0, 1.0))
    )
    defect_count: int = 1
    defect_beta: tuple = (6.0, 3.0)
    defect: BlobGeometry = field(
        default_factory=lambda: BlobGeometry((18, 30), (18, 30), (0.15, 0.15, 0.85, 0.85))
    )

    def validate(self):
        """Raise :class:`ConfigError` naming the first violated constraint."""
        if self.height < 1 or self.width < 1:
            raise ConfigError("grid dimensions must be positive")
        for name in ("background_beta", "nuisance_beta", "defect_beta"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ConfigError(f"{name} parameters must be positive")
        if self.nuisance_rate < 0:
            raise ConfigError("nuisance rate must be non-negative")
        if self.defect_count < 0:
            raise ConfigError("defect count must be non-negative")
        for name in ("nuisance", "defect"):
            self._check_geometry(name, getattr(self, name))
        if not _disjoint_somewhere(self.nuisance, self.defect):
            raise ConfigError(
                "nuisance and defect geometries overlap in width, height and aspect; "
                "no classifier could separate them"
            )
        return self

    def _check_geometry(self, name, g):
        for axis, (lo, hi), limit in (("width", g.width, self.width), ("height", g.height, self.height)):
            if lo != int(lo) or hi != int(hi) or lo < 1 or lo > hi:
                raise ConfigError(f"[{name}] {axis} must be an integer interval lo..hi with 1 <= lo <= hi")
            if hi > limit:
                raise ConfigError(f"[{name}] {axis} upper bound {hi:g} exceeds the grid {axis} {limit}")
        x0, y0, x1, y1 = g.region
        if not (0 <= x0 <= x1 <= 1 and 0 <= y0 <= y1 <= 1):
            raise ConfigError(f"[{name}] region must be an ordered box inside [0,1]^2")
        # Largest blob must still be placeable with its centre inside the region.
        w, h = g.width[1], g.height[1]
        if _center_range(x0, x1, self.width, w) is None:
            raise ConfigError(f"[{name}] region x-range cannot hold a blob of width {w:g} inside the grid")
        if _center_range(y0, y1, self.height, h) is None:
            raise ConfigError(f"[{name}] region y-range cannot hold a blob of height {h:g} inside the grid")


def _disjoint_somewhere(a, b):
    for ia, ib in ((a.width, b.width), (a.height, b.height), (a.aspect_range(), b.aspect_range())):
        if ia[1] < ib[0] or ib[1] < ia[0]:
            return True
    return False


def _center_range(r0, r1, size, extent):
    lo = max(r0 * size, extent / 2.0)
    hi = min(r1 * size, size - extent / 2.0)
    return (lo, hi) if lo <= hi else None


_PROFILE_SCHEMA = {
    "grid": {"height", "width"},
    "background": {"beta"},
    "nuisance": {"rate", "beta", "width", "height", "region"},
    "defect": {"count", "beta", "width", "height", "region"},
}


def parse_profile(text):
    sections = _config.parse_sections(text, _PROFILE_SCHEMA)
    p = DetectorProfile()
    grid = sections.get("grid", {})
    if "height" in grid:
        p.height = _config.as_int(grid["height"], lo=1)
    if "width" in grid:
        p.width = _config.as_int(grid["width"], lo=1)
    if "beta" in sections.get("background", {}):
        p.background_beta = _config.as_pair(sections["background"]["beta"])
    for name in ("nuisance", "defect"):
        body = sections.get(name, {})
        geom = getattr(p, name)
        if "beta" in body:
            setattr(p, f"{name}_beta", _config.as_pair(body["beta"]))
        if "rate" in body:
            p.nuisance_rate = _config.as_float(body["rate"], lo=0)
        if "count" in body:
            p.defect_count = _config.as_int(body["count"], lo=0)
        for axis in ("width", "height"):
            if axis in body:
                setattr(geom, axis, _config.as_interval(body[axis]))
        if "region" in body:
            geom.region = _config.as_region(body["region"])
    return p.validate()


def dump_profile(p):
    f = _config.fmt

    def geom(g):
        x0, y0, x1, y1 = g.region
        return [
            f"width = {f(g.width[0])}..{f(g.width[1])}",
            f"height = {f(g.height[0])}..{f(g.height[1])}",
            f"region = ({f(x0)},{f(y0)})..({f(x1)},{f(y1)})",
        ]

    lines = [
        "[grid]", f"height = {p.height}", f"width = {p.width}", "",
        "[background]", f"beta = {f(p.background_beta[0])}, {f(p.background_beta[1])}", "",
        "[nuisance]", f"rate = {f(p.nuisance_rate)}",
        f"beta = {f(p.nuisance_beta[0])}, {f(p.nuisance_beta[1])}", *geom(p.nuisance), "",
        "[defect]", f"count = {p.defect_count}",
        f"beta = {f(p.defect_beta[0])}, {f(p.defect_beta[1])}", *geom(p.defect),
    ]
    return "\n".join(lines) + "\n"


def load_profile(path):
    with open(path, encoding="utf-8") as fh:
        return parse_profile(fh.read())


# -- generation --------------------------------------------------------------


def _ellipse(h, w):
    """Inscribed-ellipse mask and normalized radius for an ``h x w`` box."""
    r = (np.arange(h) + 0.5 - h / 2.0) / (h / 2.0)
    c = (np.arange(w) + 0.5 - w / 2.0) / (w / 2.0)
    rad = r[:, None] ** 2 + c[None, :] ** 2
    return rad <= 1.0, rad


def _place(rng, geom, H, W, taken):
    """Sample a blob box that keeps ``BLOB_MARGIN`` pixels from ``taken``."""
    x0, y0, x1, y1 = geom.region
    for _ in range(MAX_PLACEMENT_TRIES):
        w = int(rng.integers(int(geom.width[0]), int(geom.width[1]) + 1))
        h = int(rng.integers(int(geom.height[0]), int(geom.height[1]) + 1))
        xr = _center_range(x0, x1, W, w)
        yr = _center_range(y0, y1, H, h)
        cx = rng.uniform(*xr)
        cy = rng.uniform(*yr)
        c0 = min(max(int(round(cx - w / 2.0)), 0), W - w)
        r0 = min(max(int(round(cy - h / 2.0)), 0), H - h)
        box = (r0, c0, r0 + h - 1, c0 + w - 1)
        if all(
            box[0] > t[2] + BLOB_MARGIN or box[2] < t[0] - BLOB_MARGIN
            or box[1] > t[3] + BLOB_MARGIN or box[3] < t[1] - BLOB_MARGIN
            for t in taken
        ):
            return box
    return None


def _paint(rng, scores, box, beta):
    r0, c0, r1, c1 = box
    inside, rad = _ellipse(r1 - r0 + 1, c1 - c0 + 1)
    values = np.sort(rng.beta(beta[0], beta[1], size=int(inside.sum())))[::-1]
    order = np.argsort(rad[inside], kind="stable")
    blob = np.zeros(inside.shape)
    local = np.zeros(int(inside.sum()))
    local[order] = values
    blob[inside] = local
    window = scores[r0:r1 + 1, c0:c1 + 1]
    np.maximum(window, blob, out=window)
    return inside


@dataclass
class SimulatedImage:
    scores: np.ndarray
    ground_truth: np.ndarray
    image_score: float
    nuisance_boxes: list
    defect_boxes: list

    def __iter__(self):
        return iter((self.scores, self.ground_truth, self.image_score))


def simulate_image(profile, abnormal, seed):
    """Return a :class:`SimulatedImage`; unpacks as ``(map, gt, score)``."""
    profile.validate()
    H, W = profile.height, profile.width
    rng = np.random.default_rng(seed)
    scores = rng.beta(*profile.background_beta, size=(H, W))
    gt = np.zeros((H, W), dtype=bool)
    taken, defects, nuisance = [], [], []

    if abnormal:
        for _ in range(profile.defect_count):
            box = _place(rng, profile.defect, H, W, taken)
            if box is None:
                raise ConfigError("could not place a defect blob without overlap; grid too crowded")
            inside = _paint(rng, scores, box, profile.defect_beta)
            gt[box[0]:box[2] + 1, box[1]:box[3] + 1] |= inside
            taken.append(box)
            defects.append(box)
    for _ in range(int(rng.poisson(profile.nuisance_rate))):
        box = _place(rng, profile.nuisance, H, W, taken)
        if box is None:
            continue
        _paint(rng, scores, box, profile.nuisance_beta)
        taken.append(box)
        nuisance.append(box)
    np.clip(scores, 0.0, 1.0, out=scores)
    return SimulatedImage(scores, gt, float(scores.max()), nuisance, defects)


_SPLITS = {"train": 0, "normal": 1, "abnormal": 2}


def image_seed(seed, split, index):
    """Independent per-image seed derived from the run seed."""
    return np.random.SeedSequence([int(seed), _SPLITS[split], int(index)])


def simulate_dataset(profile, n_train, n_test_normal, n_test_abnormal, seed, root, format=TENSOR_FILE):
    """Write an MVTec-style tree of simulated maps under ``root`` and index it.

    Layout: ``train/good``, ``test/good``, ``test/defect``,
    ``ground_truth/defect/<stem>_mask.png`` and ``image_scores.csv``.
    """
    profile.validate()
    root = Path(root)
    suffix = SUFFIXES[format]
    dirs = {
        "train": root / "train" / "good",
        "normal": root / "test" / "good",
        "abnormal": root / "test" / "defect",
    }
    gt_dir = root / "ground_truth" / "defect"
    for d in (*dirs.values(), gt_dir):
        d.mkdir(parents=True, exist_ok=True)

    rows = []
    for split, count in (("train", n_train), ("normal", n_test_normal), ("abnormal", n_test_abnormal)):
        for i in range(count):
            img = simulate_image(profile, split == "abnormal", image_seed(seed, split, i))
            path = dirs[split] / f"{i:03d}{suffix}"
            save_anomaly_map(img.scores, path, format)
            if split == "abnormal":
                save_mask(img.ground_truth, gt_dir / f"{i:03d}_mask.png")
            rows.append((path.relative_to(root).as_posix(), img.image_score, int(split == "abnormal")))
    write_image_scores(root / IMAGE_SCORES, rows)
    return scan_dataset(root)
