"""Fuzzy prior knowledge about defects and the synthetic samples drawn from it.

A knowledge document describes what a true defect looks like in feature
space, as independent closed intervals per feature plus an optional box for
the normalized location::

    # defects are roughly square, 10-18 px, near the centre
    [defect]
    features = area, aspect, cx, cy
    area = 10..18
    aspect = 0.8..1.25
    region = (0.3,0.3)..(0.7,0.7)
    count = 500

    [augment]
    noise = 0.05        # Gaussian std as a fraction of each interval width
    translate = 0.1     # max shift of cx, cy
    mirror_x = true
    mirror_y = false

``region`` is shorthand for the ``cx``/``cy`` intervals and cannot be combined
with them. ``count`` defaults to 500, augmentation is off unless enabled.
All random draws use NumPy's PCG64 generator seeded with the caller's seed.

:func:`parse_knowledge` raises :class:`~fafilter.ConfigError`, with the line
number where one applies, for

* syntax: malformed or unknown section header, duplicate section, line
  without ``=``, invalid key, key before any section, empty value or list item;
* a missing ``features`` key (this includes the empty document);
* an unknown or repeated feature name, or a constraint on a feature that is
  not listed in ``features``;
* an unknown or duplicate key in either section;
* a malformed or non-finite interval, ``lo > hi``, a negative bound, or a
  location bound above 1;
* a malformed region, corners out of order, corners outside ``[0,1]^2``, or
  a region combined with a ``cx``/``cy`` interval;
* ``count`` that is not an integer >= 1, ``noise``/``translate`` that is not
  a number in ``[0, 0.5]``, or a mirror flag that is not a boolean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _config
from ._config import ConfigError
from .candidates import FEATURES, LOCATION_FEATURES, check_feature_spec

DEFECT = -1
FALSE_ALARM = 1

_DEFECT_KEYS = {"features", "region", "count"}
_AUGMENT_KEYS = {"noise", "translate", "mirror_x", "mirror_y"}


@dataclass
class SampleSet:
    """Feature vectors ``X`` (n, d) with labels ``y`` in {-1 defect, +1 false alarm}."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("SampleSet needs a 2-D X with one label per row")
        if not np.all(np.isin(self.y, (DEFECT, FALSE_ALARM))):
            raise ValueError("labels must be -1 (defect) or +1 (false alarm)")

    def __len__(self):
        return len(self.y)

    @classmethod
    def empty(cls, dim):
        return cls(np.empty((0, dim)), np.empty(0, dtype=np.int64))

    @classmethod
    def concat(cls, *sets):
        return cls(np.vstack([s.X for s in sets]), np.concatenate([s.y for s in sets]))


@dataclass
class KnowledgeSpec:
    features: tuple
    intervals: dict = field(default_factory=dict)
    region: tuple | None = None
    count: int = 500
    noise: float = 0.0
    translate: float = 0.0
    mirror_x: bool = False
    mirror_y: bool = False

    def __post_init__(self):
        self.features = check_feature_spec(self.features)
        self.intervals = {k: (float(lo), float(hi)) for k, (lo, hi) in self.intervals.items()}
        for name, (lo, hi) in self.intervals.items():
            if name not in self.features:
                raise ValueError(f"interval given for unselected feature {name!r}")
            if not lo <= hi:
                raise ValueError(f"interval for {name!r} has lo > hi")
            if lo < 0:
                raise ValueError(f"interval for {name!r} must be non-negative")
            if name in LOCATION_FEATURES and hi > 1:
                raise ValueError(f"interval for {name!r} must lie in [0, 1]")
        if self.region is not None:
            self.region = tuple(float(v) for v in self.region)
            x0, y0, x1, y1 = self.region
            if not (0 <= x0 <= x1 <= 1 and 0 <= y0 <= y1 <= 1):
                raise ValueError("region must be an ordered box inside [0,1]^2")
            both = [f for f in LOCATION_FEATURES if f in self.intervals]
            if both:
                raise ValueError(f"{both} constrained by both an interval and the region")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("count must be a positive integer")
        self.count = int(self.count)
        for name in ("noise", "translate"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5]")
            setattr(self, name, value)
        self.mirror_x = bool(self.mirror_x)
        self.mirror_y = bool(self.mirror_y)

    @property
    def dim(self):
        return len(self.features)

    def interval(self, name):
        if self.region is not None and name in LOCATION_FEATURES:
            x0, y0, x1, y1 = self.region
            return (x0, x1) if name == "cx" else (y0, y1)
        try:
            return self.intervals[name]
        except KeyError:
            raise ValueError(f"feature {name!r} has no interval constraint") from None

    def bounds(self):
        """Per-feature ``(lo, hi)`` arrays in feature order."""
        pairs = [self.interval(f) for f in self.features]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def parse_knowledge(text):
    sections = _config.parse_sections(text, {"defect": None, "augment": _AUGMENT_KEYS})
    defect = sections.get("defect")
    if defect is None or "features" not in defect:
        raise ConfigError("missing required key 'features' in [defect]")
    entry = defect["features"]
    try:
        features = check_feature_spec(_config.as_list(entry))
    except ValueError as exc:
        raise ConfigError(str(exc), entry.line) from None

    intervals = {}
    region = None
    kwargs = {}
    for key, entry in defect.items():
        if key == "features":
            continue
        if key == "region":
            region = _config.as_region(entry)
        elif key == "count":
            kwargs["count"] = _config.as_int(entry, lo=1)
        elif key in FEATURES:
            if key not in features:
                raise ConfigError(f"constraint on feature {key!r} not listed in 'features'", entry.line)
            intervals[key] = _config.as_interval(entry)
            lo, hi = intervals[key]
            if lo < 0 or (key in LOCATION_FEATURES and hi > 1):
                raise ConfigError(f"interval for {key!r} out of range", entry.line)
        else:
            raise ConfigError(f"unknown key or feature name {key!r} in [defect]", entry.line)
    if region is not None:
        for f in LOCATION_FEATURES:
            if f in intervals:
                raise ConfigError(f"{f!r} constrained by both an interval and 'region'", defect[f].line)

    for key, entry in sections.get("augment", {}).items():
        if key in ("noise", "translate"):
            kwargs[key] = _config.as_float(entry, lo=0.0, hi=0.5)
        else:
            kwargs[key] = _config.as_bool(entry)
    return KnowledgeSpec(features, intervals, region, **kwargs)


def dump_knowledge(spec):
    """Canonical text form; ``parse_knowledge(dump_knowledge(s)) == s``."""
    f = _config.fmt
    lines = ["[defect]", "features = " + ", ".join(spec.features)]
    for name in spec.features:
        if name in spec.intervals:
            lo, hi = spec.intervals[name]
            lines.append(f"{name} = {f(lo)}..{f(hi)}")
    if spec.region is not None:
        x0, y0, x1, y1 = spec.region
        lines.append(f"region = ({f(x0)},{f(y0)})..({f(x1)},{f(y1)})")
    lines.append(f"count = {spec.count}")
    lines += [
        "",
        "[augment]",
        f"noise = {f(spec.noise)}",
        f"translate = {f(spec.translate)}",
        f"mirror_x = {str(spec.mirror_x).lower()}",
        f"mirror_y = {str(spec.mirror_y).lower()}",
    ]
    return "\n".join(lines) + "\n"


def load_knowledge(path):
    with open(path, encoding="utf-8") as fh:
        return parse_knowledge(fh.read())


def generate_defect_samples(spec, n=None, seed=0):
    """Draw ``n`` defect vectors uniformly inside the spec's intervals."""
    n = spec.count if n is None else int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, hi = spec.bounds()
    rng = np.random.default_rng(seed)
    X = lo + (hi - lo) * rng.random((n, spec.dim))
    return SampleSet(np.clip(X, lo, hi), np.full(n, DEFECT))


def _location_columns(spec, op):
    cols = [spec.features.index(f) for f in LOCATION_FEATURES if f in spec.features]
    if not cols:
        raise ValueError(f"{op} needs cx or cy in the feature spec")
    return cols


def augment(samples, spec, seed=0):
    """Append one augmented copy of every sample per enabled operation.

    Operations run in the order noise, translate, mirror_x, mirror_y, each on
    the original samples. Every copy is clamped back into the spec's intervals.
    """
    lo, hi = spec.bounds()
    rng = np.random.default_rng(seed)
    X = samples.X
    copies = [X]

    if spec.noise > 0:
        copies.append(X + rng.normal(size=X.shape) * (spec.noise * (hi - lo)))
    if spec.translate > 0:
        cols = _location_columns(spec, "translate")
        moved = X.copy()
        moved[:, cols] += rng.uniform(-spec.translate, spec.translate, size=(len(X), len(cols)))
        copies.append(moved)
    for flag, name in ((spec.mirror_x, "cx"), (spec.mirror_y, "cy")):
        if not flag:
            continue
        if name not in spec.features:
            raise ValueError(f"mirror of {name!r} requested but {name!r} is not a selected feature")
        col = spec.features.index(name)
        flipped = X.copy()
        flipped[:, col] = 1.0 - flipped[:, col]
        copies.append(flipped)

    out = np.vstack([copies[0]] + [np.clip(c, lo, hi) for c in copies[1:]])
    return SampleSet(out, np.tile(samples.y, len(copies)))
