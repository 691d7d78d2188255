"""Post-processing of detector anomaly maps with a trained false-alarm classifier.

For every candidate region found at the candidate threshold ``tau_c`` the
classifier assigns a false-alarm probability ``p_fa``. Pixels of candidates
with ``p_fa > p_cut`` are scaled by ``1 - p_fa * (1 - alpha_min)``, the segmentation mask is
re-thresholded at ``tau``, and the image score is lowered in proportion to the
area share of candidates with ``p_fa >= p_cut``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _config
from ._config import ConfigError
from .candidates import check_feature_spec, feature_matrix, find_candidates, threshold_map
from .harvest import balance, compute_candidate_threshold, harvest_false_alarms
from .io import check_anomaly_map
from .knowledge import augment, generate_defect_samples
from .svm import RBFSVC

DEFAULT_FEATURES = ("area", "aspect", "cx", "cy")


@dataclass
class PipelineConfig:
    tau: float = 0.5
    tau_c: float | None = None
    quantile: float = 0.99
    features: tuple = DEFAULT_FEATURES
    alpha_min: float = 0.05
    p_cut: float = 0.5
    descent: float = 1.0
    min_area: int = 4
    connectivity: int = 8
    C: float = 1.0
    sigma: float | str = "median"
    tol: float = 1e-3
    max_passes: int = 10
    calibrate: bool = True

    def __post_init__(self):
        self.features = check_feature_spec(self.features)
        checks = [
            (0 <= self.tau <= 1, "tau must lie in [0, 1]"),
            (self.tau_c is None or 0 <= self.tau_c <= 1, "tau_c must lie in [0, 1]"),
            (0 <= self.quantile <= 1, "quantile must lie in [0, 1]"),
            (0 <= self.alpha_min < 1, "alpha_min must lie in [0, 1)"),
            (0 < self.p_cut < 1, "p_cut must lie in (0, 1)"),
            (0 <= self.descent <= 1, "descent must lie in [0, 1]"),
            (self.min_area >= 1, "min_area must be at least 1"),
            (self.connectivity in (4, 8), "connectivity must be 4 or 8"),
            (self.C > 0, "C must be positive"),
            (self.sigma == "median" or (not isinstance(self.sigma, str) and self.sigma > 0),
             "sigma must be 'median' or a positive number"),
            (self.tol > 0, "tol must be positive"),
            (self.max_passes >= 1, "max_passes must be at least 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)

    def estimator_params(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


_PIPELINE_KEYS = {
    "tau": float, "tau_c": float, "quantile": float, "features": tuple,
    "alpha_min": float, "p_cut": float, "descent": float,
    "min_area": int, "connectivity": int,
}
_SVM_KEYS = {"C": float, "sigma": float, "tol": float, "max_passes": int, "calibrate": bool}


def _convert(key, entry):
    kind = {**_PIPELINE_KEYS, **_SVM_KEYS}[key]
    if key == "sigma" and entry.value == "median":
        return "median"
    if kind is float:
        return _config.as_float(entry)
    if kind is int:
        return _config.as_int(entry)
    if kind is bool:
        return _config.as_bool(entry)
    return tuple(_config.as_list(entry))


def parse_pipeline_config(text):
    """Read a ``[pipeline]`` / ``[svm]`` document into a :class:`PipelineConfig`."""
    sections = _config.parse_sections(text, {"pipeline": set(_PIPELINE_KEYS), "svm": set(_SVM_KEYS)})
    kwargs = {}
    for body in sections.values():
        for key, entry in body.items():
            kwargs[key] = _convert(key, entry)
    try:
        return PipelineConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def override_config(cfg, assignments):
    """Return a copy of ``cfg`` with ``key=value`` strings applied on top."""
    kwargs = {}
    for text in assignments:
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in {**_PIPELINE_KEYS, **_SVM_KEYS}:
            raise ConfigError(f"bad override {text!r}; expected <key>=<value> with a known key")
        if not value:
            raise ConfigError(f"override {key!r} has an empty value")
        kwargs[key] = _convert(key, _config.Entry(value, None))
    try:
        return replace(cfg, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_pipeline_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_pipeline_config(fh.read())


def dump_pipeline_config(cfg):
    f = _config.fmt
    lines = ["[pipeline]", f"tau = {f(cfg.tau)}"]
    if cfg.tau_c is not None:
        lines.append(f"tau_c = {f(cfg.tau_c)}")
    lines += [
        f"quantile = {f(cfg.quantile)}",
        "features = " + ", ".join(cfg.features),
        f"alpha_min = {f(cfg.alpha_min)}",
        f"p_cut = {f(cfg.p_cut)}",
        f"descent = {f(cfg.descent)}",
        f"min_area = {cfg.min_area}",
        f"connectivity = {cfg.connectivity}",
        "",
        "[svm]",
        f"C = {f(cfg.C)}",
        f"sigma = {cfg.sigma if cfg.sigma == 'median' else f(cfg.sigma)}",
        f"tol = {f(cfg.tol)}",
        f"max_passes = {cfg.max_passes}",
        f"calibrate = {str(cfg.calibrate).lower()}",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class FilteredResult:
    filtered_map: np.ndarray
    mask: np.ndarray
    raw_score: float
    adjusted_score: float
    candidates: list = field(default_factory=list)
    p_fa: np.ndarray = field(default_factory=lambda: np.empty(0))
    fa_area_ratio: float = 0.0

    @property
    def n_candidates(self):
        return len(self.candidates)


def _check_probabilities(p_fa, n):
    p_fa = np.asarray(p_fa, dtype=np.float64).reshape(-1)
    if len(p_fa) != n:
        raise ValueError(f"got {len(p_fa)} probabilities for {n} candidates")
    if np.any(~np.isfinite(p_fa)) or np.any(p_fa < 0) or np.any(p_fa > 1):
        raise ValueError("false-alarm probabilities must lie in [0, 1]")
    return p_fa


def suppress_pixels(scores, candidates, p_fa, alpha_min=0.05):
    """Scale each candidate's pixels by ``1 - p_fa * (1 - alpha_min)``."""
    p_fa = _check_probabilities(p_fa, len(candidates))
    out = np.array(scores, dtype=np.float64, copy=True)
    for cand, p in zip(candidates, p_fa):
        if p == 0.0:
            continue
        out[cand.rows, cand.cols] *= 1.0 - p * (1.0 - alpha_min)
    return out


def false_alarm_area_ratio(candidates, p_fa, p_cut=0.5):
    p_fa = _check_probabilities(p_fa, len(candidates))
    if not candidates:
        return 0.0
    areas = np.array([c.area for c in candidates], dtype=np.float64)
    return float(areas[p_fa >= p_cut].sum() / areas.sum())


def adjust_image_score(raw, candidates, p_fa, p_cut=0.5, descent=1.0):
    """``raw * (1 - descent * r_fa)``, ``r_fa`` the false-alarm area share."""
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"raw image score must lie in [0, 1], got {raw!r}")
    return raw * (1.0 - descent * false_alarm_area_ratio(candidates, p_fa, p_cut))


def regenerate_mask(filtered_map, tau):
    return threshold_map(filtered_map, tau)


def classify_candidates(model, candidates, scores, features):
    if not candidates:
        return np.empty(0)
    X = feature_matrix(candidates, scores, features)
    return model.false_alarm_probability(X)


def run_pipeline(scores, raw_score, model, config, tau_c=None):
    """Filter one anomaly map; ``tau_c`` defaults to ``config.tau_c``."""
    scores = check_anomaly_map(scores)
    tau_c = config.tau_c if tau_c is None else tau_c
    if tau_c is None:
        raise ValueError("candidate threshold tau_c is not set")
    n_feat = getattr(model, "n_features_in_", len(config.features))
    if n_feat != len(config.features):
        raise ValueError(
            f"model expects {n_feat} features but the config selects {len(config.features)}"
        )
    cands = find_candidates(scores, tau_c, config.connectivity, config.min_area)
    p_fa = classify_candidates(model, cands, scores, config.features)
    # Candidates judged to be defects (p_fa <= p_cut) keep their pixels intact.
    filtered = suppress_pixels(scores, cands, np.where(p_fa > config.p_cut, p_fa, 0.0), config.alpha_min)
    ratio = false_alarm_area_ratio(cands, p_fa, config.p_cut)
    adjusted = adjust_image_score(raw_score, cands, p_fa, config.p_cut, config.descent)
    return FilteredResult(
        filtered_map=filtered,
        mask=regenerate_mask(filtered, config.tau),
        raw_score=float(raw_score),
        adjusted_score=float(adjusted),
        candidates=cands,
        p_fa=p_fa,
        fa_area_ratio=ratio,
    )


class FalseAlarmFilter(TransformerMixin, BaseEstimator):
    """Learn detector false alarms from anomaly-free maps and filter new maps.

    ``fit`` takes the anomaly maps of the anomaly-free training images;
    ``transform`` returns filtered maps. Use :meth:`filter` for the full
    per-image result including the adjusted image score.
    """

    def __init__(self, knowledge, tau=0.5, tau_c=None, quantile=0.99, alpha_min=0.05,
                 p_cut=0.5, descent=1.0, min_area=4, connectivity=8, C=1.0,
                 sigma="median", tol=1e-3, max_passes=10, calibrate=True, random_state=0):
        self.knowledge = knowledge
        self.tau = tau
        self.tau_c = tau_c
        self.quantile = quantile
        self.alpha_min = alpha_min
        self.p_cut = p_cut
        self.descent = descent
        self.min_area = min_area
        self.connectivity = connectivity
        self.C = C
        self.sigma = sigma
        self.tol = tol
        self.max_passes = max_passes
        self.calibrate = calibrate
        self.random_state = random_state

    @classmethod
    def from_config(cls, knowledge, config, random_state=0):
        params = config.estimator_params()
        params.pop("features")
        return cls(knowledge, random_state=random_state, **params)

    @property
    def config(self):
        return PipelineConfig(
            features=self.knowledge.features,
            **{k: v for k, v in self.get_params().items() if k not in ("knowledge", "random_state")},
        )

    def fit(self, X, y=None):
        maps = [check_anomaly_map(m) for m in X]
        if not maps:
            raise ValueError("need at least one anomaly-free training map")
        cfg = self.config
        seeds = np.random.SeedSequence(self.random_state).generate_state(4)
        self.tau_c_ = cfg.tau_c if cfg.tau_c is not None else compute_candidate_threshold(maps, cfg.quantile)
        self.false_alarms_ = harvest_false_alarms(
            maps, self.tau_c_, cfg.features, cfg.min_area, cfg.connectivity
        )
        defects = generate_defect_samples(self.knowledge, seed=int(seeds[0]))
        self.defects_ = augment(defects, self.knowledge, seed=int(seeds[1]))
        self.training_set_ = balance(self.defects_, self.false_alarms_, seed=int(seeds[2]))
        self.classifier_ = RBFSVC(
            C=cfg.C, sigma=cfg.sigma, tol=cfg.tol, max_passes=cfg.max_passes,
            calibrate=cfg.calibrate, random_state=int(seeds[3]),
        ).fit(self.training_set_.X, self.training_set_.y)
        return self

    def filter(self, scores, raw_score=None):
        check_is_fitted(self, "classifier_")
        scores = check_anomaly_map(scores)
        raw = float(scores.max()) if raw_score is None else raw_score
        return run_pipeline(scores, raw, self.classifier_, self.config, tau_c=self.tau_c_)

    def transform(self, X):
        return [self.filter(m).filtered_map for m in X]
