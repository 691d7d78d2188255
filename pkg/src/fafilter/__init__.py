"""Object-level false-alarm filtering for anomaly-detector score maps.

A soft-margin RBF SVM is trained on false alarms harvested from the maps of
anomaly-free images and on defect samples drawn from a declarative knowledge
document; it then shrinks the pixels of regions it judges to be false alarms
and lowers the image score accordingly.
"""

from ._config import ConfigError
from .candidates import Candidate, extract_features, feature_matrix, find_candidates, label_components, threshold_map
from .harvest import InsufficientSamplesError, balance, compute_candidate_threshold, harvest_false_alarms
from .io import (
    DatasetIndex,
    FormatError,
    ImageEntry,
    ModelFormatError,
    load_anomaly_map,
    load_mask,
    load_model,
    save_anomaly_map,
    save_mask,
    save_model,
    scan_dataset,
)
from .knowledge import (
    KnowledgeSpec,
    SampleSet,
    augment,
    dump_knowledge,
    generate_defect_samples,
    load_knowledge,
    parse_knowledge,
)
from .metrics import auroc, best_f1, f1_at_threshold, image_metrics, pixel_metrics, score_report
from .pipeline import (
    FalseAlarmFilter,
    FilteredResult,
    PipelineConfig,
    adjust_image_score,
    parse_pipeline_config,
    regenerate_mask,
    run_pipeline,
    suppress_pixels,
)
from .sim import DetectorProfile, simulate_dataset, simulate_image
from .svm import RBFSVC, rbf_gram, rbf_kernel, smo

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Candidate", "extract_features", "feature_matrix", "find_candidates",
    "label_components", "threshold_map", "InsufficientSamplesError", "balance",
    "compute_candidate_threshold", "harvest_false_alarms", "DatasetIndex", "FormatError",
    "ImageEntry", "ModelFormatError", "load_anomaly_map", "load_mask", "load_model",
    "save_anomaly_map", "save_mask", "save_model", "scan_dataset", "KnowledgeSpec", "SampleSet",
    "augment", "dump_knowledge", "generate_defect_samples", "load_knowledge", "parse_knowledge", "auroc", "best_f1",
    "f1_at_threshold", "image_metrics", "pixel_metrics", "score_report", "FalseAlarmFilter",
    "FilteredResult", "PipelineConfig", "adjust_image_score", "parse_pipeline_config",
    "regenerate_mask", "run_pipeline", "suppress_pixels", "DetectorProfile", "simulate_dataset",
    "simulate_image", "RBFSVC", "rbf_gram", "rbf_kernel", "smo",
]
