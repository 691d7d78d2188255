"""``fafilter`` command line: synth-data, fit, apply and eval.

Exit codes: 0 success, 2 configuration or parse error, 3 I/O error (missing
or malformed files), 4 the data cannot support fitting (empty harvest).
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._config import ConfigError
from .harvest import InsufficientSamplesError, compute_candidate_threshold
from .io import (
    FORMATS,
    IMAGE_SCORES,
    SUFFIXES,
    TENSOR_FILE,
    DatasetError,
    FormatError,
    ModelFormatError,
    load_anomaly_map,
    load_mask,
    load_model,
    read_image_scores,
    save_anomaly_map,
    save_mask,
    save_model,
    scan_dataset,
)
from .knowledge import DEFECT, FALSE_ALARM, load_knowledge
from .metrics import format_metric_table, image_metrics, pixel_metrics, score_report, write_metric_table
from .pipeline import FalseAlarmFilter, PipelineConfig, load_pipeline_config, override_config, run_pipeline
from .sim import DetectorProfile, load_profile, simulate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4

ADJUSTED_SCORES = "adjusted_scores.csv"
METRICS = "metrics.csv"
SCORE_REPORT = "score_report"


def _pipeline_config(args):
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    return override_config(cfg, args.set or [])


def _load_maps(paths, jobs):
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(load_anomaly_map, paths))


def cmd_synth_data(args):
    profile = load_profile(args.profile) if args.profile else DetectorProfile().validate()
    index = simulate_dataset(
        profile, args.n_train, args.n_normal, args.n_abnormal, args.seed, args.out, args.format
    )
    print(f"wrote {len(index.train_good)} train and {len(index.test)} test maps to {args.out}")
    return EXIT_OK


def cmd_fit(args):
    knowledge = load_knowledge(args.knowledge)
    cfg = _pipeline_config(args)
    index = scan_dataset(args.dataset)
    if not index.train_good:
        raise DatasetError(f"{args.dataset}: train/good contains no anomaly maps")
    maps = _load_maps(index.train_good, args.jobs)
    est = FalseAlarmFilter.from_config(knowledge, cfg, random_state=args.seed).fit(maps)
    y = est.training_set_.y
    clf = est.classifier_
    print(f"tau_c = {est.tau_c_:.6f}")
    print(f"false alarms harvested = {len(est.false_alarms_)}")
    print(f"defect samples (augmented) = {len(est.defects_)}")
    print(f"training set: {int(np.sum(y == DEFECT))} defect, {int(np.sum(y == FALSE_ALARM))} false alarm")
    print(f"sigma = {clf.sigma_:.6f}")
    print(f"support vectors = {len(clf.dual_coef_)}")
    Path(args.model).parent.mkdir(parents=True, exist_ok=True)
    save_model(clf, args.model)
    print(f"model written to {args.model}")
    return EXIT_OK


def _raw_image_scores(index, maps):
    """Sidecar image scores where available, otherwise the map maximum."""
    sidecar = Path(index.root) / IMAGE_SCORES
    known = read_image_scores(sidecar) if sidecar.is_file() else {}
    return [known.get(index.relpath(e.path), float(m.max())) for e, m in zip(index.test, maps)]


def cmd_apply(args):
    cfg = _pipeline_config(args)
    if args.knowledge:
        cfg = override_config(cfg, ["features=" + ",".join(load_knowledge(args.knowledge).features)])
    model = load_model(args.model)
    if model.n_features_in_ != len(cfg.features):
        raise ConfigError(
            f"model expects {model.n_features_in_} features but the config selects "
            f"{len(cfg.features)} ({', '.join(cfg.features)})"
        )
    index = scan_dataset(args.dataset)
    tau_c = cfg.tau_c
    if tau_c is None:
        tau_c = compute_candidate_threshold(_load_maps(index.train_good, args.jobs), cfg.quantile)
    out = Path(args.out)
    suffix = SUFFIXES[args.format]

    def work(pair):
        entry, raw = pair
        scores = load_anomaly_map(entry.path)
        result = run_pipeline(scores, raw, model, cfg, tau_c=tau_c)
        rel = Path(index.relpath(entry.path))
        map_path = out / "maps" / rel.with_suffix(suffix)
        mask_path = out / "masks" / rel.with_suffix(".png")
        map_path.parent.mkdir(parents=True, exist_ok=True)
        mask_path.parent.mkdir(parents=True, exist_ok=True)
        save_anomaly_map(result.filtered_map, map_path, args.format)
        save_mask(result.mask, mask_path)
        return rel.as_posix(), result

    raws = _raw_image_scores(index, _load_maps([e.path for e in index.test], args.jobs))
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(work, zip(index.test, raws)))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / ADJUSTED_SCORES, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "raw", "adjusted", "n_candidates", "fa_area_ratio"])
        for rel, r in sorted(results, key=lambda t: t[0]):
            w.writerow([rel, repr(r.raw_score), repr(r.adjusted_score), r.n_candidates, repr(r.fa_area_ratio)])
    print(f"tau_c = {tau_c:.6f}")
    print(f"filtered {len(results)} test maps into {out}")
    return EXIT_OK


def _read_adjusted(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "raw", "adjusted"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns path,raw,adjusted,...")
        try:
            return {row["path"]: (float(row["raw"]), float(row["adjusted"])) for row in reader}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad score value ({exc})") from None


def _maybe(metric_fn, *xs):
    """Metric pair, or ``(None, None)`` when only one class is present."""
    try:
        return metric_fn(*xs)
    except ValueError as exc:
        if "both classes" not in str(exc):
            raise
        return None, None


def cmd_eval(args):
    index = scan_dataset(args.dataset)
    if not index.test:
        raise DatasetError(f"{args.dataset}: no test maps to evaluate")
    out = Path(args.out)
    adjusted = _read_adjusted(out / ADJUSTED_SCORES)
    raw_maps, filt_maps, gts, labels, raw_scores, adj_scores = [], [], [], [], [], []
    for entry in index.test:
        rel = index.relpath(entry.path)
        if rel not in adjusted:
            raise FormatError(f"{out / ADJUSTED_SCORES}: no row for {rel}")
        scores = load_anomaly_map(entry.path)
        filtered_path = next(
            (p for p in (out / "maps" / Path(rel).with_suffix(s) for s in SUFFIXES.values()) if p.is_file()),
            None,
        )
        if filtered_path is None:
            raise FileNotFoundError(f"no filtered map for {rel} under {out / 'maps'}")
        raw_maps.append(scores)
        filt_maps.append(load_anomaly_map(filtered_path))
        gts.append(load_mask(entry.mask) if entry.is_abnormal else None)
        labels.append(int(entry.is_abnormal))
        raw_scores.append(adjusted[rel][0])
        adj_scores.append(adjusted[rel][1])

    raw, filt = {}, {}
    for table, img, maps in ((raw, raw_scores, raw_maps), (filt, adj_scores, filt_maps)):
        table["image", "auroc"], table["image", "f1"] = _maybe(image_metrics, img, labels)
        table["pixel", "auroc"], table["pixel", "f1"] = _maybe(pixel_metrics, maps, gts)
    print(format_metric_table(args.name, raw, filt))
    print("F1 at the best threshold; pixel metrics pool all test pixels.")
    write_metric_table(out / METRICS, args.name, raw, filt)

    train = [load_anomaly_map(p).ravel() for p in index.train_good]
    neg = [m[~g].ravel() if g is not None else m.ravel() for m, g in zip(raw_maps, gts)]
    pos = [m[g] for m, g in zip(raw_maps, gts) if g is not None]
    score_report(
        np.concatenate(train) if train else np.empty(0),
        {
            "test_normal": np.concatenate(neg),
            "test_anomalous": np.concatenate(pos) if pos else np.empty(0),
        },
        out / SCORE_REPORT,
    )
    print(f"metrics written to {out / METRICS}")
    return EXIT_OK


GLOBAL_DEFAULTS = {"seed": 0, "format": TENSOR_FILE, "jobs": 1}


def _global_flags(parser, suppress):
    # Accepted both before and after the subcommand. The subcommand copies use
    # SUPPRESS so they only override the top-level value when given there.
    d = {k: argparse.SUPPRESS if suppress else v for k, v in GLOBAL_DEFAULTS.items()}
    parser.add_argument("--seed", type=int, default=d["seed"], help="run seed (default 0)")
    parser.add_argument("--format", choices=FORMATS, default=d["format"],
                        help="anomaly map encoding for written maps (default tensor-file)")
    parser.add_argument("--jobs", type=int, default=d["jobs"], help="worker threads (default 1)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(prog="fafilter",
                                     description="Filter object-level false alarms from anomaly maps.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="pipeline configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("synth-data", parents=[common], help="write a simulated benchmark dataset")
    p.add_argument("--profile", help="detector profile file (default: built-in profile)")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=10)
    p.add_argument("--n-normal", type=int, default=10)
    p.add_argument("--n-abnormal", type=int, default=10)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("fit", parents=[common], help="train the false-alarm classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--knowledge", required=True)
    p.add_argument("--model", required=True, help="output model file")
    config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", parents=[common], help="filter the test maps of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--knowledge", help="take the feature list from this knowledge file")
    p.add_argument("--out", required=True)
    config_flags(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", parents=[common], help="compare raw and filtered metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="directory written by apply")
    p.add_argument("--name", default="Detector", help="model name in the table")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except InsufficientSamplesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
