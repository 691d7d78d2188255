"""Image- and pixel-level AUROC / F1, and score-distribution reports.

F1 is reported at the best threshold found by :func:`best_f1`; pixel metrics
pool every pixel of every test image rather than averaging per image.
"""

from __future__ import annotations

import csv
import math
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

N_BINS = 64


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("both classes must be present")
    return scores, labels


def auroc(scores, labels, exact=False):
    """Mann-Whitney AUROC with ties counted one half.

    With ``exact=True`` the result is a :class:`fractions.Fraction`.
    """
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores, method="average")
    # Mid-ranks are half-integers, so twice the U statistic is an integer.
    two_u = int(round(2.0 * ranks[labels].sum())) - n_pos * (n_pos + 1)
    value = Fraction(two_u, 2 * n_pos * n_neg)
    return value if exact else float(value)


def f1_at_threshold(scores, labels, t):
    """F1 of the prediction ``score >= t``; 0 when nothing is predicted right."""
    scores, labels = _check_binary(scores, labels)
    pred = scores >= t
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def best_f1(scores, labels):
    """Maximum F1 over all thresholds and the smallest threshold attaining it.

    Candidate thresholds are the lowest score and the midpoints between
    consecutive distinct scores.
    """
    scores, labels = _check_binary(scores, labels)
    values = np.unique(scores)
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    tp = len(pos) - np.searchsorted(pos, values, side="left")
    fp = len(neg) - np.searchsorted(neg, values, side="left")
    fn = len(pos) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(tp > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    mids = 0.5 * (values[:-1] + values[1:])
    # Adjacent subnormal values can round their midpoint down onto the lower one.
    mids = np.where(mids > values[:-1], mids, values[1:])
    thresholds = np.concatenate([values[:1], mids])
    best = int(np.argmax(f1))  # first maximum is the smallest threshold
    return float(f1[best]), float(thresholds[best])


def image_metrics(scores, labels):
    """``(auroc, best_f1)`` over one score per image."""
    return auroc(scores, labels), best_f1(scores, labels)[0]


def pixel_metrics(maps, gt_masks):
    """Pooled ``(auroc, best_f1)`` over all pixels.

    ``gt_masks[i]`` may be ``None`` for a normal image (all pixels negative).
    """
    score_parts, label_parts = [], []
    for scores, gt in zip(maps, gt_masks, strict=True):
        scores = np.asarray(scores, dtype=np.float64)
        if gt is None:
            gt = np.zeros(scores.shape, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if gt.shape != scores.shape:
            raise ValueError(f"ground truth {gt.shape} does not match map {scores.shape}")
        score_parts.append(scores.ravel())
        label_parts.append(gt.ravel())
    s = np.concatenate(score_parts)
    l = np.concatenate(label_parts)
    return auroc(s, l), best_f1(s, l)[0]


# -- reports -----------------------------------------------------------------


METRIC_ROWS = (("image", "auroc"), ("image", "f1"), ("pixel", "auroc"), ("pixel", "f1"))


def write_metric_table(path, model, raw, filtered):
    """CSV with columns ``level,model,metric,raw,filtered``.

    ``raw`` and ``filtered`` map ``(level, metric)`` to a float or ``None``
    (written as ``N/A``).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "model", "metric", "raw", "filtered"])
        for key in METRIC_ROWS:
            w.writerow([key[0], model, key[1], _cell(raw.get(key)), _cell(filtered.get(key))])


def _cell(v):
    return "N/A" if v is None else f"{v:.6f}"


def format_metric_table(model, raw, filtered):
    """Plain-text table: one row per model variant, four metric columns."""
    header = f"{'Model':<22}{'Image AUROC':>12}{'Image F1':>10}{'Pixel AUROC':>13}{'Pixel F1':>10}"
    lines = [header, "-" * len(header)]
    for name, values in ((model, raw), (f"Filtered {model}", filtered)):
        cells = [_cell(values.get(k)) for k in METRIC_ROWS]
        lines.append(f"{name:<22}{cells[0]:>12}{cells[1]:>10}{cells[2]:>13}{cells[3]:>10}")
    return "\n".join(lines)


def score_histograms(groups, bins=N_BINS):
    """Density histograms over [0, 1] for each non-empty group."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = {}
    for name, values in groups.items():
        values = np.asarray(values, dtype=np.float64).ravel()
        if len(values) == 0:
            warnings.warn(f"score group {name!r} is empty; omitting it", stacklevel=2)
            continue
        counts, _ = np.histogram(values, bins=edges)
        out[name] = counts / (len(values) * (1.0 / bins))
    return edges, out


_COLORS = ("#1f77b4", "#ff7f0e", "#d62728", "#2ca02c", "#9467bd")


def score_report(train_scores, test_scores_by_class, out_path, bins=N_BINS):
    """Write ``<out>.csv`` densities and an ``<out>.svg`` overlay of the curves."""
    groups = {"train": train_scores, **dict(test_scores_by_class)}
    edges, dens = score_histograms(groups, bins)
    out_path = Path(out_path)
    csv_path = out_path.with_suffix(".csv")
    svg_path = out_path.with_suffix(".svg")
    names = list(dens)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", *names])
        for i in range(bins):
            w.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", *(repr(float(dens[n][i])) for n in names)])
    svg_path.write_text(_density_svg(edges, dens), encoding="utf-8")
    return csv_path, svg_path


def _density_svg(edges, dens, width=640, height=360, pad=40):
    top = max((float(d.max()) for d in dens.values()), default=1.0) or 1.0
    ymax = 10 ** math.ceil(math.log10(top)) if top > 0 else 1.0
    if top < ymax / 2:
        ymax /= 2
    pw, ph = width - 2 * pad, height - 2 * pad
    centers = 0.5 * (edges[:-1] + edges[1:])

    def pt(x, y):
        return f"{pad + x * pw:.2f},{pad + ph - min(y / ymax, 1.0) * ph:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{pad + ph}" x2="{pad + pw}" y2="{pad + ph}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{pad + ph}" stroke="black"/>',
        f'<text x="{pad}" y="{pad + ph + 16}" text-anchor="middle">0</text>',
        f'<text x="{pad + pw}" y="{pad + ph + 16}" text-anchor="middle">1</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{ymax:g}</text>',
        f'<text x="{pad + pw / 2}" y="{height - 6}" text-anchor="middle">prediction score</text>',
    ]
    for k, (name, d) in enumerate(dens.items()):
        color = _COLORS[k % len(_COLORS)]
        points = " ".join(pt(x, y) for x, y in zip(centers, d))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(f'<text x="{pad + pw - 4}" y="{pad + 14 * (k + 1)}" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
