"""Reading and writing anomaly maps, masks, trained models and dataset trees.

Anomaly maps are plain 2-D ``float64`` arrays with every score in ``[0, 1]``;
masks are 2-D ``bool`` arrays. Two map encodings are supported:

``tensor-file``
    NPY v1.0, restricted to 2-D little-endian float32/float64 C-order data.
``png16``
    16-bit grayscale PNG, ``score = pixel / 65535``.

Ground-truth masks are 8-bit grayscale PNGs where ``pixel > 127`` marks an
anomalous pixel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format
from PIL import Image

TENSOR_FILE = "tensor-file"
PNG16 = "png16"
FORMATS = (TENSOR_FILE, PNG16)
SUFFIXES = {TENSOR_FILE: ".npy", PNG16: ".png"}

MODEL_MAGIC = "fafilter-model"
MODEL_VERSION = "v1"

_NPY_DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


class FormatError(ValueError):
    """A file is not a well-formed instance of its declared format."""


class ModelFormatError(FormatError):
    pass


class DatasetError(ValueError):
    """The directory tree does not follow the expected dataset layout."""


def check_anomaly_map(scores, name="anomaly map"):
    """Validate ``scores`` and return it as a 2-D float64 array."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"{name} must be 2-D, got {arr.ndim}-D")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FormatError(f"{name} must have at least one pixel, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{name} contains NaN or infinite scores")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise FormatError(f"{name} scores must lie in [0, 1]")
    return arr


def format_for_path(path):
    suffix = Path(path).suffix.lower()
    for fmt, s in SUFFIXES.items():
        if suffix == s:
            return fmt
    raise FormatError(f"cannot infer map format from suffix {suffix!r}")


# -- tensor file -------------------------------------------------------------


def _read_npy(path):
    with open(path, "rb") as fh:
        try:
            version = npy_format.read_magic(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed header ({exc})") from None
        if version != (1, 0):
            raise FormatError(f"{path}: unsupported NPY version {version}")
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fh)
        except (ValueError, SyntaxError) as exc:
            raise FormatError(f"{path}: malformed header ({exc})") from None
        if fortran_order:
            raise FormatError(f"{path}: Fortran-order arrays are not supported")
        if dtype not in _NPY_DTYPES:
            raise FormatError(f"{path}: unsupported dtype {dtype.str}")
        if len(shape) != 2:
            raise FormatError(f"{path}: expected 2 dimensions, got {len(shape)}")
        count = int(np.prod(shape))
        data = fh.read(count * dtype.itemsize)
        if len(data) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated data")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after array data")
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(np.float64)


def _write_npy(arr, path):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        npy_format.write_array(fh, arr, version=(1, 0), allow_pickle=False)


# -- png ---------------------------------------------------------------------


def _read_png16(path):
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: not a PNG file")
            if im.mode not in ("I;16", "I;16B", "I;16L"):
                raise FormatError(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode}")
            pixels = np.array(im, dtype=np.uint16)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: malformed PNG ({exc})") from None
    if pixels.ndim != 2:
        raise FormatError(f"{path}: expected 2 dimensions, got {pixels.ndim}")
    return pixels.astype(np.float64) / 65535.0


def quantize16(scores):
    """Map scores in [0, 1] to uint16 pixel values, ``round(s * 65535)``."""
    return np.rint(np.asarray(scores, dtype=np.float64) * 65535.0).astype(np.uint16)


def _write_png16(arr, path):
    Image.fromarray(quantize16(arr)).save(path, format="PNG")


def load_anomaly_map(path, format=None):
    """Load a map; ``format`` defaults to the one implied by the suffix."""
    format = format or format_for_path(path)
    if format == TENSOR_FILE:
        arr = _read_npy(path)
    elif format == PNG16:
        arr = _read_png16(path)
    else:
        raise ValueError(f"unknown map format {format!r}; expected one of {FORMATS}")
    return check_anomaly_map(arr, name=str(path))


def save_anomaly_map(scores, path, format=None):
    format = format or format_for_path(path)
    arr = check_anomaly_map(scores)
    if format == TENSOR_FILE:
        _write_npy(arr, path)
    elif format == PNG16:
        _write_png16(arr, path)
    else:
        raise ValueError(f"unknown map format {format!r}; expected one of {FORMATS}")


def load_mask(path):
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1"):
                raise FormatError(f"{path}: expected 8-bit grayscale mask, got mode {im.mode}")
            pixels = np.array(im.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: malformed PNG ({exc})") from None
    return pixels > 127


def save_mask(mask, path):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise FormatError(f"mask must be 2-D, got {mask.ndim}-D")
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


# -- datasets ----------------------------------------------------------------


NORMAL = "normal"
ABNORMAL = "abnormal"


@dataclass(frozen=True)
class ImageEntry:
    path: Path
    label: str
    mask: Path | None = None
    category: str = "good"

    @property
    def is_abnormal(self):
        return self.label == ABNORMAL


@dataclass
class DatasetIndex:
    root: Path
    train_good: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def relpath(self, path):
        return Path(path).relative_to(self.root).as_posix()


def _map_files(directory):
    files = [
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in SUFFIXES.values()
    ]
    return sorted(files, key=lambda p: p.as_posix())


def _find_mask(gt_dir, stem):
    for name in (f"{stem}_mask.png", f"{stem}.png"):
        candidate = gt_dir / name
        if candidate.is_file():
            return candidate
    return None


def scan_dataset(root):
    """Index an MVTec-style tree of anomaly maps.

    ``train/good`` is required. Every ``test/<category>`` other than
    ``good`` is abnormal and needs a mask at
    ``ground_truth/<category>/<stem>_mask.png`` (or ``<stem>.png``).
    """
    root = Path(root)
    train_dir = root / "train" / "good"
    if not train_dir.is_dir():
        raise DatasetError(f"{root}: missing train/good directory")
    index = DatasetIndex(root=root, train_good=_map_files(train_dir))

    test_dir = root / "test"
    if test_dir.is_dir():
        entries = []
        for cat_dir in sorted((p for p in test_dir.iterdir() if p.is_dir()), key=lambda p: p.name):
            for path in _map_files(cat_dir):
                if cat_dir.name == "good":
                    entries.append(ImageEntry(path, NORMAL))
                    continue
                mask = _find_mask(root / "ground_truth" / cat_dir.name, path.stem)
                if mask is None:
                    raise DatasetError(
                        f"{path}: abnormal test map has no ground-truth mask "
                        f"under ground_truth/{cat_dir.name}/"
                    )
                entries.append(ImageEntry(path, ABNORMAL, mask, cat_dir.name))
        index.test = sorted(entries, key=lambda e: e.path.as_posix())
    return index


# -- models ------------------------------------------------------------------


def _f17(x):
    s = format(float(x), ".17g")
    if not any(ch in s for ch in ".eni"):
        s += ".0"
    return s


def dump_model(model):
    """Serialize a fitted :class:`~fafilter.svm.RBFSVC` to text."""
    sv = np.asarray(model.support_vectors_, dtype=np.float64)
    coef = np.asarray(model.dual_coef_, dtype=np.float64)
    mean = np.asarray(model.scale_mean_, dtype=np.float64)
    std = np.asarray(model.scale_std_, dtype=np.float64)
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"kernel rbf sigma={_f17(model.sigma_)} C={_f17(model.C)}",
        f"platt A={_f17(model.platt_A_)} B={_f17(model.platt_B_)}",
        f"scale d={len(mean)}",
    ]
    lines += [f"mean={_f17(m)} std={_f17(s)}" for m, s in zip(mean, std)]
    lines.append(f"sv n={len(coef)}")
    for c, row in zip(coef, sv):
        lines.append(" ".join([f"alpha_y={_f17(c)}", *(_f17(v) for v in row)]))
    lines.append(f"bias={_f17(model.intercept_)}")
    return "\n".join(lines) + "\n"


def _kv(token, key, lineno):
    prefix = key + "="
    if not token.startswith(prefix):
        raise ModelFormatError(f"line {lineno}: expected '{prefix}...', got {token!r}")
    try:
        return float(token[len(prefix):])
    except ValueError:
        raise ModelFormatError(f"line {lineno}: bad number in {token!r}") from None


def parse_model(text):
    from .svm import RBFSVC

    lines = text.splitlines()
    pos = 0

    def take(n_tokens=None, head=None):
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"truncated model file (ended before line {pos + 1})")
        tokens = lines[pos].split()
        pos += 1
        if head is not None and (not tokens or tokens[0] != head):
            raise ModelFormatError(f"line {pos}: expected {head!r} record")
        if n_tokens is not None and len(tokens) != n_tokens:
            raise ModelFormatError(f"line {pos}: expected {n_tokens} fields, got {len(tokens)}")
        return tokens

    magic = take()
    if len(magic) != 2 or magic[0] != MODEL_MAGIC:
        raise ModelFormatError("line 1: not a fafilter model file")
    if magic[1] != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {magic[1]!r} (expected {MODEL_VERSION})")

    t = take(4, "kernel")
    if t[1] != "rbf":
        raise ModelFormatError(f"line {pos}: unsupported kernel {t[1]!r}")
    sigma, C = _kv(t[2], "sigma", pos), _kv(t[3], "C", pos)
    t = take(3, "platt")
    A, B = _kv(t[1], "A", pos), _kv(t[2], "B", pos)
    t = take(2, "scale")
    d = int(_kv(t[1], "d", pos))
    mean, std = [], []
    for _ in range(d):
        t = take(2)
        mean.append(_kv(t[0], "mean", pos))
        std.append(_kv(t[1], "std", pos))
    t = take(2, "sv")
    n = int(_kv(t[1], "n", pos))
    coef, rows = [], []
    for k in range(n):
        t = take()
        if t and t[0].startswith("bias="):
            raise ModelFormatError(f"line {pos}: 'sv n={n}' declared but only {k} support vectors present")
        if len(t) != d + 1:
            raise ModelFormatError(
                f"line {pos}: support vector has {len(t) - 1} features, expected {d}"
            )
        coef.append(_kv(t[0], "alpha_y", pos))
        try:
            rows.append([float(v) for v in t[1:]])
        except ValueError:
            raise ModelFormatError(f"line {pos}: bad feature value") from None
    t = take()
    if len(t) != 1 or not t[0].startswith("bias="):
        raise ModelFormatError(f"line {pos}: expected 'bias=...' after {n} support vectors (sv count mismatch?)")
    bias = _kv(t[0], "bias", pos)
    if any(line.strip() for line in lines[pos:]):
        raise ModelFormatError(f"line {pos + 1}: unexpected content after bias (support-vector count mismatch?)")

    return RBFSVC.from_dual(
        support_vectors=np.array(rows, dtype=np.float64).reshape(n, d),
        dual_coef=np.array(coef, dtype=np.float64),
        intercept=bias,
        sigma=sigma,
        C=C,
        platt=(A, B),
        scale_mean=np.array(mean, dtype=np.float64),
        scale_std=np.array(std, dtype=np.float64),
    )


def save_model(model, path):
    Path(path).write_text(dump_model(model), encoding="utf-8")


def load_model(path):
    return parse_model(Path(path).read_text(encoding="utf-8"))



# -- image score sidecar -----------------------------------------------------

IMAGE_SCORES = "image_scores.csv"


def write_image_scores(path, rows):
    """Write ``path,score,label`` rows, sorted by path."""
    lines = ["path,score,label"]
    for rel, score, label in sorted(rows, key=lambda r: r[0]):
        lines.append(f"{rel},{float(score)!r},{int(label)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_image_scores(path):
    """Map relative map path to its detector image score."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "score"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns path,score[,label]")
        try:
            return {row["path"]: float(row["score"]) for row in reader}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad score value ({exc})") from None
