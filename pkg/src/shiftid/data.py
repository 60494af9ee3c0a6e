"""Core numeric containers, dataset bundles, validation, and file I/O.

Two on-disk formats are supported and auto-detected on load:

* CSV, UTF-8 with a header row. Feature files use columns ``f0..f{D-1}``,
  output files ``p0..p{C-1}``, label files a single ``label`` column and
  group files a single ``group`` column.
* A binary array format ("SHID"): magic ``SHID``, u16 version (=1), u8 dtype
  code (1=f32, 2=f64), u8 reserved (=0), u64 rows, u64 cols, then the
  row-major little-endian payload with no padding.
"""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyInput, ParseError, ValidationError

ROW_SUM_TOL = 1e-5
_SHID_MAGIC = b"SHID"
_SHID_HEADER = struct.Struct("<4sHBBQQ")
_SHID_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureTable:
    """N x D matrix of embeddings plus optional per-sample group membership."""

    values: np.ndarray
    group_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {values.shape}")
        n, d = values.shape
        if n < 2 or d < 1:
            raise ValidationError(f"features need N >= 2 and D >= 1, got {n} x {d}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("features contain NaN or Inf entries")
        object.__setattr__(self, "values", _freeze(values))
        if self.group_ids is not None:
            gids = np.asarray(self.group_ids, dtype=np.int64)
            if gids.shape != (n,):
                raise DimensionMismatch(
                    f"group_ids has length {gids.shape}, expected ({n},)"
                )
            object.__setattr__(self, "group_ids", _freeze(gids))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def effective_group_ids(self) -> np.ndarray:
        """Group IDs, with every sample its own group when none were given."""
        if self.group_ids is not None:
            return self.group_ids
        return np.arange(self.n, dtype=np.int64)


@dataclass(frozen=True)
class OutputTable:
    """N x C matrix of softmax probabilities, renormalized to exact row sums."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValidationError(f"outputs must be 2-D, got shape {probs.shape}")
        n, c = probs.shape
        if c < 2:
            raise ValidationError(f"outputs need C >= 2 columns, got {c}")
        if n < 1:
            raise ValidationError("outputs table is empty")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("outputs contain NaN or Inf entries")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValidationError("output probabilities must lie in [0, 1]")
        sums = probs.sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValidationError(
                f"output row {i} sums to {sums[i]:.7f}, outside 1 +/- {ROW_SUM_TOL}"
            )
        probs = probs / sums[:, None]
        # Fold the remaining rounding residual into each row's largest entry
        # so every row sums to exactly 1.0. This makes construction
        # idempotent, which is what keeps save/load round trips bit-exact.
        residual = 1.0 - probs.sum(axis=1)
        probs[np.arange(n), np.argmax(probs, axis=1)] += residual
        object.__setattr__(self, "probs", _freeze(probs))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Per-sample integer class labels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise ValidationError("labels must be a non-empty 1-D vector")
        if not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise ValidationError("labels must be integers")
            labels = as_int
        labels = labels.astype(np.int64)
        if np.any(labels < 0):
            raise ValidationError("labels must be non-negative")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class LabelDistribution:
    """A point on the probability simplex over C classes."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] < 1:
            raise ValidationError("distribution must be a non-empty 1-D vector")
        if np.any(p < 0.0):
            raise ValidationError("distribution entries must be >= 0")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(f"distribution sums to {p.sum():.12f}, not 1")
        object.__setattr__(self, "p", _freeze(p))

    @property
    def num_classes(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class DatasetBundle:
    """Features, outputs, and (for reference sets) labels of one dataset."""

    features: FeatureTable
    outputs: OutputTable
    labels: Optional[LabelVector] = None
    name: str = ""

    def __post_init__(self):
        if self.features.n != self.outputs.n:
            raise DimensionMismatch(
                f"features have {self.features.n} rows, outputs {self.outputs.n}"
            )
        if self.labels is not None:
            if self.labels.n != self.features.n:
                raise DimensionMismatch(
                    f"labels have {self.labels.n} rows, features {self.features.n}"
                )
            if int(self.labels.labels.max()) >= self.outputs.num_classes:
                raise ValidationError(
                    "labels reference a class index >= number of output columns"
                )

    @property
    def n(self) -> int:
        return self.features.n


def take_rows(bundle: DatasetBundle, indices, name: str = "") -> DatasetBundle:
    """Bundle built from the given rows of another bundle.

    Group IDs are dropped: resampled rows no longer form coherent groups.
    """
    indices = np.asarray(indices, dtype=np.int64)
    features = FeatureTable(bundle.features.values[indices])
    outputs = OutputTable(bundle.outputs.probs[indices])
    labels = None
    if bundle.labels is not None:
        labels = LabelVector(bundle.labels.labels[indices])
    return DatasetBundle(features=features, outputs=outputs, labels=labels,
                         name=name or bundle.name)


def empirical_prevalence(labels, num_classes: int) -> LabelDistribution:
    """Per-class empirical proportions of a label vector."""
    arr = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    if arr.size == 0:
        raise EmptyInput("cannot compute prevalence of an empty label vector")
    arr = arr.astype(np.int64, copy=False)
    if arr.max() >= num_classes:
        raise ValidationError(
            f"label {arr.max()} out of range for {num_classes} classes"
        )
    counts = np.bincount(arr, minlength=num_classes).astype(np.float64)
    return LabelDistribution(counts / counts.sum())


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _is_shid(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == _SHID_MAGIC


def read_matrix(path) -> np.ndarray:
    """Read a numeric matrix from a CSV or SHID file (auto-detected)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    if _is_shid(path):
        return _read_shid(path)
    return _read_csv_matrix(path, prefix=None)


def _read_shid(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_SHID_HEADER.size)
        if len(header) != _SHID_HEADER.size:
            raise ParseError(f"{path}: truncated SHID header")
        magic, version, dtype_code, reserved, rows, cols = _SHID_HEADER.unpack(header)
        if magic != _SHID_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise ParseError(f"{path}: unsupported SHID version {version}")
        if dtype_code not in _SHID_DTYPES:
            raise ParseError(f"{path}: unknown dtype code {dtype_code}")
        if reserved != 0:
            raise ParseError(f"{path}: reserved byte must be 0, got {reserved}")
        dtype = _SHID_DTYPES[dtype_code]
        payload = fh.read()
    expected = rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(np.float64)


def write_shid(path, values: np.ndarray, dtype: str = "f64") -> None:
    """Write a matrix in the SHID binary format (dtype 'f32' or 'f64')."""
    values = np.atleast_2d(np.asarray(values))
    code = {"f32": 1, "f64": 2}.get(dtype)
    if code is None:
        raise ValueError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    np_dtype = _SHID_DTYPES[code]
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_SHID_HEADER.pack(_SHID_MAGIC, 1, code, 0, rows, cols))
        fh.write(np.ascontiguousarray(values, dtype=np_dtype).tobytes())


def _read_csv_matrix(path: Path, prefix: Optional[str]) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(f"{path}: not a readable CSV file: {exc}") from None
        if prefix is not None:
            expected = [f"{prefix}{i}" for i in range(len(header))]
            if header != expected:
                raise ParseError(
                    f"{path}: header {header[:4]}... does not match {prefix}0..{prefix}{len(header) - 1}"
                )
        rows = []
        width = len(header)
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != width:
                    raise ParseError(
                        f"{path}:{lineno}: expected {width} fields, got {len(row)}"
                    )
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(f"{path}: not a readable CSV file: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _read_table(path, prefix: str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    if _is_shid(path):
        return _read_shid(path)
    return _read_csv_matrix(path, prefix=prefix)


def _read_int_column(path, column: str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    if _is_shid(path):
        mat = _read_shid(path)
        values = mat.ravel()
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError(f"{path}: empty file") from None
            except (csv.Error, UnicodeDecodeError) as exc:
                raise ParseError(f"{path}: not a readable CSV file: {exc}") from None
            if header != [column]:
                raise ParseError(f"{path}: expected single column {column!r}, got {header}")
            try:
                values = np.asarray(
                    [int(row[0]) for row in reader if row], dtype=np.int64
                )
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}") from None
            except (csv.Error, UnicodeDecodeError) as exc:
                raise ParseError(f"{path}: not a readable CSV file: {exc}") from None
    if values.size == 0:
        raise ParseError(f"{path}: no data rows")
    as_int = values.astype(np.int64)
    if not np.array_equal(as_int, values):
        raise ParseError(f"{path}: column {column!r} must hold integers")
    return as_int


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_features_csv(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    header = [f"f{i}" for i in range(values.shape[1])]
    _write_csv(path, header, ([f"{v:.17g}" for v in row] for row in values))


def write_outputs_csv(path, probs: np.ndarray) -> None:
    probs = np.asarray(probs)
    header = [f"p{i}" for i in range(probs.shape[1])]
    _write_csv(path, header, ([f"{v:.17g}" for v in row] for row in probs))


def write_labels_csv(path, labels: np.ndarray) -> None:
    _write_csv(path, ["label"], ([int(v)] for v in np.asarray(labels)))


def write_groups_csv(path, group_ids: np.ndarray) -> None:
    _write_csv(path, ["group"], ([int(v)] for v in np.asarray(group_ids)))


def load_bundle(
    features_path,
    outputs_path,
    labels_path=None,
    groups_path=None,
    name: str = "",
) -> DatasetBundle:
    """Load and validate a dataset bundle from disk."""
    feat_values = _read_table(features_path, prefix="f")
    probs = _read_table(outputs_path, prefix="p")
    group_ids = _read_int_column(groups_path, "group") if groups_path else None
    if group_ids is not None and group_ids.shape[0] != feat_values.shape[0]:
        raise DimensionMismatch(
            f"groups have {group_ids.shape[0]} rows, features {feat_values.shape[0]}"
        )
    features = FeatureTable(feat_values, group_ids=group_ids)
    outputs = OutputTable(probs)
    labels = None
    if labels_path:
        labels = LabelVector(_read_int_column(labels_path, "label"))
    return DatasetBundle(features=features, outputs=outputs, labels=labels, name=name)


def save_bundle(
    directory,
    bundle: DatasetBundle,
    fmt: str = "csv",
    stem: str = "data",
) -> dict:
    """Write a bundle's tables under ``directory``; returns the path map.

    ``fmt`` selects the feature/output container: 'csv' or 'shid'. Labels and
    groups are always CSV.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    if fmt == "csv":
        paths["features"] = directory / f"{stem}_features.csv"
        write_features_csv(paths["features"], bundle.features.values)
        paths["outputs"] = directory / f"{stem}_outputs.csv"
        write_outputs_csv(paths["outputs"], bundle.outputs.probs)
    elif fmt == "shid":
        paths["features"] = directory / f"{stem}_features.shid"
        write_shid(paths["features"], bundle.features.values, dtype="f64")
        paths["outputs"] = directory / f"{stem}_outputs.shid"
        write_shid(paths["outputs"], bundle.outputs.probs, dtype="f64")
    else:
        raise ValueError(f"fmt must be 'csv' or 'shid', got {fmt!r}")
    if bundle.labels is not None:
        paths["labels"] = directory / f"{stem}_labels.csv"
        write_labels_csv(paths["labels"], bundle.labels.labels)
    if bundle.features.group_ids is not None:
        paths["groups"] = directory / f"{stem}_groups.csv"
        write_groups_csv(paths["groups"], bundle.features.group_ids)
    return {k: str(v) for k, v in paths.items()}
