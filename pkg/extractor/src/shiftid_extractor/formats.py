"""Writers for the table formats the shift-identification pipeline reads.

Feature matrices go into the "SHID" binary container: magic ``SHID``,
u16 version (=1), u8 dtype code (1=f32, 2=f64), u8 reserved (=0),
u64 rows, u64 cols, then the row-major little-endian payload with no
padding. Softmax outputs go into CSV with a ``p0..p{C-1}`` header row.
"""

import csv
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"SHID"
_HEADER = struct.Struct("<4sHBBQQ")
_F32_CODE = 1


def write_features_shid(path, values: np.ndarray) -> None:
    """Write an N x D float32 matrix as a SHID binary file."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {values.shape}")
    rows, cols = values.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, _F32_CODE, 0, rows, cols))
        fh.write(values.tobytes())


def write_outputs_csv(path, probs: np.ndarray) -> None:
    """Write an N x C probability matrix as CSV with a p0..p{C-1} header."""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ValueError(f"output matrix must be 2-D, got shape {probs.shape}")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"p{i}" for i in range(probs.shape[1])])
        for row in probs:
            writer.writerow([repr(float(v)) for v in row])
