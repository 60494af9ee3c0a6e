"""Folder-to-table extraction: decode, preprocess, embed, write, manifest.

The unit of work is an :class:`ExtractJob`. Running one produces

* ``{prefix}_features.shid`` - one float32 embedding row per image,
* ``{prefix}_outputs.csv`` - softmax rows, only when a task model is given,
* ``{prefix}_manifest.json`` - row order, preprocessing constants,
  decode failures, and sha256 checksums of the data files.

Rows follow the sorted file-name order recorded in the manifest, so the
output is independent of directory enumeration order and batch size.
Images that fail to decode are skipped and listed in the manifest; the
job only aborts when more than one percent of them fail.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .encoders import build_encoder
from .errors import EmptyImageDir, InvalidJob, TooManyDecodeFailures

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}

RESIZE_SHORTER_SIDE = 256
CROP_SIZE = 224
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)

MAX_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class ExtractJob:
    """One extraction request: a folder, an encoder id, and output paths."""

    image_dir: Path
    encoder_id: str
    output_prefix: Path
    task_model_path: Optional[Path] = None
    batch_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "image_dir", Path(self.image_dir))
        object.__setattr__(self, "output_prefix", Path(self.output_prefix))
        if self.task_model_path is not None:
            object.__setattr__(self, "task_model_path", Path(self.task_model_path))
        if self.batch_size < 1:
            raise InvalidJob(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.image_dir.is_dir():
            raise InvalidJob(f"image_dir is not a directory: {self.image_dir}")


def preprocess(image: Image.Image) -> np.ndarray:
    """Pinned deterministic preprocessing: resize, crop, scale, normalize.

    Returns a (3, 224, 224) float32 array. The constants live in the
    manifest of every job so downstream readers can reproduce them.
    """
    image = image.convert("RGB")
    w, h = image.size
    scale = RESIZE_SHORTER_SIDE / min(w, h)
    new_size = (max(1, round(w * scale)), max(1, round(h * scale)))
    image = image.resize(new_size, Image.BILINEAR)
    w, h = image.size
    left = (w - CROP_SIZE) // 2
    top = (h - CROP_SIZE) // 2
    image = image.crop((left, top, left + CROP_SIZE, top + CROP_SIZE))
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(CHANNEL_MEAN, dtype=np.float32)) / np.asarray(
        CHANNEL_STD, dtype=np.float32
    )
    return arr.transpose(2, 0, 1)


def _preprocessing_record() -> dict:
    return {
        "resize_shorter_side": RESIZE_SHORTER_SIDE,
        "interpolation": "bilinear",
        "center_crop": CROP_SIZE,
        "channel_order": "RGB",
        "scale": "1/255",
        "mean": list(CHANNEL_MEAN),
        "std": list(CHANNEL_STD),
    }


def _list_images(image_dir: Path):
    names = sorted(
        p.name
        for p in image_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not names:
        raise EmptyImageDir(f"no image files found under {image_dir}")
    return names


def _decode_all(image_dir: Path, names):
    """Decode every listed image; returns (kept names, arrays, failures)."""
    kept = []
    arrays = []
    failures = []
    for name in names:
        try:
            with Image.open(image_dir / name) as im:
                arrays.append(preprocess(im))
        except (OSError, ValueError) as exc:
            failures.append({"file": name, "error": str(exc)})
            continue
        kept.append(name)
    if len(failures) > MAX_FAILURE_FRACTION * len(names):
        raise TooManyDecodeFailures(
            f"{len(failures)} of {len(names)} images failed to decode: "
            + ", ".join(f["file"] for f in failures)
        )
    return kept, arrays, failures


def _run_batched(model: torch.nn.Module, arrays, batch_size: int) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for start in range(0, len(arrays), batch_size):
            batch = torch.from_numpy(np.stack(arrays[start:start + batch_size]))
            chunks.append(model(batch).to(torch.float32).numpy())
    return np.concatenate(chunks, axis=0)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def extract(job: ExtractJob) -> dict:
    """Run one job; returns the path map {features, outputs?, manifest}."""
    from .formats import write_features_shid, write_outputs_csv

    names = _list_images(job.image_dir)
    kept, arrays, failures = _decode_all(job.image_dir, names)
    if not kept:
        raise EmptyImageDir(f"no decodable images under {job.image_dir}")
    logger.info("decoded %d/%d images from %s", len(kept), len(names),
                job.image_dir)

    encoder, dim = build_encoder(job.encoder_id)
    features = _run_batched(encoder, arrays, job.batch_size)
    if features.shape != (len(kept), dim):
        raise RuntimeError(
            f"encoder {job.encoder_id!r} produced shape {features.shape}, "
            f"expected {(len(kept), dim)}"
        )

    probs = None
    if job.task_model_path is not None:
        try:
            task_model = torch.jit.load(str(job.task_model_path))
        except (OSError, RuntimeError, ValueError) as exc:
            raise InvalidJob(
                f"could not load task model {job.task_model_path}: {exc}"
            ) from exc
        task_model.eval()
        try:
            logits = _run_batched(task_model, arrays, job.batch_size)
        except RuntimeError as exc:
            raise InvalidJob(
                "task model rejected a preprocessed image batch of shape "
                f"(N, 3, {CROP_SIZE}, {CROP_SIZE}); it must map that batch "
                f"to (N, num_classes) logits: {exc}"
            ) from exc
        if logits.ndim != 2 or logits.shape[0] != len(kept):
            raise InvalidJob(
                f"task model returned shape {logits.shape}, expected "
                f"({len(kept)}, num_classes)"
            )
        probs = torch.softmax(torch.from_numpy(logits), dim=1).numpy()

    job.output_prefix.parent.mkdir(parents=True, exist_ok=True)
    prefix = str(job.output_prefix)
    paths = {"features": Path(prefix + "_features.shid")}
    write_features_shid(paths["features"], features)
    if probs is not None:
        paths["outputs"] = Path(prefix + "_outputs.csv")
        write_outputs_csv(paths["outputs"], probs)

    manifest = {
        "version": 1,
        "encoder_id": job.encoder_id,
        "feature_dim": dim,
        "image_dir": str(job.image_dir),
        "batch_size": job.batch_size,
        "files": kept,
        "failed": failures,
        "num_rows": len(kept),
        "preprocessing": _preprocessing_record(),
        "task_model": str(job.task_model_path) if job.task_model_path else None,
        "num_classes": int(probs.shape[1]) if probs is not None else None,
        "checksums": {
            "features": _sha256(paths["features"]),
            "outputs": _sha256(paths["outputs"]) if probs is not None else None,
        },
    }
    paths["manifest"] = Path(prefix + "_manifest.json")
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("wrote %d rows x %d dims to %s", len(kept), dim,
                paths["features"])
    return paths
