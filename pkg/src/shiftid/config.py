"""Run configuration and deterministic seed derivation."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError

DEFAULT_ALPHA = 0.05
DEFAULT_PCA_K = 32
DEFAULT_PERMUTATIONS = 1000
DEFAULT_REF_SIZE = 2000


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by the detection, identification and simulation entry points."""

    alpha: float = DEFAULT_ALPHA
    pca_k: int = DEFAULT_PCA_K
    permutations: int = DEFAULT_PERMUTATIONS
    ref_size: int = DEFAULT_REF_SIZE
    calibrate: bool = True
    seed: int = 0
    output_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.pca_k < 1:
            raise ValidationError(f"pca_k must be >= 1, got {self.pca_k}")
        if self.permutations < 1:
            raise ValidationError(f"permutations must be >= 1, got {self.permutations}")
        if self.ref_size < 1:
            raise ValidationError(f"ref_size must be >= 1, got {self.ref_size}")


def derive_seed(master_seed: int, *path) -> int:
    """Derive a child seed from a master seed and a tuple of labels/indices.

    Children for distinct paths are statistically independent; the mapping is
    stable across processes and platforms.
    """
    key = tuple(_encode(part) for part in path)
    ss = np.random.SeedSequence((int(master_seed),) + key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _encode(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    # Stable string hash; SeedSequence entropy only accepts integers.
    return int.from_bytes(str(part).encode("utf-8"), "little") % (2**63)
