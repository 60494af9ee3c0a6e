"""Shift detectors: output-based BBSD, feature-based MMD, and the combined Duo.

BBSD runs one two-sample K-S test per softmax column. The MMD detector
projects embeddings onto the top principal components fitted on the
reference set, sets the RBF bandwidth by the median heuristic on the pooled
projections, and runs a grouped permutation test. Duo combines all C+1
p-values with a single Bonferroni correction.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import RunConfig, derive_seed
from .data import DatasetBundle, FeatureTable, OutputTable
from .errors import DimensionMismatch
from .stats import (
    PcaProjector,
    RbfKernelParams,
    TestResult,
    bonferroni,
    ks_two_sample,
    median_heuristic_bandwidth,
    pca_fit,
    pca_project,
    permutation_test,
)

SHIFT = "shift"
NO_SHIFT = "no_shift"


def _decision(reject: bool) -> str:
    return SHIFT if reject else NO_SHIFT


@dataclass(frozen=True)
class DetectionOutcome:
    """All stage-1 p-values and the three detector decisions."""

    bbsd_p_values: np.ndarray
    mmd_p_value: float
    combined_decision: str
    bbsd_decision: str
    mmd_decision: str
    alpha: float


def combine_detections(bbsd_p_values, mmd_p_value: float, alpha: float) -> DetectionOutcome:
    """Assemble a DetectionOutcome; Bonferroni over the C+1 raw p-values."""
    bbsd_p_values = np.asarray(bbsd_p_values, dtype=np.float64)
    all_p = np.append(bbsd_p_values, mmd_p_value)
    return DetectionOutcome(
        bbsd_p_values=bbsd_p_values,
        mmd_p_value=float(mmd_p_value),
        combined_decision=_decision(bonferroni(all_p, alpha).reject),
        bbsd_decision=_decision(bonferroni(bbsd_p_values, alpha).reject),
        mmd_decision=_decision(mmd_p_value <= alpha),
        alpha=alpha,
    )


def bbsd(ref_outputs: OutputTable, test_outputs: OutputTable,
         alpha: float) -> Tuple[np.ndarray, str]:
    """Per-class K-S tests on softmax columns, Bonferroni-combined.

    All C tests are kept even for binary tasks with complementary columns.
    """
    if ref_outputs.num_classes != test_outputs.num_classes:
        raise DimensionMismatch(
            f"output tables have {ref_outputs.num_classes} vs "
            f"{test_outputs.num_classes} classes"
        )
    p_values = np.array([
        ks_two_sample(ref_outputs.probs[:, i], test_outputs.probs[:, i]).p_value
        for i in range(ref_outputs.num_classes)
    ])
    return p_values, _decision(bonferroni(p_values, alpha).reject)


def mmd_pipeline(
    ref_features: FeatureTable,
    test_features: FeatureTable,
    k: int,
    num_permutations: int,
    seed: int,
    projector: Optional[PcaProjector] = None,
    kernel: Optional[RbfKernelParams] = None,
) -> Tuple[TestResult, PcaProjector, RbfKernelParams]:
    """PCA -> median-heuristic RBF -> permutation test.

    The projector is fitted on the reference side only unless one is passed
    in; the bandwidth is computed once on the pooled projections unless given.
    Returns the instruments so a later stage can reuse them.

    Fitting the projector on one side has a sharp edge: when the feature
    dimension exceeds ``k`` and the spectrum near rank ``k`` is flat, the
    chosen axes overfit reference sampling noise, so the two sides really
    do differ after projection and no-shift data gets rejected. Encoder
    embeddings with a decaying spectrum are fine; near-isotropic features
    should use ``k`` at least their dimension.
    """
    if projector is None:
        projector = pca_fit(ref_features, k)
    ref_proj = pca_project(projector, ref_features)
    test_proj = pca_project(projector, test_features)
    if kernel is None:
        pooled = FeatureTable(np.vstack([ref_proj.values, test_proj.values]))
        kernel = median_heuristic_bandwidth(pooled)
    result = permutation_test(ref_proj, test_proj, kernel, num_permutations, seed)
    return result, projector, kernel


def mmd_detector(
    ref_features: FeatureTable,
    test_features: FeatureTable,
    k: int = 32,
    num_permutations: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> Tuple[float, str]:
    """Feature-based detector; decision is p <= alpha."""
    result, _, _ = mmd_pipeline(ref_features, test_features, k, num_permutations, seed)
    return result.p_value, _decision(result.p_value <= alpha)


def duo_detect(ref: DatasetBundle, test: DatasetBundle,
               config: RunConfig = RunConfig()) -> DetectionOutcome:
    """Run BBSD and the MMD detector independently and Bonferroni-combine.

    The MMD permutation seed is derived from ``config.seed`` under the
    "detect" label, matching the stage-1 seed of the identification pipeline.
    """
    p_values, _ = bbsd(ref.outputs, test.outputs, config.alpha)
    result, _, _ = mmd_pipeline(
        ref.features,
        test.features,
        config.pca_k,
        config.permutations,
        derive_seed(config.seed, "detect"),
    )
    return combine_detections(p_values, result.p_value, config.alpha)
