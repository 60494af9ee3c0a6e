"""Two-stage shift identification: detect, then attribute the root cause.

Stage 1 is the Duo detector. When it fires, stage 2 estimates the test-set
prevalence from model outputs, resamples the reference set to match it, and
re-tests. A feature shift that disappears after prevalence adjustment is
attributed to prevalence; a persisting one means covariate shift, in which
case an output-level re-test decides whether prevalence shift is also
present (mixed) or not (covariate only).
"""

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import RunConfig, derive_seed
from .data import DatasetBundle, empirical_prevalence, take_rows
from .detectors import NO_SHIFT, SHIFT, bbsd, combine_detections, mmd_pipeline, DetectionOutcome
from .errors import DegenerateLabels, MissingLabels, ZeroReferencePrior
from .prevalence import (
    PrevalenceEstimate,
    apply_temperature,
    calibrate_temperature,
    estimate_prevalence,
    resample_reference,
)

REPORT_VERSION = 1

VERDICT_NO_SHIFT = "no_shift"
VERDICT_PREVALENCE = "prevalence"
VERDICT_COVARIATE = "covariate"
VERDICT_MIXED = "mixed"

FLAG_ESTIMATION_FAILED = "prevalence_estimation_failed"

_STAGE_NAMES = ("detect", "resample", "b5", "b6")


@dataclass(frozen=True)
class ShiftReport:
    """Everything the pipeline measured, decided, and was configured with."""

    detection: DetectionOutcome
    verdict: str
    prevalence_estimate: Optional[PrevalenceEstimate]
    post_adjust_mmd_p: Optional[float]
    post_adjust_bbsd_p_values: Optional[np.ndarray]
    flags: Tuple[str, ...]
    seeds_and_config: dict


def _provenance(config: RunConfig, seeds: dict) -> dict:
    return {
        "master_seed": config.seed,
        "child_seeds": dict(seeds),
        "alpha": config.alpha,
        "pca_k": config.pca_k,
        "permutations": config.permutations,
        "ref_size": config.ref_size,
        "calibrate": config.calibrate,
    }


def identify_shift(ref: DatasetBundle, test: DatasetBundle,
                   config: RunConfig = RunConfig()) -> ShiftReport:
    """Run the full two-stage pipeline and return a ShiftReport.

    The stage-2 feature re-test reuses the stage-1 PCA projector and
    bandwidth: the measurement instrument is held fixed across stages.
    """
    if ref.labels is None:
        raise MissingLabels("identification requires a labeled reference bundle")
    seeds = {name: derive_seed(config.seed, name) for name in _STAGE_NAMES}
    provenance = _provenance(config, seeds)

    # Stage 1: Duo detection.
    bbsd_ps, _ = bbsd(ref.outputs, test.outputs, config.alpha)
    mmd_result, projector, kernel = mmd_pipeline(
        ref.features, test.features, config.pca_k, config.permutations,
        seeds["detect"],
    )
    detection = combine_detections(bbsd_ps, mmd_result.p_value, config.alpha)
    if detection.combined_decision == NO_SHIFT:
        return ShiftReport(
            detection=detection,
            verdict=VERDICT_NO_SHIFT,
            prevalence_estimate=None,
            post_adjust_mmd_p=None,
            post_adjust_bbsd_p_values=None,
            flags=(),
            seeds_and_config=provenance,
        )

    # Stage 2, B.3: estimate the test prevalence from (calibrated) outputs.
    num_classes = ref.outputs.num_classes
    ref_prior = empirical_prevalence(ref.labels, num_classes)
    try:
        test_outputs = test.outputs
        if config.calibrate:
            temperature = calibrate_temperature(ref.outputs, ref.labels)
            test_outputs = apply_temperature(test.outputs, temperature)
        estimate = estimate_prevalence(ref_prior, test_outputs)
    except (ZeroReferencePrior, DegenerateLabels):
        # Cannot evaluate the prevalence branch; covariate is the
        # conservative attribution, flagged rather than silent.
        return ShiftReport(
            detection=detection,
            verdict=VERDICT_COVARIATE,
            prevalence_estimate=None,
            post_adjust_mmd_p=None,
            post_adjust_bbsd_p_values=None,
            flags=(FLAG_ESTIMATION_FAILED,),
            seeds_and_config=provenance,
        )

    # B.4: resample the reference set to the estimated prevalence.
    size = min(ref.n, config.ref_size)
    resample = resample_reference(ref, estimate.q_hat, size, seeds["resample"])
    adjusted = take_rows(ref, resample.indices, name="prevalence_adjusted_ref")

    # B.5: feature re-test with the stage-1 instruments.
    b5_result, _, _ = mmd_pipeline(
        adjusted.features, test.features, config.pca_k, config.permutations,
        seeds["b5"], projector=projector, kernel=kernel,
    )
    if b5_result.p_value > config.alpha:
        return ShiftReport(
            detection=detection,
            verdict=VERDICT_PREVALENCE,
            prevalence_estimate=estimate,
            post_adjust_mmd_p=b5_result.p_value,
            post_adjust_bbsd_p_values=None,
            flags=(),
            seeds_and_config=provenance,
        )

    # B.6: covariate shift is present; output re-test decides mixed vs pure.
    post_bbsd_ps, post_bbsd_decision = bbsd(adjusted.outputs, test.outputs,
                                            config.alpha)
    if detection.bbsd_decision == SHIFT and post_bbsd_decision == NO_SHIFT:
        verdict = VERDICT_MIXED
    else:
        verdict = VERDICT_COVARIATE
    return ShiftReport(
        detection=detection,
        verdict=verdict,
        prevalence_estimate=estimate,
        post_adjust_mmd_p=b5_result.p_value,
        post_adjust_bbsd_p_values=post_bbsd_ps,
        flags=(),
        seeds_and_config=provenance,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def detection_to_dict(detection: DetectionOutcome) -> dict:
    return {
        "bbsd_p_values": [float(p) for p in detection.bbsd_p_values],
        "mmd_p_value": detection.mmd_p_value,
        "combined_decision": detection.combined_decision,
        "bbsd_decision": detection.bbsd_decision,
        "mmd_decision": detection.mmd_decision,
        "alpha": detection.alpha,
    }


def report_to_dict(report: ShiftReport) -> dict:
    estimate = None
    if report.prevalence_estimate is not None:
        est = report.prevalence_estimate
        estimate = {
            "w_hat": [float(w) for w in est.w_hat],
            "q_hat": [float(q) for q in est.q_hat.p],
            "objective_value": est.objective_value,
            "iterations": est.iterations,
            "converged": est.converged,
        }
    post_bbsd = report.post_adjust_bbsd_p_values
    return {
        "version": REPORT_VERSION,
        "verdict": report.verdict,
        "detection": detection_to_dict(report.detection),
        "prevalence_estimate": estimate,
        "post_adjust_mmd_p": report.post_adjust_mmd_p,
        "post_adjust_bbsd_p_values": (
            None if post_bbsd is None else [float(p) for p in post_bbsd]
        ),
        "flags": list(report.flags),
        "seeds_and_config": report.seeds_and_config,
    }


def report_to_json(report: ShiftReport) -> str:
    """Stable JSON rendering: byte-identical for identical inputs and seeds."""
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2)


def replay_verdict(report: ShiftReport) -> str:
    """Recompute the verdict from the recorded p-values alone (audit helper)."""
    from .stats import bonferroni

    detection = report.detection
    alpha = detection.alpha
    if detection.combined_decision == NO_SHIFT:
        return VERDICT_NO_SHIFT
    if FLAG_ESTIMATION_FAILED in report.flags:
        return VERDICT_COVARIATE
    if report.post_adjust_mmd_p > alpha:
        return VERDICT_PREVALENCE
    post_reject = bonferroni(report.post_adjust_bbsd_p_values, alpha).reject
    if detection.bbsd_decision == SHIFT and not post_reject:
        return VERDICT_MIXED
    return VERDICT_COVARIATE
