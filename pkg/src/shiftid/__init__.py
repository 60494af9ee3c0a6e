"""Dataset shift detection and root-cause identification.

Given feature embeddings and task-model softmax outputs for a reference
sample and a test sample, this package detects whether the two differ and,
when they do, attributes the difference to prevalence shift, covariate
shift, or a mix of both.
"""

from .config import RunConfig, derive_seed
from .data import (DatasetBundle, FeatureTable, LabelDistribution,
                   LabelVector, OutputTable, empirical_prevalence,
                   load_bundle, save_bundle, take_rows)
from .detectors import (NO_SHIFT, SHIFT, DetectionOutcome, bbsd,
                        combine_detections, duo_detect, mmd_detector)
from .errors import (DegenerateLabels, DegenerateSample, DimensionMismatch,
                     EmptyClassNeeded, EmptyInput, GroupSizeMismatch,
                     InvalidAlpha, InvalidSpec, MissingLabels, ParseError,
                     RankDeficientWarning, ShiftIdError, ValidationError,
                     ZeroReferencePrior)
from .identifier import (ShiftReport, identify_shift, replay_verdict,
                         report_to_dict, report_to_json)
from .prevalence import (PrevalenceEstimate, apply_temperature,
                         calibrate_temperature, estimate_prevalence,
                         matching_objective, resample_reference)
from .simulator import (RateTable, SimSpec, evaluate, generate,
                        list_bundled_specs, load_bundled_spec, load_sim_spec,
                        spec_from_dict, wilson_interval)
from .stats import (PcaProjector, RbfKernelParams, TestResult, bonferroni,
                    kolmogorov_sf, ks_two_sample, median_heuristic_bandwidth,
                    mmd2_unbiased, pca_fit, pca_project, permutation_test,
                    rbf_kernel_matrix)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "derive_seed",
    "DatasetBundle", "FeatureTable", "LabelDistribution", "LabelVector",
    "OutputTable", "empirical_prevalence", "load_bundle", "save_bundle",
    "take_rows",
    "NO_SHIFT", "SHIFT", "DetectionOutcome", "bbsd", "combine_detections",
    "duo_detect", "mmd_detector",
    "ShiftIdError", "ParseError", "DimensionMismatch", "ValidationError",
    "EmptyInput", "InvalidAlpha", "DegenerateSample", "GroupSizeMismatch",
    "MissingLabels", "EmptyClassNeeded", "ZeroReferencePrior",
    "DegenerateLabels", "InvalidSpec", "RankDeficientWarning",
    "ShiftReport", "identify_shift", "replay_verdict", "report_to_dict",
    "report_to_json",
    "PrevalenceEstimate", "apply_temperature", "calibrate_temperature",
    "estimate_prevalence", "matching_objective", "resample_reference",
    "RateTable", "SimSpec", "evaluate", "generate", "list_bundled_specs",
    "load_bundled_spec", "load_sim_spec", "spec_from_dict", "wilson_interval",
    "PcaProjector", "RbfKernelParams", "TestResult", "bonferroni",
    "kolmogorov_sf", "ks_two_sample", "median_heuristic_bandwidth",
    "mmd2_unbiased", "pca_fit", "pca_project", "permutation_test",
    "rbf_kernel_matrix",
    "__version__",
]
