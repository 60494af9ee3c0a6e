"""Test-set label-distribution estimation and prevalence-matched resampling.

The estimator matches the reference class proportions against the mean of
density-ratio-adjusted model outputs on the test set. It runs a fixed-point
iteration on the probability simplex (multiplicative updates equivalent to
EM for the mixture weights); the matching objective doubles as the
convergence certificate. The estimated test prior is recovered as
q[i] proportional to w[i] * ref_prior[i].
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetBundle, LabelDistribution, LabelVector, OutputTable
from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyClassNeeded,
    MissingLabels,
    ValidationError,
    ZeroReferencePrior,
)

PROB_CLAMP = 1e-7
FIXED_POINT_TOL = 1e-8
MAX_ITERATIONS = 10_000


def _clamped(probs: np.ndarray) -> np.ndarray:
    """Clamp probabilities away from 0/1 and renormalize rows."""
    clipped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return clipped / clipped.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PrevalenceEstimate:
    """Estimated density ratio w, test prior q, and solver diagnostics."""

    w_hat: np.ndarray
    q_hat: LabelDistribution
    objective_value: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class ResampleResult:
    indices: np.ndarray
    achieved: LabelDistribution


def matching_objective(w: np.ndarray, ref_prior: np.ndarray,
                       test_probs: np.ndarray) -> float:
    """Squared mismatch between reference proportions and ratio-adjusted outputs."""
    denom = test_probs @ w
    adjusted = (test_probs / denom[:, None]).mean(axis=0)
    return float(np.sum((ref_prior - adjusted) ** 2))


def estimate_prevalence(ref_prior: LabelDistribution,
                        test_outputs: OutputTable) -> PrevalenceEstimate:
    """Estimate the test-set label distribution from model outputs.

    Starts the fixed point at the reference prior and iterates
    q[i] <- mean_x of the prior-reweighted posterior until the maximum
    absolute change drops below 1e-8 (or 10,000 iterations).
    """
    ref_p = ref_prior.p
    if test_outputs.num_classes != ref_p.shape[0]:
        raise DimensionMismatch(
            f"outputs have {test_outputs.num_classes} classes, prior has {ref_p.shape[0]}"
        )
    if np.any(ref_p <= 0.0):
        absent = int(np.argmin(ref_p))
        raise ZeroReferencePrior(
            f"class {absent} is absent from the reference prior"
        )
    probs = _clamped(test_outputs.probs)
    q = ref_p.copy()
    iterations = 0
    converged = False
    while iterations < MAX_ITERATIONS:
        iterations += 1
        weighted = probs * (q / ref_p)
        posterior = weighted / weighted.sum(axis=1, keepdims=True)
        q_next = posterior.mean(axis=0)
        delta = float(np.max(np.abs(q_next - q)))
        q = q_next
        if delta < FIXED_POINT_TOL:
            converged = True
            break
    q = q / q.sum()
    w_hat = q / ref_p
    return PrevalenceEstimate(
        w_hat=w_hat,
        q_hat=LabelDistribution(q),
        objective_value=matching_objective(w_hat, ref_p, probs),
        iterations=iterations,
        converged=converged,
    )


def fixed_point_step(q: np.ndarray, ref_prior: np.ndarray,
                     test_probs: np.ndarray) -> np.ndarray:
    """One multiplicative update of the simplex fixed point (exposed for tests)."""
    weighted = _clamped(test_probs) * (q / ref_prior)
    return (weighted / weighted.sum(axis=1, keepdims=True)).mean(axis=0)


# ---------------------------------------------------------------------------
# Temperature calibration
# ---------------------------------------------------------------------------

def apply_temperature(outputs: OutputTable, temperature: float) -> OutputTable:
    """Rescale outputs to softmax(log(p) / T); T=1 leaves rows unchanged."""
    if temperature == 1.0:
        return outputs
    log_p = np.log(np.clip(outputs.probs, PROB_CLAMP, 1.0 - PROB_CLAMP))
    scaled = log_p / temperature
    scaled -= scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return OutputTable(exp / exp.sum(axis=1, keepdims=True))


def _nll(probs: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    log_p = np.log(np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)) / temperature
    log_p -= log_p.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(log_p).sum(axis=1))
    return float(np.mean(log_norm - log_p[np.arange(labels.size), labels]))


def calibrate_temperature(ref_outputs: OutputTable, ref_labels: LabelVector,
                          lo: float = 0.05, hi: float = 20.0,
                          tol: float = 1e-4) -> float:
    """Temperature minimizing reference-set NLL, by golden-section search."""
    labels = ref_labels.labels
    if labels.shape[0] != ref_outputs.n:
        raise DimensionMismatch(
            f"labels have {labels.shape[0]} rows, outputs {ref_outputs.n}"
        )
    if np.unique(labels).size < 2:
        raise DegenerateLabels("calibration needs at least 2 classes in the labels")
    probs = ref_outputs.probs

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc = _nll(probs, labels, c)
    fd = _nll(probs, labels, d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = _nll(probs, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = _nll(probs, labels, d)
    return (a + b) / 2.0


# ---------------------------------------------------------------------------
# Prevalence-matched resampling
# ---------------------------------------------------------------------------

def _apportion(target: np.ndarray, size: int) -> np.ndarray:
    """Largest-fraction apportionment of ``target * size`` into integer counts.

    Classes with target mass below 1/(2*size) receive zero rows.
    """
    eligible = target >= 1.0 / (2.0 * size)
    quota = np.where(eligible, target * size, 0.0)
    counts = np.floor(quota).astype(np.int64)
    fractions = quota - counts
    remaining = size - int(counts.sum())
    # Stable priority: largest fraction first, index breaking ties.
    order = [i for i in np.argsort(-fractions, kind="stable") if eligible[i]]
    pos = 0
    while remaining > 0 and order:
        counts[order[pos]] += 1
        remaining -= 1
        pos = (pos + 1) % len(order)
    return counts


def resample_reference(ref: DatasetBundle, target: LabelDistribution,
                       size: int, seed: int) -> ResampleResult:
    """Draw reference row indices matching the target label distribution.

    Per-class counts follow largest-fraction apportionment of target * size;
    rows are drawn uniformly with replacement within each class.
    """
    if ref.labels is None:
        raise MissingLabels("resampling requires a labeled reference bundle")
    num_classes = ref.outputs.num_classes
    if target.num_classes != num_classes:
        raise DimensionMismatch(
            f"target has {target.num_classes} classes, reference outputs {num_classes}"
        )
    if size < num_classes:
        raise ValidationError(f"size must be >= C = {num_classes}, got {size}")
    counts = _apportion(target.p, size)
    labels = ref.labels.labels
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in range(num_classes):
        if counts[cls] == 0:
            continue
        rows = np.flatnonzero(labels == cls)
        if rows.size == 0:
            raise EmptyClassNeeded(
                f"target puts mass on class {cls} but the reference has no such rows"
            )
        chosen.append(rng.choice(rows, size=int(counts[cls]), replace=True))
    indices = np.concatenate(chosen)
    achieved = LabelDistribution(counts.astype(np.float64) / size)
    return ResampleResult(indices=indices, achieved=achieved)
