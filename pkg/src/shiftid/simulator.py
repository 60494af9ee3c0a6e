"""Synthetic shift generator and bootstrap evaluation harness.

Data are drawn from isotropic Gaussian class conditionals, optionally
displaced by subgroup offsets that model acquisition-site or demographic
structure.  Model outputs are the exact Bayes posterior of the fixed
reference-distribution classifier, so prevalence shift changes only how
often each class appears while the input-output mapping stays frozen,
and subgroup offsets orthogonal to the class axes move the inputs
without moving the outputs.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .config import RunConfig, derive_seed
from .data import DatasetBundle, FeatureTable, LabelVector, OutputTable
from .errors import InvalidSpec

TRUTH_NONE = "none"
TRUTH_PREVALENCE = "prevalence"
TRUTH_COVARIATE = "covariate"
TRUTH_MIXED = "mixed"

# Verdict string each ground truth should map to when identification succeeds.
TRUTH_TO_VERDICT = {
    TRUTH_NONE: "no_shift",
    TRUTH_PREVALENCE: "prevalence",
    TRUTH_COVARIATE: "covariate",
    TRUTH_MIXED: "mixed",
}

_DIST_TOL = 1e-12
_WILSON_Z = 1.959963984540054  # two-sided 95%


def _as_distribution(values, length: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape[0] != length:
        raise InvalidSpec(f"{what} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise InvalidSpec(f"{what} must be finite and non-negative")
    total = arr.sum()
    if abs(total - 1.0) > 1e-9:
        raise InvalidSpec(f"{what} must sum to 1, got {total!r}")
    arr = arr / total
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SimSpec:
    """Full description of one synthetic reference/test pair.

    ``class_means`` is C x D; ``subgroup_offsets``, when present, is S x D
    and every sampled point gets exactly one offset added to its class
    mean.  ``class_cov_scale`` is the isotropic feature variance.
    ``group_size`` > 1 makes consecutive rows share one (class, subgroup)
    draw, which is how exam-level correlation enters.
    """

    num_classes: int
    feature_dim: int
    class_means: np.ndarray
    ref_prior: np.ndarray
    test_prior: np.ndarray
    n_ref: int
    n_test: int
    class_cov_scale: float = 1.0
    subgroup_offsets: Optional[np.ndarray] = None
    ref_subgroup_mix: Optional[np.ndarray] = None
    test_subgroup_mix: Optional[np.ndarray] = None
    posterior_model: str = "exact_bayes"
    posterior_power: float = 1.0
    group_size: int = 1
    name: str = ""

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpec("num_classes must be at least 2")
        if self.feature_dim < 1:
            raise InvalidSpec("feature_dim must be at least 1")
        means = np.ascontiguousarray(self.class_means, dtype=np.float64)
        if means.shape != (self.num_classes, self.feature_dim):
            raise InvalidSpec(
                f"class_means must be {self.num_classes}x{self.feature_dim}, "
                f"got {means.shape}")
        if not np.all(np.isfinite(means)):
            raise InvalidSpec("class_means must be finite")
        means.setflags(write=False)
        object.__setattr__(self, "class_means", means)

        if not (np.isfinite(self.class_cov_scale) and self.class_cov_scale > 0):
            raise InvalidSpec("class_cov_scale must be a positive real")

        object.__setattr__(
            self, "ref_prior",
            _as_distribution(self.ref_prior, self.num_classes, "ref_prior"))
        object.__setattr__(
            self, "test_prior",
            _as_distribution(self.test_prior, self.num_classes, "test_prior"))

        if self.subgroup_offsets is None:
            if self.ref_subgroup_mix is not None or self.test_subgroup_mix is not None:
                raise InvalidSpec("subgroup mixes given without subgroup_offsets")
        else:
            offs = np.ascontiguousarray(self.subgroup_offsets, dtype=np.float64)
            if offs.ndim != 2 or offs.shape[1] != self.feature_dim:
                raise InvalidSpec(
                    f"subgroup_offsets must be S x {self.feature_dim}")
            if offs.shape[0] < 1 or not np.all(np.isfinite(offs)):
                raise InvalidSpec("subgroup_offsets must be non-empty and finite")
            offs.setflags(write=False)
            object.__setattr__(self, "subgroup_offsets", offs)
            num_subgroups = offs.shape[0]
            uniform = np.full(num_subgroups, 1.0 / num_subgroups)
            ref_mix = self.ref_subgroup_mix if self.ref_subgroup_mix is not None else uniform
            test_mix = self.test_subgroup_mix if self.test_subgroup_mix is not None else uniform
            object.__setattr__(
                self, "ref_subgroup_mix",
                _as_distribution(ref_mix, num_subgroups, "ref_subgroup_mix"))
            object.__setattr__(
                self, "test_subgroup_mix",
                _as_distribution(test_mix, num_subgroups, "test_subgroup_mix"))

        if self.n_ref < 2 or self.n_test < 2:
            raise InvalidSpec("n_ref and n_test must both be at least 2")
        if self.group_size < 1:
            raise InvalidSpec("group_size must be at least 1")
        if self.group_size > 1:
            if self.n_test % self.group_size != 0:
                raise InvalidSpec("group_size must divide n_test")
            if self.n_ref % self.group_size != 0:
                raise InvalidSpec("group_size must divide n_ref")

        if self.posterior_model not in ("exact_bayes", "tempered"):
            raise InvalidSpec(
                f"unknown posterior_model {self.posterior_model!r}")
        if not (np.isfinite(self.posterior_power) and self.posterior_power > 0):
            raise InvalidSpec("posterior_power must be a positive real")

    @property
    def num_subgroups(self) -> int:
        if self.subgroup_offsets is None:
            return 1
        return self.subgroup_offsets.shape[0]

    @property
    def truth(self) -> str:
        """Ground-truth shift class implied by the two sampling laws."""
        priors_differ = bool(
            np.max(np.abs(self.ref_prior - self.test_prior)) > _DIST_TOL)
        if self.subgroup_offsets is None:
            mixes_differ = False
        else:
            mixes_differ = bool(
                np.max(np.abs(self.ref_subgroup_mix - self.test_subgroup_mix))
                > _DIST_TOL)
        if priors_differ and mixes_differ:
            return TRUTH_MIXED
        if priors_differ:
            return TRUTH_PREVALENCE
        if mixes_differ:
            return TRUTH_COVARIATE
        return TRUTH_NONE


def _component_means(spec: SimSpec) -> np.ndarray:
    """All (class, subgroup) component means as a (C*S) x D matrix."""
    if spec.subgroup_offsets is None:
        return spec.class_means
    # Row order is class-major: (c0,s0), (c0,s1), ..., (c1,s0), ...
    return (spec.class_means[:, None, :]
            + spec.subgroup_offsets[None, :, :]).reshape(-1, spec.feature_dim)


def _reference_posterior(spec: SimSpec, x: np.ndarray) -> np.ndarray:
    """Posterior of the deployed classifier, i.e. exact Bayes under the
    reference prior and reference subgroup mix, for each row of x."""
    n = x.shape[0]
    num_classes = spec.num_classes
    num_subgroups = spec.num_subgroups
    means = _component_means(spec)

    # Squared distances to every component mean without materialising the
    # full n x components x dim tensor.
    x_sq = np.einsum("nd,nd->n", x, x)
    m_sq = np.einsum("kd,kd->k", means, means)
    sq = x_sq[:, None] - 2.0 * (x @ means.T) + m_sq[None, :]
    log_lik = (-sq / (2.0 * spec.class_cov_scale)).reshape(
        n, num_classes, num_subgroups)

    if spec.subgroup_offsets is None:
        log_joint = log_lik[:, :, 0]
    else:
        with np.errstate(divide="ignore"):
            log_mix = np.log(spec.ref_subgroup_mix)
        log_joint = logsumexp(log_lik + log_mix[None, None, :], axis=2)

    with np.errstate(divide="ignore"):
        log_prior = np.log(spec.ref_prior)
    log_post = log_prior[None, :] + log_joint
    if spec.posterior_model == "tempered":
        # Tempering happens on the normalised posterior, so normalise twice.
        log_post = log_post - logsumexp(log_post, axis=1, keepdims=True)
        log_post = spec.posterior_power * log_post
    log_post = log_post - logsumexp(log_post, axis=1, keepdims=True)
    return np.exp(log_post)


def _sample_side(spec: SimSpec, rng: np.random.Generator, n: int,
                 prior: np.ndarray, mix: Optional[np.ndarray]):
    """Draw one side: (features, labels, group_ids or None)."""
    num_groups = n // spec.group_size
    classes = rng.choice(spec.num_classes, size=num_groups, p=prior)
    if spec.subgroup_offsets is not None:
        subgroups = rng.choice(spec.num_subgroups, size=num_groups, p=mix)
    else:
        subgroups = None

    labels = np.repeat(classes, spec.group_size)
    centers = spec.class_means[labels]
    if subgroups is not None:
        centers = centers + spec.subgroup_offsets[np.repeat(subgroups, spec.group_size)]

    noise = rng.standard_normal((n, spec.feature_dim))
    features = centers + np.sqrt(spec.class_cov_scale) * noise

    if spec.group_size > 1:
        group_ids = np.repeat(np.arange(num_groups, dtype=np.int64),
                              spec.group_size)
    else:
        group_ids = None
    return features, labels.astype(np.int64), group_ids


def generate(spec: SimSpec, seed: int):
    """Generate one (reference, test) pair with known ground truth.

    Returns ``(ref_bundle, test_bundle, truth)`` where truth is one of
    "none", "prevalence", "covariate", "mixed".  Both bundles carry their
    true labels; the identification pipeline only ever reads the
    reference side's.
    """
    rng = np.random.default_rng(int(seed))

    ref_x, ref_y, ref_groups = _sample_side(
        spec, rng, spec.n_ref, spec.ref_prior, spec.ref_subgroup_mix)
    test_x, test_y, test_groups = _sample_side(
        spec, rng, spec.n_test, spec.test_prior, spec.test_subgroup_mix)

    ref = DatasetBundle(
        features=FeatureTable(ref_x, group_ids=ref_groups),
        outputs=OutputTable(_reference_posterior(spec, ref_x)),
        labels=LabelVector(ref_y),
    )
    test = DatasetBundle(
        features=FeatureTable(test_x, group_ids=test_groups),
        outputs=OutputTable(_reference_posterior(spec, test_x)),
        labels=LabelVector(test_y),
    )
    return ref, test, spec.truth


def wilson_interval(count: int, trials: int, z: float = _WILSON_Z):
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if count < 0 or count > trials:
        raise ValueError("count must lie in [0, trials]")
    p_hat = count / trials
    denom = 1.0 + z * z / trials
    center = (p_hat + z * z / (2.0 * trials)) / denom
    half = (z / denom) * math.sqrt(
        p_hat * (1.0 - p_hat) / trials + z * z / (4.0 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class RateRow:
    metric: str
    count: int
    trials: int
    rate: float
    wilson_lo: float
    wilson_hi: float


@dataclass(frozen=True)
class RateTable:
    """Per-verdict and per-detector frequencies over repeated trials."""

    rows: tuple
    truth: str
    trials: int
    seed: int
    spec_name: str
    config: dict

    def get(self, metric: str) -> RateRow:
        for row in self.rows:
            if row.metric == metric:
                return row
        raise KeyError(metric)

    def rate(self, metric: str) -> float:
        return self.get(metric).rate


_METRIC_ORDER = (
    "verdict_no_shift",
    "verdict_prevalence",
    "verdict_covariate",
    "verdict_mixed",
    "correct_identification",
    "detect_bbsd",
    "detect_mmd",
    "detect_duo",
)


def evaluate(spec: SimSpec, config: RunConfig, trials: int = 200,
             seed: int = 0) -> RateTable:
    """Repeatedly generate and identify, tallying verdict frequencies.

    Every trial gets its own derived seed for both data generation and
    the pipeline, so trials are independent yet the whole table is a
    deterministic function of (spec, config, trials, seed).
    """
    from .detectors import SHIFT
    from .identifier import identify_shift

    if trials < 1:
        raise ValueError("trials must be at least 1")

    counts = {metric: 0 for metric in _METRIC_ORDER}
    expected_verdict = TRUTH_TO_VERDICT[spec.truth]
    for t in range(trials):
        trial_seed = derive_seed(seed, "trial", t)
        ref, test, _ = generate(spec, trial_seed)
        trial_config = dataclasses.replace(config, seed=int(trial_seed))
        report = identify_shift(ref, test, trial_config)
        counts["verdict_" + report.verdict] += 1
        if report.verdict == expected_verdict:
            counts["correct_identification"] += 1
        if report.detection.bbsd_decision == SHIFT:
            counts["detect_bbsd"] += 1
        if report.detection.mmd_decision == SHIFT:
            counts["detect_mmd"] += 1
        if report.detection.combined_decision == SHIFT:
            counts["detect_duo"] += 1

    rows = []
    for metric in _METRIC_ORDER:
        count = counts[metric]
        lo, hi = wilson_interval(count, trials)
        rows.append(RateRow(metric=metric, count=count, trials=trials,
                            rate=count / trials, wilson_lo=lo, wilson_hi=hi))
    return RateTable(
        rows=tuple(rows),
        truth=spec.truth,
        trials=trials,
        seed=int(seed),
        spec_name=spec.name,
        config={
            "alpha": config.alpha,
            "pca_k": config.pca_k,
            "permutations": config.permutations,
            "ref_size": config.ref_size,
            "calibrate": config.calibrate,
        },
    )


def rate_table_to_json(table: RateTable) -> str:
    payload = {
        "spec": table.spec_name,
        "truth": table.truth,
        "trials": table.trials,
        "seed": table.seed,
        "config": table.config,
        "rates": {
            row.metric: {
                "count": row.count,
                "rate": row.rate,
                "wilson_lo": row.wilson_lo,
                "wilson_hi": row.wilson_hi,
            }
            for row in table.rows
        },
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def rate_table_to_csv(table: RateTable) -> str:
    """One wide row so each emitted line is self-describing."""
    fields = [
        ("spec", table.spec_name),
        ("truth", table.truth),
        ("trials", table.trials),
        ("seed", table.seed),
    ]
    fields.extend(sorted(table.config.items()))
    for row in table.rows:
        fields.append((row.metric + "_count", row.count))
        fields.append((row.metric + "_rate", repr(row.rate)))
        fields.append((row.metric + "_lo", repr(row.wilson_lo)))
        fields.append((row.metric + "_hi", repr(row.wilson_hi)))
    header = ",".join(name for name, _ in fields)
    values = ",".join(str(value) for _, value in fields)
    return header + "\n" + values + "\n"


def _compact_class_means(d: dict) -> np.ndarray:
    num_classes = int(d["num_classes"])
    feature_dim = int(d["feature_dim"])
    if "class_means" in d:
        return np.asarray(d["class_means"], dtype=np.float64)
    separation = float(d.get("class_separation", 1.0))
    if feature_dim < num_classes:
        raise InvalidSpec(
            "class_separation shorthand needs feature_dim >= num_classes")
    means = np.zeros((num_classes, feature_dim))
    means[np.arange(num_classes), np.arange(num_classes)] = separation
    return means


def _compact_subgroup_offsets(d: dict) -> Optional[np.ndarray]:
    if "subgroup_offsets" in d:
        return np.asarray(d["subgroup_offsets"], dtype=np.float64)
    if "subgroup_offset" not in d:
        return None
    offset = float(d["subgroup_offset"])
    num_subgroups = int(d.get("num_subgroups", 2))
    width = int(d.get("subgroup_offset_dims", 1))
    num_classes = int(d["num_classes"])
    feature_dim = int(d["feature_dim"])
    if num_subgroups < 2 or width < 1:
        raise InvalidSpec("subgroup shorthand needs num_subgroups >= 2 and "
                          "subgroup_offset_dims >= 1")
    needed = num_classes + (num_subgroups - 1) * width
    if feature_dim < needed:
        raise InvalidSpec(
            f"subgroup shorthand needs feature_dim >= {needed}")
    # Subgroup 0 sits at the class mean; each further subgroup is displaced
    # by `offset` in its own block of dimensions beyond the class axes, so
    # offsets are orthogonal to every class-mean difference.
    offsets = np.zeros((num_subgroups, feature_dim))
    for s in range(1, num_subgroups):
        start = num_classes + (s - 1) * width
        offsets[s, start:start + width] = offset
    return offsets


def spec_from_dict(d: dict, name: str = "") -> SimSpec:
    """Build a SimSpec from a parsed config mapping.

    Accepts either explicit matrices (class_means, subgroup_offsets) or
    the compact generator keys class_separation, subgroup_offset,
    num_subgroups and subgroup_offset_dims.
    """
    try:
        num_classes = int(d["num_classes"])
        feature_dim = int(d["feature_dim"])
        n_ref = int(d["n_ref"])
        n_test = int(d["n_test"])
        ref_prior = d["ref_prior"]
    except KeyError as exc:
        raise InvalidSpec(f"missing required spec key {exc.args[0]!r}") from exc

    known = {
        "num_classes", "feature_dim", "n_ref", "n_test", "ref_prior",
        "test_prior", "class_means", "class_separation", "class_cov_scale",
        "subgroup_offsets", "subgroup_offset", "num_subgroups",
        "subgroup_offset_dims", "ref_subgroup_mix", "test_subgroup_mix",
        "posterior_model", "posterior_power", "group_size", "name",
    }
    unknown = set(d) - known
    if unknown:
        raise InvalidSpec(f"unknown spec keys: {sorted(unknown)}")

    offsets = _compact_subgroup_offsets(d)
    mixes = {}
    for key in ("ref_subgroup_mix", "test_subgroup_mix"):
        if key in d:
            mixes[key] = np.asarray(d[key], dtype=np.float64)

    return SimSpec(
        num_classes=num_classes,
        feature_dim=feature_dim,
        class_means=_compact_class_means(d),
        ref_prior=np.asarray(ref_prior, dtype=np.float64),
        test_prior=np.asarray(d.get("test_prior", ref_prior), dtype=np.float64),
        n_ref=n_ref,
        n_test=n_test,
        class_cov_scale=float(d.get("class_cov_scale", 1.0)),
        subgroup_offsets=offsets,
        ref_subgroup_mix=mixes.get("ref_subgroup_mix"),
        test_subgroup_mix=mixes.get("test_subgroup_mix"),
        posterior_model=str(d.get("posterior_model", "exact_bayes")),
        posterior_power=float(d.get("posterior_power", 1.0)),
        group_size=int(d.get("group_size", 1)),
        name=str(d.get("name", name)),
    )


def load_sim_spec(path: str) -> SimSpec:
    """Load a SimSpec from a TOML or JSON file."""
    stem = os.path.splitext(os.path.basename(path))[0]
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidSpec("spec file must contain a single mapping")
    return spec_from_dict(raw, name=stem)


def list_bundled_specs() -> tuple:
    """Names of the simulation specs shipped inside the package."""
    from importlib import resources

    names = []
    for entry in resources.files("shiftid").joinpath("specs").iterdir():
        if entry.name.endswith(".toml"):
            names.append(entry.name[:-len(".toml")])
    return tuple(sorted(names))


def load_bundled_spec(name: str) -> SimSpec:
    from importlib import resources

    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib

    ref = resources.files("shiftid").joinpath("specs").joinpath(name + ".toml")
    try:
        raw = tomllib.loads(ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidSpec(
            f"no bundled spec named {name!r}; available: {list_bundled_specs()}")
    return spec_from_dict(raw, name=name)
