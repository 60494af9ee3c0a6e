"""Statistical primitives: two-sample K-S test, Bonferroni correction,
RBF kernel, unbiased MMD^2, grouped permutation testing, and PCA projection.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import FeatureTable
from .errors import (
    DegenerateSample,
    DimensionMismatch,
    EmptyInput,
    GroupSizeMismatch,
    InvalidAlpha,
    RankDeficientWarning,
    ValidationError,
)

_KS_SERIES_TOL = 1e-10
_PERM_CHUNK = 256


@dataclass(frozen=True)
class TestResult:
    """Statistic and p-value of a two-sample test."""

    statistic: float
    p_value: float

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValidationError(f"p-value {self.p_value} outside [0, 1]")


@dataclass(frozen=True)
class RbfKernelParams:
    """Bandwidth of the kernel exp(-||z - z'||^2 / (2 sigma)).

    ``sigma`` carries units of squared embedding distance.
    """

    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass(frozen=True)
class BonferroniDecision:
    reject: bool
    threshold: float


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------

def kolmogorov_sf(lam: float) -> float:
    """Asymptotic two-sided Kolmogorov survival function.

    Q(lam) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2), truncated once terms
    drop below 1e-10; clipped to [0, 1].
    """
    if lam <= 1e-12:
        return 1.0
    total = 0.0
    sign = 1.0
    j = 1
    while True:
        term = np.exp(-2.0 * (j * lam) ** 2)
        if term < _KS_SERIES_TOL:
            break
        total += sign * term
        sign = -sign
        j += 1
    return float(min(1.0, max(0.0, 2.0 * total)))


def ks_two_sample(a, b) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    The statistic is the exact sup-distance between the two empirical CDFs,
    built on the merged sorted sample (ties form shared steps, no jitter).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("samples must be finite")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    merged = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, merged, side="right") / a.size
    cdf_b = np.searchsorted(b_sorted, merged, side="right") / b.size
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    ne = a.size * b.size / (a.size + b.size)
    lam = (np.sqrt(ne) + 0.12 + 0.11 / np.sqrt(ne)) * stat
    return TestResult(statistic=stat, p_value=kolmogorov_sf(lam))


def bonferroni(p_values, alpha: float) -> BonferroniDecision:
    """Reject iff min(p) <= alpha / len(p); returns the corrected threshold."""
    p = np.asarray(p_values, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyInput("p-value vector is empty")
    if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
        raise ValidationError("p-values must lie in [0, 1]")
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    threshold = alpha / p.size
    return BonferroniDecision(reject=bool(p.min() <= threshold), threshold=threshold)


# ---------------------------------------------------------------------------
# RBF kernel and MMD^2
# ---------------------------------------------------------------------------

def median_heuristic_bandwidth(z: FeatureTable) -> RbfKernelParams:
    """Median of squared pairwise Euclidean distances over the pooled sample.

    Falls back to the smallest positive pairwise value when the median is 0;
    all-identical points are a DegenerateSample.
    """
    sq = pdist(z.values, metric="sqeuclidean")
    sigma = float(np.median(sq))
    if sigma <= 0.0:
        positive = sq[sq > 0.0]
        if positive.size == 0:
            raise DegenerateSample("all pairwise distances are zero")
        sigma = float(positive.min())
    return RbfKernelParams(sigma=sigma)


def rbf_kernel_matrix(x: np.ndarray, y: np.ndarray, kernel: RbfKernelParams) -> np.ndarray:
    return np.exp(cdist(x, y, metric="sqeuclidean") / (-2.0 * kernel.sigma))


def mmd2_unbiased(zr: FeatureTable, zt: FeatureTable, kernel: RbfKernelParams) -> float:
    """Unbiased three-term estimator of the squared MMD (may be negative)."""
    if zr.dim != zt.dim:
        raise DimensionMismatch(f"feature dims differ: {zr.dim} vs {zt.dim}")
    x, y = zr.values, zt.values
    m, n = x.shape[0], y.shape[0]
    kxx = rbf_kernel_matrix(x, x, kernel)
    kyy = rbf_kernel_matrix(y, y, kernel)
    kxy = rbf_kernel_matrix(x, y, kernel)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.sum() / (m * n)
    return float(term_x + term_y - term_xy)


# ---------------------------------------------------------------------------
# Permutation test
# ---------------------------------------------------------------------------

def _rows_by_group(group_ids: np.ndarray):
    order = np.argsort(group_ids, kind="stable")
    sorted_ids = group_ids[order]
    boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
    return np.split(order, boundaries)


def _pooled_groups(zr: FeatureTable, zt: FeatureTable):
    """Row-index sets of all groups in the pooled (ref then test) ordering.

    Group IDs never collide across sides: a reference group and a test group
    with the same ID remain distinct groups.
    """
    groups = _rows_by_group(zr.effective_group_ids())
    groups += [zr.n + rows for rows in _rows_by_group(zt.effective_group_ids())]
    return groups


def iter_group_splits(zr: FeatureTable, zt: FeatureTable, num_permutations: int,
                      rng_seed: int):
    """Yield side-1 row indices (pooled numbering) for each permutation.

    Whole groups are reassigned between the two pools: group order is permuted
    uniformly and groups fill side 1 greedily until its sample count reaches
    the observed reference size. With ragged groups side 1 may overshoot by at
    most the largest group size minus one; the statistic is then computed on
    the actual sizes.
    """
    groups = _pooled_groups(zr, zt)
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    m, n = zr.n, zt.n
    max_group = int(sizes.max())
    if n - (max_group - 1) < 2:
        raise GroupSizeMismatch(
            f"largest group ({max_group} rows) can leave side 2 with fewer than "
            f"2 of its {n} rows"
        )
    singletons = bool(np.all(sizes == 1))
    if singletons:
        row_of_group = np.concatenate(groups)
    rng = np.random.default_rng(rng_seed)
    for _ in range(num_permutations):
        order = rng.permutation(len(groups))
        if singletons:
            yield row_of_group[order[:m]]
            continue
        csum = np.cumsum(sizes[order])
        stop = int(np.searchsorted(csum, m, side="left"))
        yield np.concatenate([groups[i] for i in order[: stop + 1]])


def _mmd2_from_indicators(k_pooled, diag, total_sum, u):
    """Unbiased MMD^2 for each side-1 indicator column of ``u``."""
    m_b = u.sum(axis=0)
    n_b = k_pooled.shape[0] - m_b
    t = k_pooled @ u
    colsum = t.sum(axis=0)
    quad = np.einsum("ib,ib->b", u, t)
    d1 = diag @ u
    s12 = colsum - quad
    s22 = total_sum - 2.0 * colsum + quad
    term1 = (quad - d1) / (m_b * (m_b - 1.0))
    term2 = (s22 - (diag.sum() - d1)) / (n_b * (n_b - 1.0))
    return term1 + term2 - 2.0 * s12 / (m_b * n_b)


def permutation_test(zr: FeatureTable, zt: FeatureTable, kernel: RbfKernelParams,
                     num_permutations: int, rng_seed: int) -> TestResult:
    """MMD^2 permutation test; p = (1 + #{perm >= observed}) / (1 + B).

    Permutations respect group structure (see :func:`iter_group_splits`). The
    kernel bandwidth is taken as given: callers compute it once on the pooled
    observed data so the permutation distribution stays exchangeable.
    """
    if zr.dim != zt.dim:
        raise DimensionMismatch(f"feature dims differ: {zr.dim} vs {zt.dim}")
    if num_permutations < 1:
        raise ValidationError("num_permutations must be >= 1")
    pooled = np.vstack([zr.values, zt.values])
    n_total = pooled.shape[0]
    k_pooled = rbf_kernel_matrix(pooled, pooled, kernel)
    diag = np.ascontiguousarray(np.diag(k_pooled))
    total_sum = k_pooled.sum()

    u_obs = np.zeros((n_total, 1))
    u_obs[: zr.n, 0] = 1.0
    observed = float(_mmd2_from_indicators(k_pooled, diag, total_sum, u_obs)[0])

    exceed = 0
    splits = iter_group_splits(zr, zt, num_permutations, rng_seed)
    done = False
    while not done:
        u = np.zeros((n_total, _PERM_CHUNK))
        col = 0
        for rows in splits:
            u[rows, col] = 1.0
            col += 1
            if col == _PERM_CHUNK:
                break
        else:
            done = True
        if col:
            stats = _mmd2_from_indicators(k_pooled, diag, total_sum, u[:, :col])
            exceed += int(np.count_nonzero(stats >= observed))
    p = (1.0 + exceed) / (1.0 + num_permutations)
    return TestResult(statistic=observed, p_value=p)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaProjector:
    """Column mean and top-k right singular vectors of the fitted matrix."""

    mean: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "components",
                           np.asarray(self.components, dtype=np.float64))
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(self.k), atol=1e-8):
            raise ValidationError("components are not row-orthonormal")

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def pca_fit(reference_features: FeatureTable, k: int) -> PcaProjector:
    """Fit a k-component PCA projector on the reference features.

    Components are ordered by descending singular value; each is flipped so
    its largest-magnitude entry is positive. If the numerical rank falls
    below k, k is reduced to the rank and a RankDeficientWarning is issued.
    """
    x = reference_features.values
    n, d = x.shape
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise ValidationError(f"need at least k + 1 = {k + 1} rows to fit, got {n}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    tol = s[0] * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.count_nonzero(s > tol))
    if rank == 0:
        raise DegenerateSample("reference features have zero variance")
    if rank < k:
        warnings.warn(
            f"requested {k} components but numerical rank is {rank}; reducing k",
            RankDeficientWarning,
        )
        k = rank
    components = vt[:k].copy()
    lead = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), lead])
    signs[signs == 0.0] = 1.0
    components *= signs[:, None]
    return PcaProjector(mean=mean, components=components)


def pca_project(projector: PcaProjector, features: FeatureTable) -> FeatureTable:
    """Project features onto the fitted components; group IDs carry through."""
    if features.dim != projector.dim:
        raise DimensionMismatch(
            f"features have dim {features.dim}, projector expects {projector.dim}"
        )
    values = (features.values - projector.mean) @ projector.components.T
    return FeatureTable(values, group_ids=features.group_ids)
