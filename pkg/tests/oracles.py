"""Independent brute-force oracles used by the unit and acceptance tests.

Everything here is deliberately written the slow, obvious way (explicit
loops, no shared code with the package) so the fast implementations have
something honest to be checked against.
"""

import math

import numpy as np


def rbf_oracle(u, v, sigma):
    d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    return math.exp(-float(np.dot(d, d)) / (2.0 * sigma))


def mmd2_double_loop(x, y, sigma):
    """Three-term unbiased MMD^2 by naive double loops."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = x.shape[0], y.shape[0]
    s_xx = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                s_xx += rbf_oracle(x[i], x[j], sigma)
    s_yy = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s_yy += rbf_oracle(y[i], y[j], sigma)
    s_xy = 0.0
    for i in range(m):
        for j in range(n):
            s_xy += rbf_oracle(x[i], y[j], sigma)
    return s_xx / (m * (m - 1)) + s_yy / (n * (n - 1)) - 2.0 * s_xy / (m * n)


def median_sq_distance_double_loop(z):
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    vals = []
    for i in range(n):
        for j in range(i + 1, n):
            d = z[i] - z[j]
            vals.append(float(np.dot(d, d)))
    return float(np.median(vals))


def ks_statistic_sweep(a, b):
    """Exact sup-distance between two empirical CDFs by sweeping all points."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    best = 0.0
    for x in np.concatenate([a, b]):
        fa = np.searchsorted(a, x, side="right") / a.size
        fb = np.searchsorted(b, x, side="right") / b.size
        best = max(best, abs(fa - fb))
    return float(best)


def kolmogorov_series(lam, terms=200):
    """Two-sided asymptotic Kolmogorov survival probability."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    for j in range(1, terms + 1):
        total += (-1.0) ** (j - 1) * math.exp(-2.0 * (j * lam) ** 2)
    return min(1.0, max(0.0, 2.0 * total))


def ks_p_value_oracle(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    d = ks_statistic_sweep(a, b)
    ne = a.size * b.size / (a.size + b.size)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return kolmogorov_series(lam)


def total_variation(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def binned_reliability_error(probs, labels, num_bins=10):
    """Mean |confidence - accuracy| over equal-width top-class bins,
    weighted by bin occupancy (a plain expected calibration error)."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    correct = (pred == labels).astype(float)
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    err = 0.0
    for k in range(num_bins):
        if k == num_bins - 1:
            mask = (conf >= edges[k]) & (conf <= edges[k + 1])
        else:
            mask = (conf >= edges[k]) & (conf < edges[k + 1])
        if mask.sum() == 0:
            continue
        err += mask.mean() * abs(conf[mask].mean() - correct[mask].mean())
    return float(err)


def bayes_posterior_loops(x, class_means, prior, cov_scale=1.0,
                          offsets=None, mix=None, power=1.0):
    """Row-by-row Gaussian-mixture posterior with plain loops and exp.

    Marginalizes the subgroup mixture when offsets are given. ``power``
    sharpens the normalized posterior and renormalizes, mimicking an
    overconfident model.
    """
    x = np.asarray(x, dtype=float)
    class_means = np.asarray(class_means, dtype=float)
    prior = np.asarray(prior, dtype=float)
    n = x.shape[0]
    c = class_means.shape[0]
    out = np.zeros((n, c))
    for i in range(n):
        joint = np.zeros(c)
        for ci in range(c):
            if offsets is None:
                d2 = float(np.sum((x[i] - class_means[ci]) ** 2))
                lik = math.exp(-d2 / (2.0 * cov_scale))
            else:
                lik = 0.0
                for s in range(len(offsets)):
                    d2 = float(np.sum((x[i] - class_means[ci] - offsets[s]) ** 2))
                    lik += mix[s] * math.exp(-d2 / (2.0 * cov_scale))
            joint[ci] = prior[ci] * lik
        post = joint / joint.sum()
        if power != 1.0:
            post = post ** power
            post = post / post.sum()
        out[i] = post
    return out
