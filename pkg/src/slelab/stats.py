"""Statistics utilities: KS tests, bootstrap CIs, curve distance, diagnostics."""

import numpy as np

__all__ = [
    "ks_statistic",
    "ks_two_sample",
    "bootstrap_ci",
    "gelman_rubin",
    "integrated_autocorr_time",
    "jarque_bera",
    "discrete_frechet",
    "curve_distance",
    "tv_distance_binned",
]


def ks_statistic(sample, reference):
    """Two-sided Kolmogorov-Smirnov statistic in [0, 1].

    `reference` is either a callable CDF or a second sample (two-sample
    variant).  Raises ValueError on empty input.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if callable(reference):
        xs = np.sort(x)
        n = xs.size
        cdf = np.asarray(reference(xs), dtype=float)
        lo = np.arange(0, n) / n
        hi = np.arange(1, n + 1) / n
        return float(max(np.max(hi - cdf), np.max(cdf - lo)))
    return ks_two_sample(x, np.asarray(reference, dtype=float))


def ks_two_sample(a, b):
    """Two-sample KS statistic: sup |F_a - F_b| over the pooled grid."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def bootstrap_ci(values, stat=np.mean, n_boot=2000, level=0.95, rng=None):
    """Percentile bootstrap CI for `stat` of a 1-d sample.

    Returns (estimate, lo, hi, std_error).
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    rng = np.random.default_rng(rng)
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    reps = np.array([stat(v[row]) for row in idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [alpha, 1.0 - alpha])
    return float(stat(v)), float(lo), float(hi), float(reps.std(ddof=1))


def gelman_rubin(chains):
    """Split-R-hat over an (n_chains, n_samples) array of scalar draws."""
    c = np.asarray(chains, dtype=float)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("need at least two chains")
    # split each chain in half to detect trends
    half = c.shape[1] // 2
    c = np.concatenate([c[:, :half], c[:, half : 2 * half]], axis=0)
    m, n = c.shape
    means = c.mean(axis=1)
    w = c.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w <= 0:
        return 1.0
    return float(np.sqrt(var_plus / w))


def integrated_autocorr_time(x, max_lag=None):
    """Integrated autocorrelation time by the initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return 1.0
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0:
        return 1.0
    if max_lag is None:
        max_lag = min(n // 4, 2000)
    tau = 1.0
    for lag in range(1, max_lag):
        rho = np.dot(x[:-lag], x[lag:]) / ((n - lag) * var)
        if rho <= 0:
            break
        tau += 2.0 * rho
    return float(max(tau, 1.0))


def jarque_bera(x):
    """Jarque-Bera normality statistic (chi2 with 2 dof under the null)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 8:
        raise ValueError("sample too small")
    c = x - x.mean()
    s2 = np.mean(c**2)
    skew = np.mean(c**3) / s2**1.5
    kurt = np.mean(c**4) / s2**2
    return float(n / 6.0 * (skew**2 + 0.25 * (kurt - 3.0) ** 2))


def discrete_frechet(a, b):
    """Discrete Frechet distance between two complex vertex sequences.

    Dynamic program over vertex pairs; an upper bound for the
    reparametrisation-infimum curve metric, exact for monotone matchings.
    """
    p = np.asarray(a, dtype=complex).ravel()
    q = np.asarray(b, dtype=complex).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("empty polyline")
    d = np.abs(p[:, None] - q[None, :])
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
        row_prev = ca[i - 1]
        row = ca[i]
        for j in range(1, m):
            row[j] = max(min(row_prev[j], row_prev[j - 1], row[j - 1]), d[i, j])
    return float(ca[-1, -1])


def curve_distance(a, b):
    """Distance between two trace polylines (vertex sequences or objects)."""
    va = getattr(a, "vertices", a)
    vb = getattr(b, "vertices", b)
    return discrete_frechet(va, vb)


def tv_distance_binned(a, b, n_bins=50, weights_a=None, lo=None, hi=None):
    """Total-variation distance between two samples on a shared bin grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if lo is None:
        lo = min(a.min(), b.min())
    if hi is None:
        hi = max(a.max(), b.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    pa, _ = np.histogram(a, bins=edges, weights=weights_a)
    pb, _ = np.histogram(b, bins=edges)
    pa = pa / pa.sum()
    pb = pb / pb.sum()
    return float(0.5 * np.abs(pa - pb).sum())
