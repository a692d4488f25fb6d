"""Closed-form and integral quantities attached to the curve system.

Two families of boundary hitting densities on (x_{N+1}, inf), both
unnormalised products of power laws:

    odd family  (count M = floor(N/2)):
        prod_{i,j} (z_j - x_i)^{-4/k} prod_j (z_j - x_{N+1})^{(6-k)/k}
        prod_{i<j} (z_j - z_i)^{8/k}
    even family (count N - M):
        same with exponent (2-k)/k on (w_j - x_{N+1}).

Their normalisations Z_N and W_N are integrals over the ordered unbounded
simplex, computed after the substitution z_j = x_{N+1} + s_j/(1 - s_j)
onto the ordered unit simplex (handles the algebraic tail exactly).
They satisfy the identity

    B(2/k, 2/k)^{1{N odd}} * Z_N = prod_i (x_{N+1} - x_i)^{2/k} * W_N .

R_N is the pair-partition partition function entering the kappa=3
crossing formula; it satisfies a second-order PDE system (checked here by
central differences) and the limit crossing probability F_N combines Z_N
(or W_N) with R_N and explicit power-law prefactors.

All density evaluations live in log space; exp only at the final step.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .rng import generator

__all__ = [
    "MarkedConfig",
    "HittingPoints",
    "PartitionEval",
    "IdentityCheck",
    "LimitProbability",
    "NonIntegrableError",
    "QuadratureDisagreement",
    "StepCancellationError",
    "log_beta",
    "log_density_r",
    "log_density_rho",
    "normalize",
    "w1_closed_form_log",
    "check_partition_identity",
    "pair_partitions",
    "partition_sign",
    "eval_R",
    "bpz_residual",
    "limit_probability",
    "scaling_degree",
]

MAX_PAIR_INDICES = 12


class NonIntegrableError(ValueError):
    """Normalisation integral diverges for the requested exponents."""


class QuadratureDisagreement(RuntimeError):
    """Two expressions for the same quantity disagree beyond tolerance."""


class StepCancellationError(ValueError):
    """Finite-difference step too small: rounding noise dominates."""


@dataclass
class MarkedConfig:
    """Marked boundary points x_1 < ... < x_N < x_{N+1} plus kappa.

    ``collapsed=True`` encodes N coincident starting points: xs must then
    hold the common value with multiplicity N (the first density product
    degenerates to (z_j - x)^{-4N/kappa}).
    """

    kappa: float
    xs: np.ndarray
    x_next: float
    collapsed: bool = False

    def __post_init__(self):
        self.xs = np.atleast_1d(np.asarray(self.xs, dtype=float))
        self.x_next = float(self.x_next)
        if not (0.0 < self.kappa < 4.0):
            raise ValueError("kappa must lie in (0, 4)")
        if self.collapsed:
            if not np.all(self.xs == self.xs[0]):
                raise ValueError("collapsed config requires coincident points")
        else:
            if self.xs.size > 1 and not np.all(np.diff(self.xs) > 0):
                raise ValueError("marked points must be strictly increasing")
        if self.x_next <= self.xs.max():
            raise ValueError("x_next must exceed every marked point")

    @property
    def n_curves(self):
        return self.xs.size

    @property
    def n_odd(self):
        """Number of odd-family hitting points, floor(N/2)."""
        return self.xs.size // 2

    @property
    def n_even(self):
        return self.xs.size - self.xs.size // 2

    def count(self, parity):
        if parity == "odd":
            return self.n_odd
        if parity == "even":
            return self.n_even
        raise ValueError("parity must be 'odd' or 'even'")

    def boundary_exponent(self, parity):
        """Exponent on (z - x_next): (6-k)/k odd, (2-k)/k even."""
        k = self.kappa
        return (6.0 - k) / k if parity == "odd" else (2.0 - k) / k


@dataclass
class HittingPoints:
    """Ordered hitting points on (x_next, inf) of one parity family."""

    parity: str
    values: np.ndarray

    def __post_init__(self):
        if self.parity not in ("odd", "even"):
            raise ValueError("parity must be 'odd' or 'even'")
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.values.size > 1 and not np.all(np.diff(self.values) > 0):
            raise ValueError("hitting points must be strictly increasing")

    @property
    def count(self):
        return self.values.size


@dataclass
class PartitionEval:
    """Value of a normalisation integral, stored as log-magnitude + sign.

    ``std_error`` is the relative error estimate: a Monte-Carlo standard
    error for method='monte-carlo', a quadrature error bound for
    method='quadrature', and exactly 0 for closed forms.
    """

    log_value: float
    sign: int = 1
    std_error: float = 0.0
    method: str = "closed-form"

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        if self.method == "monte-carlo" and self.std_error == 0.0:
            raise ValueError("monte-carlo evaluations carry a positive std_error")

    @property
    def value(self):
        return self.sign * math.exp(self.log_value)


def log_beta(a, b):
    return float(gammaln(a) + gammaln(b) - gammaln(a + b))


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

def _log_density_many(xs, x_next, kappa, bexp, pts):
    """Unnormalised log density at many ordered tuples, -inf off support.

    pts has shape (n, m); returns shape (n,).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n, m = pts.shape
    out = np.full(n, -np.inf)
    ok = np.all(pts > x_next, axis=1)
    if m > 1:
        ok &= np.all(np.diff(pts, axis=1) > 0, axis=1)
    if not np.any(ok):
        return out
    p = pts[ok]
    val = (-4.0 / kappa) * np.log(p[:, :, None] - xs[None, None, :]).sum(axis=(1, 2))
    val += bexp * np.log(p - x_next).sum(axis=1)
    if m > 1:
        i, j = np.triu_indices(m, k=1)
        val += (8.0 / kappa) * np.log(p[:, j] - p[:, i]).sum(axis=1)
    out[ok] = val
    return out


def _log_density(cfg, parity, values):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    count = cfg.count(parity)
    if values.size != count:
        raise ValueError(f"{parity} family expects {count} points, got {values.size}")
    if count == 0:
        return 0.0
    return float(_log_density_many(cfg.xs, cfg.x_next, cfg.kappa,
                                   cfg.boundary_exponent(parity), values)[0])


def log_density_r(cfg, z):
    """Log of the unnormalised odd-family density at the tuple z."""
    vals = z.values if isinstance(z, HittingPoints) else z
    return _log_density(cfg, "odd", vals)


def log_density_rho(cfg, w):
    """Log of the unnormalised even-family density at the tuple w."""
    vals = w.values if isinstance(w, HittingPoints) else w
    return _log_density(cfg, "even", vals)


# ---------------------------------------------------------------------------
# normalisation integrals
# ---------------------------------------------------------------------------

def _check_integrable(cfg, parity):
    """Tail exponent of the outermost coordinate must be < -1."""
    k = cfg.kappa
    m = cfg.count(parity)
    if m == 0:
        return
    n = cfg.n_curves
    tail = (-4.0 * n + cfg.boundary_exponent(parity) * k + 8.0 * (m - 1)) / k
    if tail >= -1.0:
        raise NonIntegrableError(
            f"tail exponent {tail:.6g} >= -1 for parity {parity}")


def _log_integrand_s(cfg, parity, s):
    """Log integrand in simplex coordinates s, including the Jacobian."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    z = cfg.x_next + s / (1.0 - s)
    val = _log_density_many(cfg.xs, cfg.x_next, cfg.kappa,
                            cfg.boundary_exponent(parity), z)
    return val - 2.0 * np.log(1.0 - s).sum(axis=1)


def _probe_shift(cfg, parity, m, n_grid=40):
    """Log-scale shift from a coarse ordered grid (overflow guard)."""
    g = np.linspace(1e-4, 1 - 1e-4, n_grid)
    if m == 1:
        pts = g[:, None]
    else:
        grids = np.meshgrid(*([g] * m), indexing="ij")
        pts = np.stack([a.ravel() for a in grids], axis=1)
        pts = pts[np.all(np.diff(pts, axis=1) > 0, axis=1)]
    vals = _log_integrand_s(cfg, parity, pts)
    top = np.max(vals)
    if not np.isfinite(top):
        raise NonIntegrableError("log integrand not finite anywhere on the probe grid")
    return float(top)


_QUAD_OPTS = {"limit": 200}


def _normalize_quadrature(cfg, parity, m, epsrel):
    shift = _probe_shift(cfg, parity, m)

    def f1(s1):
        return math.exp(_log_integrand_s(cfg, parity, [[s1]])[0] - shift)

    def f2(s1):
        def inner(s2):
            return math.exp(_log_integrand_s(cfg, parity, [[s1, s2]])[0] - shift)
        val, _ = integrate.quad(inner, s1, 1.0, epsrel=epsrel, **_QUAD_OPTS)
        return val

    def f3(s1):
        def mid(s2):
            def inner(s3):
                return math.exp(
                    _log_integrand_s(cfg, parity, [[s1, s2, s3]])[0] - shift)
            val, _ = integrate.quad(inner, s2, 1.0, epsrel=epsrel, **_QUAD_OPTS)
            return val
        val, _ = integrate.quad(mid, s1, 1.0, epsrel=epsrel, **_QUAD_OPTS)
        return val

    outer = {1: f1, 2: f2, 3: f3}[m]
    val, err = integrate.quad(outer, 0.0, 1.0, epsrel=epsrel, **_QUAD_OPTS)
    if val <= 0:
        raise NonIntegrableError("quadrature returned a non-positive mass")
    rel = err / val + (0.0 if m == 1 else 10.0 * epsrel)
    return PartitionEval(log_value=shift + math.log(val), sign=1,
                         std_error=rel, method="quadrature")


def _normalize_monte_carlo(cfg, parity, m, budget, seed):
    log_mfact = float(gammaln(m + 1))
    block = 200_000
    n_done = 0
    shift = None
    acc_sum = 0.0
    acc_sq = 0.0
    bi = 0
    while n_done < budget:
        n = min(block, budget - n_done)
        rng = generator(seed, stream=bi)
        s = np.sort(rng.random((n, m)), axis=1)
        logw = _log_integrand_s(cfg, parity, s)
        if shift is None:
            shift = float(np.max(logw)) if np.any(np.isfinite(logw)) else 0.0
        w = np.exp(logw - shift)
        acc_sum += w.sum()
        acc_sq += (w * w).sum()
        n_done += n
        bi += 1
    mean = acc_sum / n_done
    var = max(acc_sq / n_done - mean * mean, 0.0)
    se = math.sqrt(var / n_done)
    if mean <= 0:
        raise NonIntegrableError("monte-carlo mass vanished on the support")
    return PartitionEval(
        log_value=shift + math.log(mean) - log_mfact, sign=1,
        std_error=max(se / mean, 1e-300), method="monte-carlo")


def normalize(cfg, parity, method="quadrature", budget=1_000_000, seed=0,
              epsrel=1e-10):
    """Normalisation integral of one density family (Z_N odd, W_N even).

    Quadrature (nested adaptive, count <= 3) or Monte Carlo with
    ordered-uniform proposals and importance reweighting.  Count 0
    returns exactly 1.
    """
    m = cfg.count(parity)
    if m == 0:
        return PartitionEval(log_value=0.0, sign=1, std_error=0.0,
                             method="closed-form")
    _check_integrable(cfg, parity)
    if method == "quadrature":
        if m > 3:
            raise ValueError("quadrature supports at most 3 hitting points; "
                             "use method='monte-carlo'")
        eff = epsrel if m < 3 else max(epsrel, 1e-7)
        return _normalize_quadrature(cfg, parity, m, eff)
    if method == "monte-carlo":
        return _normalize_monte_carlo(cfg, parity, m, int(budget), seed)
    raise ValueError("method must be 'quadrature' or 'monte-carlo'")


def w1_closed_form_log(x1, x2, kappa):
    """log W_1 = log B(2/k, 2/k) - (2/k) log(x2 - x1)."""
    return log_beta(2.0 / kappa, 2.0 / kappa) - (2.0 / kappa) * math.log(x2 - x1)


@dataclass
class IdentityCheck:
    """Relative mismatch of the two-normalisation identity."""

    rel_err: float
    rel_sigma: float
    log_lhs: float
    log_rhs: float

    @property
    def passes_3sigma(self):
        return self.rel_err <= max(3.0 * self.rel_sigma, 1e-10)


def check_partition_identity(cfg, method="quadrature", budget=1_000_000,
                             seed=0):
    """Check B^{1{N odd}} Z_N = prod (x_next - x_i)^{2/k} W_N.

    Returns the relative error together with the combined relative
    standard error of the two evaluations.
    """
    k = cfg.kappa
    z = normalize(cfg, "odd", method=method, budget=budget, seed=seed)
    w = normalize(cfg, "even", method=method, budget=budget, seed=seed + 1)
    lhs = z.log_value
    if cfg.n_curves % 2 == 1:
        lhs += log_beta(2.0 / k, 2.0 / k)
    rhs = w.log_value + (2.0 / k) * np.log(cfg.x_next - cfg.xs).sum()
    rel = abs(math.expm1(lhs - rhs))
    sigma = math.hypot(z.std_error, w.std_error)
    return IdentityCheck(rel_err=rel, rel_sigma=sigma, log_lhs=lhs, log_rhs=rhs)


def scaling_degree(cfg, parity):
    """Homogeneity degree of the normalisation under x -> lambda x."""
    k = cfg.kappa
    m = cfg.count(parity)
    n = cfg.n_curves
    return (-4.0 * n * m / k + m * cfg.boundary_exponent(parity)
            + (8.0 / k) * m * (m - 1) / 2.0 + m)


# ---------------------------------------------------------------------------
# pair-partition sums
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def pair_partitions(n):
    """All pair partitions of {1, ..., 2n}: tuples of (a, b) with a < b,
    generated by always pairing the smallest unpaired index."""
    if n == 0:
        return ((),)
    out = []

    def rec(remaining, acc):
        if not remaining:
            out.append(tuple(acc))
            return
        a = remaining[0]
        for i in range(1, len(remaining)):
            b = remaining[i]
            rec(remaining[1:i] + remaining[i + 1:], acc + [(a, b)])

    rec(tuple(range(1, 2 * n + 1)), [])
    return tuple(out)


def partition_sign(pairs):
    """Sign of prod_{i<j} (a_i-a_j)(a_i-b_j)(b_i-a_j)(b_i-b_j), integers only."""
    neg = 0
    n = len(pairs)
    for i in range(n):
        ai, bi = pairs[i]
        for j in range(i + 1, n):
            aj, bj = pairs[j]
            for d in (ai - aj, ai - bj, bi - aj, bi - bj):
                if d < 0:
                    neg += 1
    return -1 if neg % 2 else 1


def eval_R(ys, y_next):
    """Pair-partition sum R_N; vectorised over leading axes of ys/y_next.

    Even N=2m: signed sum over pairings of {1..2m} of
    prod (2Y - y_a - y_b)/(y_b - y_a), times prod_k (Y - y_k)^{-1/2}.
    Odd N=2m+1: pairings of {1..2m+2} with index 2m+2 standing for Y; the
    pair containing it is excluded from the product factor.
    """
    ys = np.asarray(ys, dtype=float)
    y_next = np.asarray(y_next, dtype=float)
    n = ys.shape[-1]
    if n > MAX_PAIR_INDICES:
        raise ValueError(
            f"pair-partition enumeration limited to {MAX_PAIR_INDICES} points "
            "(double-factorial growth); no closed-form path beyond")
    scalar = ys.ndim == 1 and y_next.ndim == 0
    ys2 = ys.reshape(-1, n)
    yn2 = np.broadcast_to(y_next, ys.shape[:-1] or (1,)).reshape(-1).astype(float)
    if np.any(yn2[..., None] <= ys2):
        raise ValueError("requires y_1 < ... < y_N < y_next")
    if n % 2 == 0:
        m = n // 2
        parts = pair_partitions(m)
        ext = ys2
    else:
        m = (n + 1) // 2
        parts = pair_partitions(m)
        ext = np.concatenate([ys2, yn2[:, None]], axis=1)
    total = np.zeros(ys2.shape[0])
    yn = yn2
    for pairs in parts:
        term = np.ones(ys2.shape[0]) * partition_sign(pairs)
        for (a, b) in pairs:
            if n % 2 == 1 and b == n + 1:
                continue
            ya = ext[:, a - 1]
            yb = ext[:, b - 1]
            term = term * (2.0 * yn - ya - yb) / (yb - ya)
        total += term
    pref = np.prod(yn2[:, None] - ys2, axis=1) ** -0.5
    out = pref * total
    return float(out[0]) if scalar else out.reshape(ys.shape[:-1])


# ---------------------------------------------------------------------------
# PDE residual and limit probability
# ---------------------------------------------------------------------------

def bpz_residual(ys, y_next, i, h=1e-4):
    """Normalised central-difference residual of the second-order PDE at
    the i-th coordinate (1-based, i <= N), with kappa = 3 and weight 1/2:

        (3/2) d^2_{ii} R + sum_{j != i, j <= N+1} 2/(y_j - y_i) d_j R
        - sum_{j != i, j <= N} (y_j - y_i)^{-2} R
        - (1/8) (y_{N+1} - y_i)^{-2} R  = 0 ,

    divided by |R|.  Raises StepCancellationError when rounding noise
    dominates the requested step.
    """
    ys = np.asarray(ys, dtype=float)
    n = ys.size
    if not 1 <= i <= n:
        raise ValueError("index i must satisfy 1 <= i <= N")
    if h <= 0:
        raise ValueError("step must be positive")
    idx = i - 1

    def at(shift_j, delta):
        y = ys.copy()
        yn = y_next
        if shift_j < n:
            y[shift_j] += delta
        else:
            yn += delta
        return eval_R(y, yn)

    r0 = eval_R(ys, y_next)
    d2 = (at(idx, h) - 2.0 * r0 + at(idx, -h)) / h**2
    res = 1.5 * d2
    cancel = 6.0 * np.finfo(float).eps * abs(r0) / h**2
    full = np.concatenate([ys, [y_next]])
    for j in range(n + 1):
        if j == idx:
            continue
        dj = (at(j, h) - at(j, -h)) / (2.0 * h)
        coef = 2.0 / (full[j] - full[idx])
        res += coef * dj
        cancel += abs(coef) * np.finfo(float).eps * abs(r0) / h
    for j in range(n):
        if j == idx:
            continue
        res -= r0 / (ys[j] - ys[idx]) ** 2
    res -= 0.125 * r0 / (y_next - ys[idx]) ** 2
    if cancel > 10.0 * abs(res) and cancel > 1e-5 * abs(r0):
        raise StepCancellationError(
            f"cancellation floor {cancel:.3e} dominates residual at h={h:g}")
    return float(res / abs(r0))


@dataclass
class LimitProbability:
    """Crossing-probability limit evaluated through both normalisations."""

    value: float
    log_via_odd: float
    log_via_even: float
    rel_diff: float


def limit_probability(ys, y_next, kappa=3.0, method="quadrature",
                      budget=1_000_000, seed=0):
    """Limit of the all-interfaces-reach-the-free-arc probability, F_N.

    Evaluates both equivalent expressions (through Z_N and through W_N),
    checks agreement within the combined numerical error, and returns
    their log-average.  The pair-partition function R_N is specific to
    kappa = 3.
    """
    if abs(kappa - 3.0) > 1e-12:
        raise ValueError("the pair-partition normalisation is defined at kappa=3")
    ys = np.asarray(ys, dtype=float)
    n = ys.size
    y_next = float(y_next)
    if n > 1 and not np.all(np.diff(ys) > 0):
        raise ValueError("limit probability needs distinct ordered marked points")
    r = eval_R(ys, y_next)
    if r <= 0:
        raise ValueError("pair-partition sum must be positive on ordered configs")
    cfg = MarkedConfig(kappa=kappa, xs=ys, x_next=y_next)
    z = normalize(cfg, "odd", method=method, budget=budget, seed=seed)
    w = normalize(cfg, "even", method=method, budget=budget, seed=seed + 1)
    lb = log_beta(2.0 / kappa, 2.0 / kappa)
    if n > 1:
        i, j = np.triu_indices(n, k=1)
        log_vdm = np.log(ys[j] - ys[i]).sum()
    else:
        log_vdm = 0.0
    log_gaps = np.log(y_next - ys).sum()
    m = n // 2
    l_odd = (-m * lb + (2.0 / kappa) * log_vdm
             + ((kappa - 6.0) / (2.0 * kappa)) * log_gaps
             + z.log_value - math.log(r))
    l_even = (-(n - m) * lb + (2.0 / kappa) * log_vdm
              + ((kappa - 2.0) / (2.0 * kappa)) * log_gaps
              + w.log_value - math.log(r))
    rel = abs(math.expm1(l_odd - l_even))
    tol = max(1e-8, 3.0 * (z.std_error + w.std_error))
    if rel > tol:
        raise QuadratureDisagreement(
            f"the two normalisation routes differ by {rel:.3e} (> {tol:.3e})")
    return LimitProbability(
        value=math.exp(0.5 * (l_odd + l_even)),
        log_via_odd=l_odd, log_via_even=l_even, rel_diff=rel)
