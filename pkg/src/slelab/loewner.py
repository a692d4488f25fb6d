"""Deterministic Loewner-chain engine in half-plane-capacity time.

The chordal Loewner equation

    d g_t(z) / dt = 2 / (g_t(z) - W_t),    g_0(z) = z,

is discretised with one elementary conformal map per grid step.  Within a
step the driver is frozen at its midpoint value Wb, for which the equation
integrates exactly to

    g(z) = Wb + sqrt((z - Wb)^2 + 4 dt),

the hydrodynamically normalised map removing a vertical slit of half-plane
capacity 2*dt rooted at Wb.  The forward flow, the traced curve and the
inverse map are all compositions of these elementary maps and their
analytic inverses, so forward/inverse round trips are exact to rounding
and the hull capacity after k steps is exactly 2*t_k.

All times are half-plane-capacity times; no other parametrisation is used.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

__all__ = [
    "DrivingPath",
    "BoundaryFlow",
    "InteriorFlow",
    "TracePolyline",
    "ResolutionError",
    "IllConditionedInverse",
    "evolve_point",
    "landing_point",
    "trace_curve",
    "trace_tip",
    "forward_map",
    "invert_map",
]

SWALLOW_EPS_SCALE = 1e-6  # swallowing threshold = scale * (1 + |z|)
NEARFIELD_FACTOR = 10.0   # substep when |g - W| < NEARFIELD_FACTOR * sqrt(dt)
MAX_SUBSTEPS = 100_000


class ResolutionError(RuntimeError):
    """Step-size collapse near a swallowing event.

    Carries the last capacity time that could be resolved.
    """

    def __init__(self, message, last_time):
        super().__init__(f"{message} (last valid time {last_time:.12g})")
        self.last_time = last_time


class IllConditionedInverse(RuntimeError):
    """Inverse map requested too close to the slit image."""

    def __init__(self, message, distance):
        super().__init__(f"{message} (distance estimate {distance:.3e})")
        self.distance = distance


@dataclass
class DrivingPath:
    """Sampled driving function on a strictly increasing capacity-time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.ascontiguousarray(self.times, dtype=float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times and values must be matching 1-d arrays")
        if self.times.size < 1 or self.times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("driver values must be finite")

    def __len__(self):
        return self.times.size

    @property
    def horizon(self):
        return float(self.times[-1])

    def step_midpoints(self):
        """Frozen driver value and capacity increment for each step."""
        wbar = 0.5 * (self.values[1:] + self.values[:-1])
        dts = np.diff(self.times)
        return wbar, dts

    def index_of_time(self, t, rtol=1e-9):
        """Grid index of capacity time t (must lie on the grid)."""
        k = int(np.searchsorted(self.times, t))
        for j in (k - 1, k, k + 1):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= rtol * (1.0 + abs(t)):
                return j
        raise ValueError(f"time {t} not on the capacity grid")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,w\n")
            for t, w in zip(self.times, self.values):
                fh.write(f"{t:.17g},{w:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        return cls(times=data[:, 0], values=data[:, 1])


@dataclass
class BoundaryFlow:
    """Flow g_t(x) of a real boundary point, with swallowing record."""

    point: float
    times: np.ndarray
    images: np.ndarray
    swallowed_at: Optional[float] = None

    @property
    def terminated(self):
        return self.swallowed_at is not None

    def image_at(self, t):
        k = int(np.searchsorted(self.times, t * (1 + 1e-12), side="right")) - 1
        return self.images[max(k, 0)]


@dataclass
class InteriorFlow:
    """Flow g_t(z) of an interior point on the driving grid."""

    point: complex
    times: np.ndarray
    images: np.ndarray
    swallowed_at: Optional[float] = None


@dataclass
class TracePolyline:
    """Polyline approximation of the Loewner trace, capacity-parametrised."""

    vertices: np.ndarray
    capacities: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=complex)
        self.capacities = np.ascontiguousarray(self.capacities, dtype=float)
        if self.vertices.shape != self.capacities.shape:
            raise ValueError("vertices and capacities must match")

    @property
    def tip(self):
        return complex(self.vertices[-1])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,x,y\n")
            for t, v in zip(self.capacities, self.vertices):
                fh.write(f"{t:.17g},{v.real:.17g},{v.imag:.17g}\n")


# ---------------------------------------------------------------------------
# elementary slit maps
# ---------------------------------------------------------------------------

@njit(cache=True)
def _forward_step(z, wbar, dt):
    """Exact frozen-driver forward map z -> wbar + sqrt((z-wbar)^2 + 4 dt)."""
    u = z - wbar
    w = np.sqrt(u * u + 4.0 * dt)
    if u.real > 0.0:
        if w.real < 0.0:
            w = -w
    elif u.real < 0.0:
        if w.real > 0.0:
            w = -w
    else:
        if w.imag < 0.0:
            w = -w
    return wbar + w


@njit(cache=True)
def _inverse_step(w, wbar, dt):
    """Analytic inverse w -> wbar + sqrt((w-wbar)^2 - 4 dt)."""
    u = w - wbar
    z = np.sqrt(u * u - 4.0 * dt)
    if u.real > 0.0:
        if z.real < 0.0:
            z = -z
    elif u.real < 0.0:
        if z.real > 0.0:
            z = -z
    else:
        if z.imag < 0.0:
            z = -z
    return wbar + z


@njit(cache=True)
def _pullback(wbars, dts, k, w):
    """Apply inverse steps k-1, ..., 0 to the point w."""
    z = w
    for j in range(k - 1, -1, -1):
        z = _inverse_step(z, wbars[j], dts[j])
    return z


@njit(cache=True)
def _pullback_many(wbars, dts, ks, ws):
    out = np.empty(ws.size, dtype=np.complex128)
    for i in range(ws.size):
        out[i] = _pullback(wbars, dts, ks[i], ws[i])
    return out


@njit(cache=True)
def _push_forward(wbars, dts, k, z):
    """Apply forward steps 0, ..., k-1 to the point z."""
    g = z
    for j in range(k):
        g = _forward_step(g, wbars[j], dts[j])
    return g


@njit(cache=True)
def _evolve_real(times, values, wbars, dts, x0, eps, nearfield, max_sub):
    """Flow a real point with adaptive substepping near the driver.

    Returns (images on the grid, swallow_time or -1, status) where status
    is 0 on success, 1 when the substep budget collapsed before resolving
    the swallowing time.
    """
    n = times.size
    images = np.empty(n)
    images[0] = x0
    g = x0
    swallow_t = -1.0
    status = 0
    for k in range(n - 1):
        if swallow_t >= 0.0:
            images[k + 1] = g
            continue
        dt = dts[k]
        d = abs(g - wbars[k])
        if d < nearfield * np.sqrt(dt):
            target = (d / nearfield) ** 2
            m = int(np.ceil(dt / max(target, dt * 1e-12)))
            if m > max_sub:
                m = max_sub
                status = 1
        else:
            m = 1
        h = dt / m
        w0 = values[k]
        w1 = values[k + 1]
        for j in range(m):
            frac = (j + 0.5) / m
            wb = w0 + (w1 - w0) * frac
            u = g - wb
            g = wb + np.sign(u) * np.sqrt(u * u + 4.0 * h)
            if abs(g - wb) < eps:
                swallow_t = times[k] + (j + 1) * h
                break
        images[k + 1] = g
    return images, swallow_t, status


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def evolve_point(driving, z, eps_swallow=None):
    """Flow a point of the closed half-plane along the Loewner chain.

    Real points use adaptive substepping with a linearly interpolated
    driver near the singularity and carry a swallowing record; interior
    points use the canonical per-step composition (exactly invertible by
    :func:`invert_map`).
    """
    z = complex(z)
    if z.imag < 0:
        raise ValueError("point must lie in the closed upper half-plane")
    if eps_swallow is None:
        eps_swallow = SWALLOW_EPS_SCALE * (1.0 + abs(z))
    wbars, dts = driving.step_midpoints()

    if z.imag == 0.0:
        x0 = z.real
        if x0 == driving.values[0]:
            raise ValueError("real point coincides with the initial driver value")
        images, swallow_t, status = _evolve_real(
            driving.times, driving.values, wbars, dts, x0, eps_swallow,
            NEARFIELD_FACTOR, MAX_SUBSTEPS,
        )
        if status == 1 and swallow_t < 0.0:
            raise ResolutionError("substep budget exhausted near swallowing",
                                  float(driving.times[-1]))
        return BoundaryFlow(
            point=x0,
            times=driving.times.copy(),
            images=images,
            swallowed_at=None if swallow_t < 0 else float(swallow_t),
        )

    n = len(driving)
    images = np.empty(n, dtype=complex)
    images[0] = z
    g = z
    swallow_t = None
    for k in range(n - 1):
        if swallow_t is None:
            g = _forward_step(g, wbars[k], dts[k])
            if not np.isfinite(g):
                raise ResolutionError("non-finite flow value", float(driving.times[k]))
            if abs(g - driving.values[k + 1]) < eps_swallow:
                swallow_t = float(driving.times[k + 1])
        images[k + 1] = g
    return InteriorFlow(point=z, times=driving.times.copy(), images=images,
                        swallowed_at=swallow_t)


def trace_tip(driving, k=None):
    """Trace point at grid index k (default: final time), via pullback."""
    wbars, dts = driving.step_midpoints()
    if k is None:
        k = len(driving) - 1
    w = complex(driving.values[k])
    return complex(_pullback(wbars, dts, k, w))


def trace_curve(driving, n_vertices=None):
    """Polyline approximating the Loewner trace by backward composition.

    Vertex at grid time t_k is the pullback of the driver value W(t_k)
    through the first k inverse slit maps.  `n_vertices` subsamples the
    grid (endpoints always kept); cost is O(n_vertices * len(grid)).
    """
    wbars, dts = driving.step_midpoints()
    n = len(driving)
    if n_vertices is None or n_vertices >= n:
        ks = np.arange(n)
    else:
        ks = np.unique(np.linspace(0, n - 1, max(n_vertices, 2)).round().astype(int))
    ws = driving.values[ks].astype(complex)
    verts = _pullback_many(wbars, dts, ks, ws)
    if not np.all(np.isfinite(verts)):
        bad = int(np.argmax(~np.isfinite(verts)))
        raise ResolutionError(f"non-finite trace vertex at step {ks[bad]}",
                              float(driving.times[ks[bad]]))
    verts.imag = np.maximum(verts.imag, 0.0)  # clip rounding noise at the axis
    return TracePolyline(vertices=verts, capacities=driving.times[ks].copy())


@njit(cache=True)
def _min_gap(values, wbars, dts, x0, stop_below, nearfield, max_sub):
    """Minimum |g - driver| along the re-evolved flow of a real point.

    Early-exits once the running minimum drops below ``stop_below``.
    """
    g = x0
    mg = 1e300
    for k in range(dts.size):
        dt = dts[k]
        d = abs(g - wbars[k])
        if nearfield > 0.0 and d < nearfield * np.sqrt(dt):
            target = (d / nearfield) ** 2
            m = int(np.ceil(dt / max(target, dt * 1e-12)))
            if m > max_sub:
                m = max_sub
        else:
            m = 1
        h = dt / m
        w0 = values[k]
        w1 = values[k + 1]
        for j in range(m):
            wb = w0 + (w1 - w0) * (j + 0.5) / m
            u = g - wb
            g = wb + np.sign(u) * np.sqrt(u * u + 4.0 * h)
            gap = abs(g - wb)
            if gap < mg:
                mg = gap
                if mg < stop_below:
                    return mg
    return mg


def landing_point(driving, a, iters=60, calibration=2.0):
    """Landing coordinate of a chain stopped when it landed on (a, inf).

    Every boundary point between the seed and the landing point is
    swallowed at the landing time and no point beyond it is, so the
    landing coordinate is the boundary of the swallowed zone.  The
    swallowing indicator re-evolves candidate points through the
    recorded chain; its resolution floor is set by the record itself, so
    the decision threshold is self-calibrated to ``calibration`` times
    the re-evolved minimum gap of the endpoint a (a surely swallowed
    point).  Bisection then locates the zone boundary.
    """
    wbars, dts = driving.step_midpoints()
    m_a = _min_gap(driving.values, wbars, dts, a, 0.0,
                   NEARFIELD_FACTOR, MAX_SUBSTEPS)
    thr = calibration * m_a

    def swallowed(x):
        return _min_gap(driving.values, wbars, dts, x, thr,
                        NEARFIELD_FACTOR, MAX_SUBSTEPS) < thr

    span = 1.0 + abs(a) + float(np.max(np.abs(driving.values)))
    hi = a + span
    guard = 0
    while swallowed(hi):
        hi = a + 2.0 * (hi - a)
        guard += 1
        if guard > 200:
            raise ResolutionError("no unswallowed point right of the interval",
                                  driving.horizon)
    lo = a
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if swallowed(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def forward_map(driving, t, z):
    """Canonical forward map g_t(z) (per-step composition), t on the grid."""
    wbars, dts = driving.step_midpoints()
    k = driving.index_of_time(t)
    return complex(_push_forward(wbars, dts, k, complex(z)))


def invert_map(driving, t, w, min_distance=1e-12):
    """Inverse map g_t^{-1}(w) by composing per-step analytic inverses.

    For w in the open upper half-plane the round trip through
    :func:`forward_map` is exact to rounding.  Points too close to the
    slit image (branch point of some step) are rejected with a distance
    estimate.
    """
    w = complex(w)
    wbars, dts = driving.step_midpoints()
    k = driving.index_of_time(t)
    z = w
    for j in range(k - 1, -1, -1):
        gap = abs((z - wbars[j]) ** 2 - 4.0 * dts[j])
        if gap < min_distance * 4.0 * dts[j]:
            raise IllConditionedInverse(
                f"point within branch-point tolerance at step {j}", float(np.sqrt(gap)))
        z = _inverse_step(z, wbars[j], dts[j])
    return complex(z)
