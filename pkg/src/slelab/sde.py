"""Stochastic driver integrator with force points and hit detection.

Euler-Maruyama integration of

    dW = sqrt(kappa) dB + sum_j rho_j dt / (W - V_j),
    dV_j = 2 dt / (V_j - W),

in half-plane-capacity time.  Force-point images advance by the exact
frozen-driver slit map within each substep (they are boundary flows of
the same chain), which keeps V^L <= W <= V^R by construction.  Substeps
shrink near the drift singularity: per-substep drift displacement is
capped at DRIFT_FRAC * d and the diffusion scale at DIFF_FRAC * d, where
d = min_j |W - V_j|.

A run ends at its stopping rule or when the driver collides with a
non-repulsive force image within a scale-aware threshold.  Collision with
the left endpoint of a target interval is how "the trace lands on (a, b)"
is detected: the landing swallows every boundary point between the seed
and the landing point, driving their images into the driver.  Repulsive
points (rho > 0) are never swallowed and are exempt from collision
detection; a run seeded arbitrarily close to one (the prime-end
encoding) opens the gap geometrically under the capped substeps.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numba import njit

from . import loewner
from .loewner import DrivingPath
from .rng import replica_seeds

__all__ = [
    "ForcePointSpec",
    "StopRule",
    "SleRunConfig",
    "HitRecord",
    "SleRun",
    "ForceCollisionError",
    "IntegrationError",
    "sample_driver",
    "sample_flow_line_marginal",
    "flow_line_forces",
]

DRIFT_FRAC = 0.1       # per-substep drift displacement cap, fraction of min gap
DIFF_FRAC = 0.1        # per-substep diffusion scale cap, fraction of min gap
COLL_EPS_SCALE = 1e-6  # collision threshold = scale * (1 + |location|)
PRIME_END_SCALE = 1e-9  # offset of the left prime end below the start
DEFAULT_CAP_STEPS = 8_000_000

_STATUS_HORIZON = 0
_STATUS_COLLISION = 1
_STATUS_RADIUS = 2
_STATUS_DT_FLOOR = 3
_STATUS_CAP = 4
_STATUS_NONFINITE = 5


class ForceCollisionError(RuntimeError):
    """Driver collided with a force point that cannot absorb the curve."""


class IntegrationError(RuntimeError):
    """Step budget or step floor exhausted before any stopping rule fired."""


@dataclass(frozen=True)
class ForcePointSpec:
    """One force point: side relative to the start, location, weight rho.

    ``location=None`` with ``side='left'`` encodes the prime end
    immediately left of the start; it is realised as a regular left force
    point offset by PRIME_END_SCALE * scale below the start.
    """

    side: str
    location: Optional[float]
    weight: float

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if self.location is None and self.side != "left":
            raise ValueError("prime-end encoding is only defined on the left")

    @classmethod
    def left_prime_end(cls, weight):
        return cls(side="left", location=None, weight=weight)


@dataclass(frozen=True)
class StopRule:
    """Stopping rule: fixed-horizon, hit-interval(a, b), or hit-radius."""

    kind: str
    a: float = np.nan
    b: float = np.inf
    radius: float = np.inf

    def __post_init__(self):
        if self.kind not in ("fixed-horizon", "hit-interval", "hit-radius"):
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if self.kind == "hit-interval" and not np.isfinite(self.a):
            raise ValueError("hit-interval requires a finite left endpoint")
        if self.kind == "hit-radius" and not np.isfinite(self.radius):
            raise ValueError("hit-radius requires a finite radius")

    @classmethod
    def fixed_horizon(cls):
        return cls(kind="fixed-horizon")

    @classmethod
    def hit_interval(cls, a, b=np.inf):
        return cls(kind="hit-interval", a=float(a), b=b)

    @classmethod
    def hit_radius(cls, radius):
        return cls(kind="hit-radius", radius=float(radius))


@dataclass
class SleRunConfig:
    """Run configuration for one driver sample.

    ``max_radius`` is an additional cutoff on a hull-diameter proxy
    (driver oscillation plus 2*sqrt(2t)); it can be combined with any
    stopping rule.
    """

    kappa: float
    start: float
    forces: List[ForcePointSpec]
    dt: float
    max_time: float
    stop: StopRule = field(default_factory=StopRule.fixed_horizon)
    max_radius: float = np.inf
    eps_coll_scale: float = COLL_EPS_SCALE
    cap_steps: int = DEFAULT_CAP_STEPS
    grow_dt: bool = False

    def __post_init__(self):
        if not (0.0 < self.kappa < 4.0):
            raise ValueError("kappa must lie in (0, 4)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_time <= 0:
            raise ValueError("max_time must be positive")
        lefts, rights = [], []
        for f in self.forces:
            loc = f.location
            if loc is None:
                continue
            if f.side == "left":
                if loc > self.start:
                    raise ValueError("left force point lies right of the start")
                lefts.append(loc)
            else:
                if loc < self.start:
                    raise ValueError("right force point lies left of the start")
                rights.append(loc)
        if lefts != sorted(lefts, reverse=True):
            raise ValueError("left force points must be ordered away from the start")
        if rights != sorted(rights):
            raise ValueError("right force points must be ordered away from the start")

    @property
    def scale(self):
        locs = [abs(f.location) for f in self.forces if f.location is not None]
        return 1.0 + max([abs(self.start)] + locs)


@dataclass
class HitRecord:
    """Outcome of a stopping rule firing."""

    hit_time: float
    hit_point: Optional[float]
    reason: str
    driver_at_hit: float
    absorbed_at: Optional[float] = None

    def as_dict(self):
        return {
            "hit_time": self.hit_time,
            "hit_point": self.hit_point,
            "reason": self.reason,
            "driver_at_hit": self.driver_at_hit,
            "absorbed_at": self.absorbed_at,
        }


@dataclass
class SleRun:
    """Driver path, force-point image paths, and the stopping record."""

    config: SleRunConfig
    seed: int
    driving: DrivingPath
    force_locations: np.ndarray   # initial locations, marker entries included
    force_weights: np.ndarray
    force_paths: np.ndarray       # shape (len(grid), n_forces)
    hit: Optional[HitRecord]
    status: str

    def terminal_images(self):
        """Images of the force locations at the final time."""
        return self.force_paths[-1].copy()

    def trace(self, n_vertices=None):
        return loewner.trace_curve(self.driving, n_vertices=n_vertices)

    def tip(self):
        return loewner.trace_tip(self.driving)

    def images_at_times(self, times):
        """Row indices of the last grid point at or before each time."""
        idx = np.searchsorted(self.driving.times, np.asarray(times), side="right") - 1
        return np.clip(idx, 0, len(self.driving) - 1)

    def manifest(self):
        d = {
            "seed": int(self.seed),
            "kappa": self.config.kappa,
            "forces": [
                {"location": float(l), "weight": float(r)}
                for l, r in zip(self.force_locations, self.force_weights)
            ],
            "status": self.status,
        }
        if self.hit is not None:
            d.update(self.hit.as_dict())
        else:
            d.update({"hit_time": None, "hit_point": None, "reason": None})
        return d


@njit(cache=True)
def _drive(seed, kappa, w0, v0, rho, sides, eps, dt_base, max_time,
           radius, cap, drift_frac, diff_frac, span, grow_dt):
    np.random.seed(seed)
    nf = v0.size
    size = 65536
    ts = np.empty(size)
    ws = np.empty(size)
    vs = np.empty((size, nf))
    t = 0.0
    W = w0
    V = v0.copy()
    ts[0] = 0.0
    ws[0] = W
    for j in range(nf):
        vs[0, j] = V[j]
    n = 1
    status = _STATUS_HORIZON
    coll = -1
    wdev = 0.0
    sqk = np.sqrt(kappa)
    # step floor: below this dt the nearest non-repulsive gap is already
    # inside its collision threshold, so reaching it means detection failed
    eps_min = 1e300
    for j in range(nf):
        if rho[j] <= 0.0 and eps[j] < eps_min:
            eps_min = eps[j]
    dt_floor = 0.0
    if eps_min < 1e300:
        dt_floor = 0.01 * (diff_frac * eps_min) ** 2 / kappa
    # micro-steps below the time resolution ulp(t) are merged into one
    # recorded row (pending buffer); the dynamics only ever use dt directly
    pend = 0.0
    while t + pend < max_time:
        # collision detection on non-repulsive points
        for j in range(nf):
            if rho[j] <= 0.0 and abs(W - V[j]) < eps[j]:
                coll = j
                break
        if coll >= 0:
            status = _STATUS_COLLISION
            break
        dmin = 1e300
        dmin_att = 1e300
        drift = 0.0
        for j in range(nf):
            gap = W - V[j]
            agap = abs(gap)
            if agap < dmin:
                dmin = agap
            if rho[j] <= 0.0 and agap < dmin_att:
                dmin_att = agap
            if rho[j] != 0.0:
                drift += rho[j] / gap
        dt = dt_base
        if nf > 0:
            if grow_dt and dmin < 1e299:
                # far from every force point the dynamics evolve on the
                # capacity scale dmin^2: step proportionally (keeps the
                # relative discretisation error scale-invariant)
                f = (dmin / span) ** 2
                if f > 1.0:
                    if f > 1e8:
                        f = 1e8
                    dt = dt_base * f
            adrift = abs(drift)
            if adrift > 0.0:
                cap_drift = drift_frac * dmin / adrift
                if cap_drift < dt:
                    dt = cap_drift
            cap_diff = (diff_frac * dmin) ** 2 / kappa
            if cap_diff < dt:
                dt = cap_diff
            if dt < dt_floor and dmin_att <= dmin * 1.0000001:
                status = _STATUS_DT_FLOOR
                break
        rem = max_time - (t + pend)
        if rem - dt < 0.5 * dt:
            dt = rem
        xi = np.random.normal()
        Wn = W + drift * dt + sqk * np.sqrt(dt) * xi
        wb = 0.5 * (W + Wn)
        for j in range(nf):
            u = V[j] - wb
            V[j] = wb + sides[j] * np.sqrt(u * u + 4.0 * dt)
        W = Wn
        pend += dt
        if not np.isfinite(W):
            status = _STATUS_NONFINITE
            break
        if pend >= t * 4e-13:
            t2 = t + pend
            if t2 <= ts[n - 1]:
                t2 = np.nextafter(ts[n - 1], 1e308)
            if n >= size:
                size *= 2
                ts2 = np.empty(size)
                ws2 = np.empty(size)
                vs2 = np.empty((size, nf))
                ts2[:n] = ts[:n]
                ws2[:n] = ws[:n]
                vs2[:n] = vs[:n]
                ts, ws, vs = ts2, ws2, vs2
            ts[n] = t2
            ws[n] = W
            for j in range(nf):
                vs[n, j] = V[j]
            n += 1
            t = t2
            pend = 0.0
            if n >= cap:
                status = _STATUS_CAP
                break
        dev = abs(W - w0)
        if dev > wdev:
            wdev = dev
        if np.isfinite(radius) and wdev + 2.0 * np.sqrt(2.0 * (t + pend)) >= radius:
            status = _STATUS_RADIUS
            break
    if pend > 0.0:
        t2 = t + pend
        if t2 <= ts[n - 1]:
            t2 = np.nextafter(ts[n - 1], 1e308)
        if n >= size:
            size += 2
            ts2 = np.empty(size)
            ws2 = np.empty(size)
            vs2 = np.empty((size, nf))
            ts2[:n] = ts[:n]
            ws2[:n] = ws[:n]
            vs2[:n] = vs[:n]
            ts, ws, vs = ts2, ws2, vs2
        ts[n] = t2
        ws[n] = W
        for j in range(nf):
            vs[n, j] = V[j]
        n += 1
    return ts[:n], ws[:n], vs[:n], status, coll


def _resolve_forces(config):
    """Locations, weights, sides, plus stop-marker bookkeeping."""
    scale = config.scale
    locs, weights, sides = [], [], []
    for f in config.forces:
        if f.location is None:
            locs.append(config.start - PRIME_END_SCALE * scale)
        else:
            locs.append(float(f.location))
        weights.append(float(f.weight))
        sides.append(-1.0 if f.side == "left" else 1.0)
    if config.stop.kind == "hit-interval":
        a = float(config.stop.a)
        have_a = any(s > 0 and l == a for l, s in zip(locs, sides))
        if not have_a:
            locs.append(a)
            weights.append(0.0)
            sides.append(1.0)
        if np.isfinite(config.stop.b):
            locs.append(float(config.stop.b))
            weights.append(0.0)
            sides.append(1.0)
    return np.array(locs), np.array(weights), np.array(sides)


def sample_driver(config, seed):
    """Integrate one driver path; returns an :class:`SleRun`.

    With ``stop=hit-interval(a, b)`` the hit is detected as the first
    swallowing of a boundary point of [a, b); the landing coordinate is
    read off as the trace tip at the stopping time.
    """
    locs, weights, sides = _resolve_forces(config)
    eps = config.eps_coll_scale * (1.0 + np.abs(locs))
    radius = config.max_radius
    if config.stop.kind == "hit-radius":
        radius = min(radius, config.stop.radius)
    ts, ws, vs, status, coll = _drive(
        np.uint32(seed), config.kappa, config.start, locs, weights, sides,
        eps, config.dt, config.max_time, radius, config.cap_steps,
        DRIFT_FRAC, DIFF_FRAC, config.scale, config.grow_dt,
    )
    driving = DrivingPath(times=ts, values=ws)
    hit = None
    if status == _STATUS_COLLISION:
        loc = float(locs[coll])
        rho = float(weights[coll])
        in_interval = (
            config.stop.kind == "hit-interval"
            and config.stop.a <= loc < config.stop.b
        )
        if in_interval:
            reason = "hit-interval"
        elif rho <= -2.0:
            reason = "boundary-absorption"
        else:
            raise ForceCollisionError(
                f"driver collided with force point at {loc} (weight {rho})")
        # landing coordinate: exact for absorption at a force point, else
        # the boundary of the chain's swallowed zone
        if rho <= -2.0:
            hit_point = loc
        else:
            hit_point = loewner.landing_point(driving, float(config.stop.a))
        hit = HitRecord(
            hit_time=float(ts[-1]),
            hit_point=float(hit_point),
            reason=reason,
            driver_at_hit=float(ws[-1]),
            absorbed_at=loc if rho <= -2.0 else None,
        )
        status_name = "collision"
    elif status == _STATUS_RADIUS:
        hit = HitRecord(hit_time=float(ts[-1]), hit_point=None,
                        reason="hit-radius", driver_at_hit=float(ws[-1]))
        status_name = "radius"
    elif status == _STATUS_HORIZON:
        status_name = "horizon"
    elif status == _STATUS_DT_FLOOR:
        raise IntegrationError("substep floor reached without collision detection")
    elif status == _STATUS_CAP:
        raise IntegrationError("step budget exhausted before stopping rule")
    else:
        raise IntegrationError("non-finite driver value")
    return SleRun(config=config, seed=int(seed), driving=driving,
                  force_locations=locs, force_weights=weights,
                  force_paths=vs, hit=hit, status=status_name)


def flow_line_forces(level, xs, x_next, kappa, parity, hitting, collapsed=False):
    """Force-point list for the level-j marginal of the curve system.

    Left of the start x_j: weight 2 at x_{j-1}, ..., x_1 (merged into a
    single prime-end point of weight 2(j-1) when all starts coincide).
    Right: weight 2 at x_{j+1}, ..., x_N, then (kappa-6)/2 (odd family) or
    (kappa-2)/2 (even family) at x_{N+1}, then -4 at each sampled hitting
    point.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    if not 1 <= level <= n:
        raise ValueError("level out of range")
    if parity not in ("odd", "even"):
        raise ValueError("parity must be 'odd' or 'even'")
    forces = []
    if collapsed:
        if level > 1:
            forces.append(ForcePointSpec.left_prime_end(2.0 * (level - 1)))
    else:
        for i in range(level - 2, -1, -1):
            forces.append(ForcePointSpec("left", float(xs[i]), 2.0))
    for i in range(level, n):
        forces.append(ForcePointSpec("right", float(xs[i]), 2.0))
    w_next = (kappa - 6.0) / 2.0 if parity == "odd" else (kappa - 2.0) / 2.0
    forces.append(ForcePointSpec("right", float(x_next), w_next))
    for h in np.asarray(hitting, dtype=float):
        forces.append(ForcePointSpec("right", float(h), -4.0))
    return forces


def sample_flow_line_marginal(level, xs, x_next, kappa, parity, hitting, seed,
                              dt=2e-4, max_time=None, collapsed=False,
                              n_vertices=None, endpoints_only=False):
    """Sample the level-j curve of the system from its marginal driver law.

    Runs :func:`sample_driver` with the force list of
    :func:`flow_line_forces` until the curve lands on (x_next, inf);
    returns ``(trace, hit, run)`` where ``trace`` is None when
    ``endpoints_only`` is set.
    """
    xs = np.asarray(xs, dtype=float)
    forces = flow_line_forces(level, xs, x_next, kappa, parity, hitting,
                              collapsed=collapsed)
    start = float(xs[level - 1])
    if max_time is None:
        max_time = np.inf  # landing is a.s. finite; cap_steps still guards
    config = SleRunConfig(
        kappa=kappa, start=start, forces=forces, dt=dt, max_time=max_time,
        stop=StopRule.hit_interval(float(x_next)), grow_dt=True,
    )
    run = sample_driver(config, seed)
    if run.hit is None:
        raise IntegrationError("curve did not land within the time horizon")
    trace = None if endpoints_only else run.trace(n_vertices=n_vertices)
    return trace, run.hit, run
