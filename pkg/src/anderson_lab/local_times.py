"""Smoothed intersection local times of planar paths.

The smoothed self-intersection local time of a discrete path Z over a
region A of the time square is the trapezoid quadrature of
p_eps(Z(r2) - Z(r1)) over A, with p_eps the heat kernel at scale eps:

    p_eps(v) = exp(-|v|^2 / (2 eps)) / (2 pi eps).

Supported regions are the full ordered triangle 0 <= r1 <= r2 <= t,
diagonal sub-blocks [a,b]^2 intersected with the triangle, and ordered
off-diagonal rectangles [a,b] x [c,d] with b <= c.  Region endpoints
must sit on the path's time grid.

Expected values of the quadrature are available in closed or
one-dimensional integral form for motions and bridges, which makes the
renormalization (subtracting the mean) exact at the discrete level,
not just asymptotically.  The far-field kernel cutoff used by the
estimators discards pairs with |v|^2 > 40 eps, whose total contribution
is below exp(-20) of a typical term and far outside every tolerance
used here; the exact means ignore it.

The mutual intersection local time of two paths on a common grid
integrates the same kernel over the full time square [0,t]^2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import dblquad, quad

# Pairs farther apart than sqrt(KERNEL_CUTOFF * eps) contribute less
# than exp(-KERNEL_CUTOFF / 2) of the kernel peak and are dropped by
# the truncated evaluators.
KERNEL_CUTOFF = 40.0

_GRID_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class Triangle:
    """Full ordered region 0 <= r1 <= r2 <= t."""

    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("triangle horizon must be positive")


@dataclass(frozen=True)
class DiagBlock:
    """[a,b]^2 intersected with the ordered triangle."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError("need 0 <= a < b")


@dataclass(frozen=True)
class Rect:
    """Ordered rectangle [a,b] x [c,d] with b <= c (off-diagonal)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (0 <= self.a < self.b <= self.c < self.d):
            raise ValueError("need 0 <= a < b <= c < d")


TimeRegion = Triangle | DiagBlock | Rect


def gaussian_kernel(eps: float, v) -> float:
    """Planar heat kernel at variance scale eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=float)
    sq = np.sum(v * v, axis=-1)
    return np.exp(-sq / (2.0 * eps)) / (2.0 * math.pi * eps)


def renorm_constant(kappa: float, eps: float) -> float:
    """Centering constant kappa^2 log(1/eps) / (2 pi)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return kappa ** 2 * math.log(1.0 / eps) / (2.0 * math.pi)


def _node_index(value: float, dt: float, t: float, what: str) -> int:
    idx = round(value / dt)
    if abs(idx * dt - value) > _GRID_ALIGN_RTOL * max(t, 1.0):
        raise ValueError(f"{what}={value!r} does not sit on the time grid (dt={dt!r})")
    return int(idx)


def _trapezoid_weights(dt: float, i0: int, i1: int) -> np.ndarray:
    """Trapezoid node weights for [i0*dt, i1*dt], halved at the ends."""
    w = np.full(i1 - i0 + 1, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _region_nodes(region: TimeRegion, t: float, n_steps: int):
    """Node index ranges for a region on the grid of a given path."""
    dt = t / n_steps
    if isinstance(region, Triangle):
        if abs(region.t - t) > _GRID_ALIGN_RTOL * max(t, 1.0):
            raise ValueError("triangle horizon differs from the path horizon")
        return (0, n_steps)
    if isinstance(region, DiagBlock):
        if region.b > t * (1.0 + _GRID_ALIGN_RTOL):
            raise ValueError("diagonal block exceeds the path horizon")
        return (_node_index(region.a, dt, t, "a"), _node_index(region.b, dt, t, "b"))
    if isinstance(region, Rect):
        if region.d > t * (1.0 + _GRID_ALIGN_RTOL):
            raise ValueError("rectangle exceeds the path horizon")
        return (
            _node_index(region.a, dt, t, "a"),
            _node_index(region.b, dt, t, "b"),
            _node_index(region.c, dt, t, "c"),
            _node_index(region.d, dt, t, "d"),
        )
    raise TypeError(f"unsupported region {region!r}")


def _resolution_warning(eps: float, dt: float):
    if eps < 10.0 * dt:
        warnings.warn(
            f"eps={eps!r} is under ten time steps (dt={dt!r}); the kernel is "
            "under-resolved and the quadrature degrades",
            stacklevel=3,
        )


def silt_batch_triangle(
    positions: np.ndarray, t: float, eps: float, truncate: bool = True
) -> np.ndarray:
    """Smoothed self-intersection time over the full triangle, batched.

    positions has shape (batch, n_steps + 1, 2).  The quadrature runs
    lag by lag so the working set stays linear in the path length.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    batch, n_nodes, _ = positions.shape
    n_steps = n_nodes - 1
    dt = t / n_steps
    w = _trapezoid_weights(dt, 0, n_steps)
    norm = 1.0 / (2.0 * math.pi * eps)
    cutoff = KERNEL_CUTOFF * eps
    total = np.zeros(batch)
    for lag in range(1, n_nodes):
        diff = positions[:, lag:, :] - positions[:, :-lag, :]
        sq = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        kern = np.exp(sq / (-2.0 * eps))
        if truncate:
            kern = np.where(sq > cutoff, 0.0, kern)
        total += kern @ (w[:-lag] * w[lag:])
    # Diagonal r1 = r2 carries half weight and the kernel peak.
    total += 0.5 * float(np.dot(w, w))
    return norm * total


def _pair_sum_region(positions: np.ndarray, t: float, eps: float,
                     region: TimeRegion, truncate: bool) -> float:
    """Quadrature over one region for a single path."""
    n_steps = positions.shape[0] - 1
    dt = t / n_steps
    norm = 1.0 / (2.0 * math.pi * eps)
    cutoff = KERNEL_CUTOFF * eps
    nodes = _region_nodes(region, t, n_steps)
    if isinstance(region, Rect):
        ia, ib, ic, id_ = nodes
        w_row = _trapezoid_weights(dt, ia, ib)
        w_col = _trapezoid_weights(dt, ic, id_)
        rows = positions[ia:ib + 1]
        cols = positions[ic:id_ + 1]
        diff = rows[:, None, :] - cols[None, :, :]
        sq = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        kern = np.exp(sq / (-2.0 * eps))
        if truncate:
            kern = np.where(sq > cutoff, 0.0, kern)
        return norm * float(w_row @ kern @ w_col)
    i0, i1 = nodes
    if i1 <= i0:
        raise ValueError("region collapses to fewer than two grid nodes")
    w = _trapezoid_weights(dt, i0, i1)
    pts = positions[i0:i1 + 1]
    m = pts.shape[0]
    total = 0.0
    for lag in range(1, m):
        diff = pts[lag:] - pts[:-lag]
        sq = diff[:, 0] ** 2 + diff[:, 1] ** 2
        kern = np.exp(sq / (-2.0 * eps))
        if truncate:
            kern = np.where(sq > cutoff, 0.0, kern)
        total += float(np.dot(kern, w[:-lag] * w[lag:]))
    total += 0.5 * float(np.dot(w, w))
    return norm * total


def approx_silt(path, eps: float, region: TimeRegion | None = None,
                truncate: bool = True) -> float:
    """Trapezoid quadrature of the smoothed self-intersection time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if region is None:
        region = Triangle(path.t)
    _resolution_warning(eps, path.dt)
    if isinstance(region, Triangle):
        # Share the batch kernel so single paths match batches bitwise.
        _region_nodes(region, path.t, path.n_steps)
        return float(silt_batch_triangle(path.positions[None], path.t, eps, truncate)[0])
    return _pair_sum_region(path.positions, path.t, eps, region, truncate)


def approx_milt(path1, path2, eps: float, truncate: bool = True) -> float:
    """Smoothed mutual intersection time over the full time square.

    Both paths must share the horizon and grid.  Arguments are ordered
    canonically before evaluation, so the result is bitwise symmetric.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if abs(path1.t - path2.t) > _GRID_ALIGN_RTOL * max(path1.t, 1.0):
        raise ValueError("paths have different horizons")
    if path1.n_steps != path2.n_steps:
        raise ValueError("paths have different grids")
    _resolution_warning(eps, path1.dt)
    a, b = path1.positions, path2.positions
    if b.tobytes() < a.tobytes():
        a, b = b, a
    return float(milt_batch(a[None], b[None], path1.t, eps, truncate)[0])


def milt_batch(pos1: np.ndarray, pos2: np.ndarray, t: float, eps: float,
               truncate: bool = True) -> np.ndarray:
    """Mutual intersection quadrature for paired path batches."""
    batch, n_nodes, _ = pos1.shape
    n_steps = n_nodes - 1
    dt = t / n_steps
    w = _trapezoid_weights(dt, 0, n_steps)
    norm = 1.0 / (2.0 * math.pi * eps)
    cutoff = KERNEL_CUTOFF * eps
    total = np.zeros(batch)
    if truncate:
        # Bounding-box gap test: separated pairs contribute exactly zero.
        lo1 = pos1.min(axis=1)
        hi1 = pos1.max(axis=1)
        lo2 = pos2.min(axis=1)
        hi2 = pos2.max(axis=1)
        gap = np.maximum(np.maximum(lo1 - hi2, lo2 - hi1), 0.0)
        active = np.nonzero(gap[:, 0] ** 2 + gap[:, 1] ** 2 <= cutoff)[0]
    else:
        active = np.arange(batch)
    if active.size == 0:
        return total
    p1 = pos1[active]
    p2 = pos2[active]
    acc = np.zeros(active.size)
    for i in range(n_nodes):
        diff = p1[:, i, None, :] - p2
        sq = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        kern = np.exp(sq / (-2.0 * eps))
        if truncate:
            kern = np.where(sq > cutoff, 0.0, kern)
        acc += w[i] * (kern @ w)
    total[active] = norm * acc
    return total


def _rho_motion(s, eps: float):
    return 1.0 / (2.0 * math.pi * (eps + s))


def _rho_bridge(s, t: float, eps: float):
    return 1.0 / (2.0 * math.pi * (eps + s * (t - s) / t))


def _discrete_mean(t: float, eps: float, region: TimeRegion, n_steps: int,
                   rho) -> float:
    """Expected quadrature value on the grid, from the lag density rho."""
    dt = t / n_steps
    nodes = _region_nodes(region, t, n_steps)
    if isinstance(region, Rect):
        ia, ib, ic, id_ = nodes
        w_row = _trapezoid_weights(dt, ia, ib)
        w_col = _trapezoid_weights(dt, ic, id_)
        lags = (np.arange(ic, id_ + 1)[None, :] - np.arange(ia, ib + 1)[:, None]) * dt
        return float(w_row @ rho(lags) @ w_col)
    i0, i1 = nodes
    w = _trapezoid_weights(dt, i0, i1)
    m = w.size
    total = 0.5 * float(np.dot(w, w)) * float(rho(0.0))
    for lag in range(1, m):
        total += float(np.dot(w[:-lag], w[lag:])) * float(rho(lag * dt))
    return total


def _lag_profile(region: TimeRegion, t: float):
    """(lag_lo, lag_hi, length function) of the region's diagonal bands."""
    if isinstance(region, Triangle):
        length = region.t
        return 0.0, length, lambda s: length - s
    if isinstance(region, DiagBlock):
        length = region.b - region.a
        return 0.0, length, lambda s: length - s
    a, b, c, d = region.a, region.b, region.c, region.d
    lo = c - b
    hi = d - a
    return lo, hi, lambda s: np.minimum(np.minimum(s - lo, hi - s),
                                        np.minimum(b - a, d - c))


def _continuum_mean(t: float, eps: float, region: TimeRegion, rho) -> float:
    lo, hi, length = _lag_profile(region, t)
    if hi > t * (1.0 + _GRID_ALIGN_RTOL):
        raise ValueError("region exceeds the horizon")
    breaks = []
    if isinstance(region, Rect):
        for s in (region.c - region.b + min(region.b - region.a, region.d - region.c),
                  region.d - region.a - min(region.b - region.a, region.d - region.c)):
            if lo < s < hi:
                breaks.append(s)
    value, _ = quad(
        lambda s: length(s) * rho(s),
        lo,
        hi,
        points=sorted(set(breaks)) or None,
        limit=200,
        epsabs=1e-13,
        epsrel=1e-11,
    )
    return float(value)


def silt_mean_motion_exact(t: float, eps: float, region: TimeRegion | None = None,
                           n_steps: int | None = None) -> float:
    """Expected smoothed self-intersection time of a motion.

    With n_steps the mean matches the trapezoid quadrature exactly;
    without it the continuum integral is returned.  The full triangle
    has the closed continuum form ((t+eps) log(1+t/eps) - t) / (2 pi).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t <= 0:
        raise ValueError("t must be positive")
    if region is None:
        region = Triangle(t)
    rho = lambda s: _rho_motion(s, eps)
    if n_steps is not None:
        return _discrete_mean(t, eps, region, n_steps, rho)
    if isinstance(region, (Triangle, DiagBlock)):
        length = region.t if isinstance(region, Triangle) else region.b - region.a
        if isinstance(region, Triangle) and abs(region.t - t) > _GRID_ALIGN_RTOL * t:
            raise ValueError("triangle horizon differs from t")
        return ((length + eps) * math.log1p(length / eps) - length) / (2.0 * math.pi)
    return _continuum_mean(t, eps, region, rho)


def silt_mean_bridge_exact(t: float, eps: float, region: TimeRegion | None = None,
                           n_steps: int | None = None) -> float:
    """Expected smoothed self-intersection time of a bridge.

    Bridge increments over lag s have variance s (t - s) / t per axis,
    so the lag density is 1 / (2 pi (eps + s (t - s) / t)).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t <= 0:
        raise ValueError("t must be positive")
    if region is None:
        region = Triangle(t)
    rho = lambda s: _rho_bridge(s, t, eps)
    if n_steps is not None:
        return _discrete_mean(t, eps, region, n_steps, rho)
    return _continuum_mean(t, eps, region, rho)


def milt_mean_bridge_exact(t: float, eps: float, n_steps: int | None = None) -> float:
    """Expected mutual intersection time of two bridges from one point.

    The difference of independent bridges at times (r1, r2) is centered
    gaussian with per-axis variance r1(t-r1)/t + r2(t-r2)/t, giving a
    two-dimensional integral evaluated to absolute accuracy 1e-10, or
    the matching grid sum when n_steps is set.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t <= 0:
        raise ValueError("t must be positive")

    def var(r):
        return r * (t - r) / t

    if n_steps is not None:
        dt = t / n_steps
        w = _trapezoid_weights(dt, 0, n_steps)
        v = var(np.arange(n_steps + 1) * dt)
        dens = 1.0 / (2.0 * math.pi * (eps + v[:, None] + v[None, :]))
        return float(w @ dens @ w)
    value, err = dblquad(
        lambda r2, r1: 1.0 / (2.0 * math.pi * (eps + var(r1) + var(r2))),
        0.0,
        t,
        0.0,
        t,
        epsabs=1e-11,
        epsrel=1e-10,
    )
    if err > 1e-10:
        raise RuntimeError(f"quadrature error {err!r} above the 1e-10 budget")
    return float(value)


def _bridge_log_antiderivative(r: float, t: float) -> float:
    """Antiderivative of log r - log(t - r), finite at both endpoints."""
    from scipy.special import xlogy

    return float(xlogy(r, r) - r + xlogy(t - r, t - r) - (t - r))


def silt_mean_asymptotic(t: float, eps: float, kind: str,
                         region: TimeRegion | None = None) -> float:
    """Small-eps expansion of the continuum mean.

    Available for motions on diagonal regions and for bridges on all
    region kinds.  The bridge triangle value is exactly
    (t / 2 pi)(log(1/eps) + log t).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t <= 0:
        raise ValueError("t must be positive")
    if region is None:
        region = Triangle(t)
    two_pi = 2.0 * math.pi
    if kind == "motion":
        if isinstance(region, Rect):
            raise ValueError("off-diagonal motion rectangles have no expansion here")
        length = region.t if isinstance(region, Triangle) else region.b - region.a
        return length / two_pi * (math.log(1.0 / eps) + math.log(length) - 1.0)
    if kind != "bridge":
        raise ValueError("kind must be 'motion' or 'bridge'")
    F = lambda r: _bridge_log_antiderivative(r, t)
    if isinstance(region, Rect):
        a, b, c, d = region.a, region.b, region.c, region.d
        return ((F(d - a) - F(c - a)) - (F(d - b) - F(c - b))) / two_pi
    length = region.t if isinstance(region, Triangle) else region.b - region.a
    return (length / two_pi * (math.log(1.0 / eps) + math.log(t))
            + (F(length) - F(0.0)) / two_pi)


@dataclass(frozen=True)
class LocalTimeValue:
    """Raw quadrature, its exact mean, and the centered value."""

    eps: float
    region: TimeRegion
    raw: float
    expected_mean: float
    renormalized: float


def renormalized_silt(path, eps: float, truncate: bool = True) -> LocalTimeValue:
    """Centered self-intersection time over the path's full triangle."""
    region = Triangle(path.t)
    raw = approx_silt(path, eps, region, truncate)
    if path.kind == "bridge":
        mean = silt_mean_bridge_exact(path.t, eps, region, n_steps=path.n_steps)
    elif path.kind == "motion":
        mean = silt_mean_motion_exact(path.t, eps, region, n_steps=path.n_steps)
    else:
        raise ValueError(f"unknown path kind {path.kind!r}")
    return LocalTimeValue(
        eps=float(eps),
        region=region,
        raw=raw,
        expected_mean=mean,
        renormalized=raw - mean,
    )
