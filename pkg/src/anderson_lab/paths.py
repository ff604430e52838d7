"""Discrete planar Brownian motions and bridges with absorption tests.

Paths are sampled on the uniform grid k * t / n_steps by scaling a
standard unit-time walk: positions = x + sqrt(t) * U(k / n), with U a
unit motion or unit bridge built from the same standard normals.  Two
calls seeded identically at different horizons therefore produce paths
coupled by the diffusive rescaling, a property the intersection
functionals inherit and the invariant tests exercise.

Survival against a domain boundary checks every grid point and, when
the exit correction is enabled, additionally rejects each retained
segment with the half-plane crossing probability
exp(-2 d_k d_{k+1} / dt), which removes most of the discretization bias
of the piecewise test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PlanarDomain


@dataclass(frozen=True)
class DiscretePath:
    """One sampled path on the uniform time grid."""

    kind: str  # "motion" or "bridge"
    start: tuple
    t: float
    n_steps: int
    positions: np.ndarray  # (n_steps + 1, 2)

    @property
    def dt(self) -> float:
        return self.t / self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * (self.t / self.n_steps)


@dataclass(frozen=True)
class SurvivalVerdict:
    survived: bool
    first_exit_step: int | None
    correction_applied: bool


def _check_args(t: float, n_steps: int, minimum_steps: int):
    if t <= 0:
        raise ValueError("horizon t must be positive")
    if n_steps < minimum_steps:
        raise ValueError(f"n_steps must be at least {minimum_steps}")


def _unit_motion(rng: np.random.Generator, count: int, n_steps: int) -> np.ndarray:
    """Standard unit-time motions at times k / n, shape (count, n+1, 2)."""
    steps = rng.standard_normal((count, n_steps, 2)) * np.sqrt(1.0 / n_steps)
    walk = np.empty((count, n_steps + 1, 2))
    walk[:, 0] = 0.0
    np.cumsum(steps, axis=1, out=walk[:, 1:])
    return walk


def sample_motion_batch(
    x: np.ndarray, t: float, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Brownian motions from rows of x, shape (batch, n_steps + 1, 2)."""
    _check_args(t, n_steps, 1)
    x = np.asarray(x, dtype=float)
    unit = _unit_motion(rng, x.shape[0], n_steps)
    return x[:, None, :] + np.sqrt(t) * unit


def sample_bridge_batch(
    x: np.ndarray, t: float, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Brownian bridges pinned at x on both ends, shape (batch, n+1, 2).

    The unit bridge U(s) - s U(1) ends at exactly zero in floating
    point, so the final position equals x bitwise.
    """
    _check_args(t, n_steps, 2)
    x = np.asarray(x, dtype=float)
    unit = _unit_motion(rng, x.shape[0], n_steps)
    frac = (np.arange(n_steps + 1) / n_steps)[None, :, None]
    unit = unit - frac * unit[:, -1:, :]
    return x[:, None, :] + np.sqrt(t) * unit


def sample_motion(x, t: float, n_steps: int, rng: np.random.Generator) -> DiscretePath:
    x = tuple(float(c) for c in x)
    positions = sample_motion_batch(np.array([x]), t, n_steps, rng)[0]
    return DiscretePath("motion", x, float(t), int(n_steps), positions)


def sample_bridge(x, t: float, n_steps: int, rng: np.random.Generator) -> DiscretePath:
    x = tuple(float(c) for c in x)
    positions = sample_bridge_batch(np.array([x]), t, n_steps, rng)[0]
    return DiscretePath("bridge", x, float(t), int(n_steps), positions)


def survive_batch(
    positions: np.ndarray,
    t: float,
    domain: PlanarDomain,
    correction: bool,
    rng: np.random.Generator | None,
):
    """Absorption verdicts for a batch of paths.

    Returns (survived, first_exit_step) with first_exit_step = -1 for
    survivors.  When correction is true, a (batch, n_steps) block of
    uniforms is always consumed so the draw count never depends on the
    data.
    """
    batch, n_nodes, _ = positions.shape
    n_steps = n_nodes - 1
    dt = t / n_steps
    flat = positions.reshape(-1, 2)
    if correction:
        if rng is None:
            raise ValueError("exit correction needs a random stream")
        dist = domain.signed_distance_many(flat).reshape(batch, n_nodes)
        inside = dist > 0.0
        u = rng.uniform(size=(batch, n_steps))
        # Half-plane crossing probability for each retained segment.
        # Segments with an endpoint outside are dead regardless, so the
        # exponent is clamped to keep exp quiet on sign changes.
        exponent = -2.0 * dist[:, :-1] * dist[:, 1:] / dt
        cross = np.exp(np.minimum(exponent, 0.0))
        segment_dead = (u < cross) | ~inside[:, 1:] | ~inside[:, :-1]
    else:
        inside = domain.contains_many(flat).reshape(batch, n_nodes)
        segment_dead = ~inside[:, 1:]
        segment_dead[:, 0] |= ~inside[:, 0]
    any_dead = segment_dead.any(axis=1)
    first_seg = np.argmax(segment_dead, axis=1)
    first_exit = np.where(any_dead, first_seg + 1, -1)
    # A start point already outside exits at step zero.
    start_out = ~inside[:, 0]
    first_exit = np.where(start_out, 0, first_exit)
    return ~any_dead, first_exit


def survives(
    path: DiscretePath,
    domain: PlanarDomain,
    correction: bool = True,
    rng: np.random.Generator | None = None,
) -> SurvivalVerdict:
    """Absorption verdict for one path."""
    alive, first_exit = survive_batch(
        path.positions[None, :, :], path.t, domain, correction, rng
    )
    step = None if alive[0] else int(first_exit[0])
    return SurvivalVerdict(bool(alive[0]), step, bool(correction))
