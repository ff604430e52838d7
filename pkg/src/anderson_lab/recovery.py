"""Geometric and coupling recovery from small-time trace and mass series.

Each routine inverts one term of a small-time expansion:

    area       A(t)  = 2 pi t T(t)                      -> A
    perimeter  L(t)  = (A/(2 pi t) - T(t)) 4 sqrt(2 pi t) -> L
    coupling   k2(t) = 4 pi^2 (T_k(t) - T_0(t)) / (A log t) -> kappa^2
    dimension  d(t)  = 2 - 2 log(A - M(t)) / log t      -> interior
                                                           Minkowski dim

All estimators are affine in the input series, so reported standard
errors are exact linear propagations of the per-point errors.  Headline
values sit at the smallest t (where the expansions are sharpest), except
for the dimension, whose headline is the slope of log(A - M) against
log t: the regression form is invariant to positive rescaling of the
area deficit, unlike the pointwise form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RATE_CONDITION = "valid along t_n <= c * n**(-1/2 - eps) as n -> inf"


@dataclass(frozen=True)
class RecoveryEstimate:
    """Headline plus per-time-point diagnostics for one recovered quantity."""

    quantity: str
    headline: float
    std_error: float | None
    ts: np.ndarray
    pointwise: np.ndarray
    pointwise_se: np.ndarray | None
    rate_condition: str = RATE_CONDITION


def _as_series(ts, values, std_errors, smallest_first=True):
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("need a one dimensional, non-empty grid of times")
    if values.shape != ts.shape:
        raise ValueError("values must match the time grid")
    if np.any(ts <= 0):
        raise ValueError("times must be positive")
    if np.unique(ts).size != ts.size:
        raise ValueError("times must be distinct")
    if std_errors is not None:
        std_errors = np.asarray(std_errors, dtype=float)
        if std_errors.shape != ts.shape:
            raise ValueError("std_errors must match the time grid")
        if np.any(std_errors < 0):
            raise ValueError("std_errors must be non-negative")
    order = np.argsort(ts) if smallest_first else slice(None)
    ts = ts[order]
    values = values[order]
    if std_errors is not None:
        std_errors = std_errors[order]
    return ts, values, std_errors


def recover_area(ts, trace_values, std_errors=None) -> RecoveryEstimate:
    """Leading Weyl term: A = 2 pi t T(t) as t -> 0."""
    ts, tr, se = _as_series(ts, trace_values, std_errors)
    factor = 2.0 * math.pi * ts
    est = factor * tr
    est_se = factor * se if se is not None else None
    return RecoveryEstimate(
        quantity="area",
        headline=float(est[0]),
        std_error=float(est_se[0]) if est_se is not None else None,
        ts=ts,
        pointwise=est,
        pointwise_se=est_se,
    )


def recover_perimeter(ts, trace_values, area, std_errors=None) -> RecoveryEstimate:
    """Boundary term of the trace expansion."""
    if area <= 0:
        raise ValueError("area must be positive")
    ts, tr, se = _as_series(ts, trace_values, std_errors)
    factor = 4.0 * np.sqrt(2.0 * math.pi * ts)
    est = factor * (area / (2.0 * math.pi * ts) - tr)
    est_se = factor * se if se is not None else None
    return RecoveryEstimate(
        quantity="perimeter",
        headline=float(est[0]),
        std_error=float(est_se[0]) if est_se is not None else None,
        ts=ts,
        pointwise=est,
        pointwise_se=est_se,
    )


def recover_kappa2(ts, trace_kappa, trace_zero, area,
                   std_errors_kappa=None, std_errors_zero=None) -> RecoveryEstimate:
    """Coupling recovery from the trace gap against log t.

    The gap T_k(t) - T_0(t) has leading term kappa^2 A log t / 4 pi^2, so
    each t below one yields an estimate; the headline is the smallest t.
    """
    if area <= 0:
        raise ValueError("area must be positive")
    ts_in = np.asarray(ts, dtype=float)
    ts, tk, sek = _as_series(ts_in, trace_kappa, std_errors_kappa)
    _, t0, se0 = _as_series(ts_in, trace_zero, std_errors_zero)
    if np.any(ts >= 1.0):
        raise ValueError("coupling recovery needs t < 1 (log t must be negative)")
    log_t = np.log(ts)
    factor = 4.0 * math.pi ** 2 / (area * log_t)
    est = factor * (tk - t0)
    est_se = None
    if sek is not None or se0 is not None:
        vk = sek ** 2 if sek is not None else 0.0
        v0 = se0 ** 2 if se0 is not None else 0.0
        est_se = np.abs(factor) * np.sqrt(vk + v0)
    return RecoveryEstimate(
        quantity="kappa2",
        headline=float(est[0]),
        std_error=float(est_se[0]) if est_se is not None else None,
        ts=ts,
        pointwise=est,
        pointwise_se=est_se,
    )


def recover_minkowski(ts, mass_values, area, std_errors=None) -> RecoveryEstimate:
    """Interior Minkowski dimension from the mass deficit power law.

    Pointwise column: d(t) = 2 - 2 log(A - M(t)) / log t.  Headline: the
    least-squares slope s of log(A - M) on log t gives d = 2 - 2 s, which
    is invariant to positive rescaling of the deficit.
    """
    if area <= 0:
        raise ValueError("area must be positive")
    ts, mass, se = _as_series(ts, mass_values, std_errors)
    deficit = area - mass
    if np.any(deficit <= 0):
        raise ValueError("mass must stay below the area (positive deficit)")
    if np.any(ts >= 1.0):
        raise ValueError("dimension recovery needs t < 1 (log t must be negative)")
    log_t = np.log(ts)
    log_d = np.log(deficit)
    pointwise = 2.0 - 2.0 * log_d / log_t
    pointwise_se = None
    deficit_se = None
    if se is not None:
        deficit_se = se / deficit  # se of log(A - M)
        pointwise_se = 2.0 * deficit_se / np.abs(log_t)
    if ts.size < 2:
        raise ValueError("slope fit needs at least two time points")
    x = log_t - log_t.mean()
    sxx = float(np.dot(x, x))
    if sxx == 0.0:
        raise ValueError("time grid has no spread in log t")
    coeff = x / sxx
    slope = float(np.dot(coeff, log_d))
    headline = 2.0 - 2.0 * slope
    if deficit_se is not None:
        slope_var = float(np.dot(coeff ** 2, deficit_se ** 2))
    else:
        resid = log_d - log_d.mean() - slope * x
        dof = max(ts.size - 2, 1)
        slope_var = float(np.dot(resid, resid)) / dof / sxx
    headline_se = 2.0 * math.sqrt(slope_var)
    return RecoveryEstimate(
        quantity="minkowski",
        headline=float(headline),
        std_error=float(headline_se),
        ts=ts,
        pointwise=pointwise,
        pointwise_se=pointwise_se,
    )
