"""Dirichlet eigenmode references for the half-Laplacian.

The operator is -(1/2) Laplacian with Dirichlet conditions, so a
rectangle (0,a) x (0,b) has eigenvalues (pi^2/2)(m^2/a^2 + n^2/b^2) and
a disk of radius R has j_{nu,k}^2 / (2 R^2) with j the Bessel zeros.
Models store every eigenvalue below a cutoff together with the squared
integral of the normalized eigenfunction, which is what enters the heat
content.  Truncation quality is certified by a Weyl tail bound: below
model.t_min the discarded tail could exceed TAIL_TOL and evaluation
refuses to proceed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import jn_zeros

# Absolute truncation error accepted for heat sums.
TAIL_TOL = 1e-10

# Largest Bessel argument the disk enumeration will handle.
_BESSEL_RANGE_GUARD = 3e4


@dataclass(frozen=True)
class SpectralModel:
    """Truncated Dirichlet eigendata for one domain."""

    label: str
    area: float
    lambdas: np.ndarray
    overlap_sq: np.ndarray
    cutoff_lambda: float
    t_min: float
    tail_bound: float


def weyl_tail_bound(area: float, cutoff_lambda: float, t: float) -> float:
    """Upper bound on the heat-trace mass above the cutoff at time t."""
    return area / (2.0 * math.pi) * math.exp(-t * cutoff_lambda) / t


def certified_t_min(area: float, cutoff_lambda: float) -> float:
    """Smallest time at which the truncated tail stays below TAIL_TOL."""
    def log_excess(t):
        # log of the tail bound, written out to dodge exp underflow
        log_tail = math.log(area / (2.0 * math.pi)) - t * cutoff_lambda - math.log(t)
        return log_tail - math.log(TAIL_TOL)

    lo, hi = 1e-15, 1e6
    if log_excess(lo) <= 0.0:
        return lo
    if log_excess(hi) > 0.0:
        raise ValueError("cutoff too small to certify any evaluation time")
    return float(brentq(log_excess, lo, hi, xtol=1e-18, rtol=1e-12))


def cutoff_for_time(area: float, t_star: float, tol: float = TAIL_TOL) -> float:
    """Cutoff that certifies heat sums down to t_star.

    A two percent margin keeps t_star strictly inside the certified
    window after the root solve in certified_t_min rounds."""
    if t_star <= 0:
        raise ValueError("t_star must be positive")
    return 1.02 * math.log(area / (2.0 * math.pi * t_star * tol)) / t_star


def rectangle_model(a: float, b: float, cutoff_lambda: float) -> SpectralModel:
    """All Dirichlet modes of (0,a) x (0,b) with eigenvalue <= cutoff."""
    if a <= 0 or b <= 0:
        raise ValueError("rectangle sides must be positive")
    if cutoff_lambda <= 0:
        raise ValueError("cutoff must be positive")
    m_max = int(math.floor(a * math.sqrt(2.0 * cutoff_lambda) / math.pi)) + 1
    n_max = int(math.floor(b * math.sqrt(2.0 * cutoff_lambda) / math.pi)) + 1
    m = np.arange(1, m_max + 1)
    n = np.arange(1, n_max + 1)
    mm, nn = np.meshgrid(m, n, indexing="ij")
    lam = 0.5 * math.pi ** 2 * (mm ** 2 / a ** 2 + nn ** 2 / b ** 2)
    keep = lam <= cutoff_lambda
    mm, nn, lam = mm[keep], nn[keep], lam[keep]
    # The integral of the normalized mode vanishes unless both indices
    # are odd; odd/odd modes contribute 64ab / (m n pi^2)^2.
    odd = (mm % 2 == 1) & (nn % 2 == 1)
    overlap = np.where(odd, 64.0 * a * b / (mm ** 2 * nn ** 2 * math.pi ** 4), 0.0)
    order = np.lexsort((nn, mm, lam))
    area = a * b
    return SpectralModel(
        label=f"rectangle a={a!r} b={b!r}",
        area=area,
        lambdas=lam[order].astype(float),
        overlap_sq=overlap[order].astype(float),
        cutoff_lambda=float(cutoff_lambda),
        t_min=certified_t_min(area, cutoff_lambda),
        tail_bound=TAIL_TOL,
    )


def disk_model(radius: float, cutoff_lambda: float) -> SpectralModel:
    """All Dirichlet modes of the centered disk with eigenvalue <= cutoff.

    Radial order nu contributes zeros j_{nu,k}; each nu >= 1 eigenvalue
    is doubled (sine and cosine branches).  Only the radially symmetric
    modes have nonzero mean, with squared integral 4 pi R^2 / j_{0,k}^2.
    """
    if radius <= 0:
        raise ValueError("disk radius must be positive")
    if cutoff_lambda <= 0:
        raise ValueError("cutoff must be positive")
    j_max = math.sqrt(2.0 * cutoff_lambda) * radius
    if j_max > _BESSEL_RANGE_GUARD:
        raise ValueError(
            f"cutoff needs Bessel zeros beyond {_BESSEL_RANGE_GUARD}; "
            "reduce the cutoff or the radius"
        )
    lams = []
    overlaps = []
    orders = []
    ranks = []
    nu = 0
    while True:
        count = max(4, int(j_max / math.pi) + 2)
        zeros = jn_zeros(nu, count)
        zeros = zeros[zeros <= j_max]
        if zeros.size == 0:
            break
        lam_nu = zeros ** 2 / (2.0 * radius ** 2)
        if nu == 0:
            lams.append(lam_nu)
            overlaps.append(4.0 * math.pi * radius ** 2 / zeros ** 2)
            orders.append(np.zeros_like(zeros, dtype=int))
            ranks.append(np.arange(1, zeros.size + 1))
        else:
            # multiplicity two, zero mean
            lams.append(np.repeat(lam_nu, 2))
            overlaps.append(np.zeros(2 * zeros.size))
            orders.append(np.full(2 * zeros.size, nu, dtype=int))
            ranks.append(np.repeat(np.arange(1, zeros.size + 1), 2))
        nu += 1
    lam = np.concatenate(lams)
    overlap = np.concatenate(overlaps)
    order_idx = np.concatenate(orders)
    rank_idx = np.concatenate(ranks)
    order = np.lexsort((rank_idx, order_idx, lam))
    area = math.pi * radius ** 2
    return SpectralModel(
        label=f"disk radius={radius!r}",
        area=area,
        lambdas=lam[order],
        overlap_sq=overlap[order],
        cutoff_lambda=float(cutoff_lambda),
        t_min=certified_t_min(area, cutoff_lambda),
        tail_bound=TAIL_TOL,
    )


def _check_time(model: SpectralModel, t: float):
    if t <= 0:
        raise ValueError("time must be positive")
    if t < model.t_min:
        raise ValueError(
            f"t={t!r} is below the certified window t_min={model.t_min!r} "
            "for this cutoff; rebuild the model with a larger cutoff"
        )


def heat_trace(model: SpectralModel, t: float) -> float:
    """Sum of exp(-t lambda) over retained modes."""
    _check_time(model, t)
    return float(np.sum(np.exp(-t * model.lambdas)))


def heat_content(model: SpectralModel, t: float) -> float:
    """Amount of heat kept in the domain at time t from uniform data."""
    _check_time(model, t)
    return float(np.sum(model.overlap_sq * np.exp(-t * model.lambdas)))


def smooth_trace_asymptotic(area: float, perimeter: float, t: float) -> float:
    """Two-term small-time trace expansion for a smooth boundary."""
    return area / (2.0 * math.pi * t) - perimeter / (4.0 * math.sqrt(2.0 * math.pi)) / math.sqrt(t)


def content_asymptotic(area: float, perimeter: float, chi: float, t: float) -> float:
    """Three-term small-time heat content expansion, smooth boundary."""
    return (
        area
        - math.sqrt(2.0) * perimeter * math.sqrt(t) / math.sqrt(math.pi)
        + 0.5 * math.pi * chi * t
    )


def corner_trace_constant(interior_angles) -> float:
    """Constant-order trace correction from polygon corners."""
    total = 0.0
    for theta in interior_angles:
        total += (math.pi ** 2 - theta ** 2) / (24.0 * math.pi * theta)
    return total


def save_model(model: SpectralModel, path: str):
    with open(path, "w") as fh:
        fh.write(
            f"# domain={model.label}, cutoff={model.cutoff_lambda!r}, "
            f"tail_bound={model.tail_bound!r}\n"
        )
        fh.write(f"# area={model.area!r}, t_min={model.t_min!r}\n")
        fh.write("lambda,overlap_sq\n")
        for lam, ov in zip(model.lambdas, model.overlap_sq):
            fh.write(f"{float(lam)!r},{float(ov)!r}\n")


def load_model(path: str) -> SpectralModel:
    label = ""
    cutoff = 0.0
    tail = TAIL_TOL
    area = 0.0
    t_min = 0.0
    lams = []
    ovs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line == "lambda,overlap_sq":
                continue
            if line.startswith("#"):
                for piece in line[1:].split(","):
                    key, _, value = piece.strip().partition("=")
                    if key == "domain":
                        label = value
                    elif key == "cutoff":
                        cutoff = float(value)
                    elif key == "tail_bound":
                        tail = float(value)
                    elif key == "area":
                        area = float(value)
                    elif key == "t_min":
                        t_min = float(value)
                continue
            lam_s, ov_s = line.split(",")
            lams.append(float(lam_s))
            ovs.append(float(ov_s))
    return SpectralModel(
        label=label,
        area=area,
        lambdas=np.asarray(lams),
        overlap_sq=np.asarray(ovs),
        cutoff_lambda=cutoff,
        t_min=t_min,
        tail_bound=tail,
    )
