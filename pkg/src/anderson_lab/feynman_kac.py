"""Monte Carlo estimators for moments of the exponential trace and mass.

For a planar domain D with Dirichlet absorption and coupling kappa, the
small-time limits estimated here are

    trace mean:  e^{k^2 t log t / 2pi} / (2 pi t) *
                     Int_D E[ 1{bridge survives} e^{k^2 gamma} ] dx
    mass mean:   e^{k^2 (t log t - t) / 2pi} *
                     Int_D E[ 1{motion survives} e^{k^2 gamma} ] dx

with gamma the renormalized self-intersection time of the path, and the
second-moment (variance) analogues over independent pairs of paths with
the mutual intersection time alpha coupling them:

    trace var:   e^{k^2 t log t / pi} / (2 pi t)^2 *
                     Int_{D^2} E[ 1 1 e^{k^2 (g1+g2)} (e^{k^2 alpha} - 1) ]
    mass var:    same with motions and prefactor e^{k^2 (t log t - t)/pi},
                     without the (2 pi t)^{-2} factor.

Estimation notes.

* Control variate: when a spectral model is supplied, the survival-only
  part of the mean integrand is replaced by its exact value (the heat
  trace or content), and only the excess 1{survived}(e^{k^2 gamma} - 1)
  is sampled.  At kappa = 0 that excess is identically zero and the
  estimator returns the reference value exactly, with zero error.
* Exponents are evaluated in log space.  Samples whose exponent passes
  the configured cap are counted and reported; they are never clipped.
* Determinism: outer samples are organized in fixed blocks; each block
  draws from its own stream derived from (seed, run key, block index)
  and consumes a fixed draw pattern.  Block summaries merge in index
  order, so results are byte-stable for every worker count.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, replace
from multiprocessing import get_context

import numpy as np

from . import local_times, streams
from .geometry import Disk, KochPrefractal, PlanarDomain, Rectangle, SimplePolygon, sample_uniform_many
from .paths import sample_bridge_batch, sample_motion_batch, survive_batch
from .spectral import SpectralModel, heat_content, heat_trace

# Fraction of overflow events beyond which a run is statistically
# invalid (the exponential moment may not exist at this horizon).
OVERFLOW_FRACTION_LIMIT = 1e-4


@dataclass(frozen=True)
class FkConfig:
    """Sampling parameters shared by the four estimators."""

    n_outer: int
    eps: float | None = None
    eps_scale: float = 1e-3
    n_steps: int = 512
    n_paths_per_x: int = 1
    exit_correction: bool = True
    kernel_truncation: bool = True
    seed: int = 0
    exponent_cap: float = 30.0
    workers: int = 1

    def __post_init__(self):
        if self.n_outer < 1:
            raise ValueError("n_outer must be positive")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.n_paths_per_x < 1:
            raise ValueError("n_paths_per_x must be positive")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive when given")
        if self.eps_scale <= 0:
            raise ValueError("eps_scale must be positive")
        if self.exponent_cap <= 0:
            raise ValueError("exponent_cap must be positive")

    def resolved_eps(self, t: float) -> float:
        return self.eps if self.eps is not None else self.eps_scale * t


@dataclass(frozen=True)
class MomentEstimate:
    """One estimated moment with its provenance."""

    target: str
    t: float
    kappa: float
    value: float
    std_error: float
    n_outer: int
    n_paths_per_x: int
    eps: float
    n_steps: int
    prefactor: float
    config_fingerprint: str
    overflow_count: int
    reference: float | None = None

    @property
    def overflow_fraction(self) -> float:
        return self.overflow_count / (self.n_outer * self.n_paths_per_x)

    @property
    def valid(self) -> bool:
        return self.overflow_fraction <= OVERFLOW_FRACTION_LIMIT


def moment_prefactor(kappa: float, t: float, m: int, kind: str) -> float:
    """Deterministic factor in front of the m-th moment expectation."""
    if t <= 0:
        raise ValueError("t must be positive")
    if m < 1:
        raise ValueError("moment order must be at least 1")
    if kind == "bridge":
        exponent = m * kappa ** 2 * t * math.log(t) / (2.0 * math.pi)
    elif kind == "motion":
        exponent = m * kappa ** 2 * (t * math.log(t) - t) / (2.0 * math.pi)
    else:
        raise ValueError("kind must be 'bridge' or 'motion'")
    return math.exp(exponent)


def domain_tag(domain: PlanarDomain) -> str:
    """Stable identity string for fingerprints."""
    if isinstance(domain, KochPrefractal):
        return f"koch:{domain.level}:{domain.side!r}"
    if isinstance(domain, Rectangle):
        return f"rectangle:{domain.a!r}:{domain.b!r}"
    if isinstance(domain, Disk):
        return f"disk:{domain.radius!r}"
    if isinstance(domain, SimplePolygon):
        digest = hashlib.sha256(domain.vertices.tobytes()).hexdigest()[:12]
        return f"polygon:{domain.vertices.shape[0]}:{digest}"
    return type(domain).__name__


def config_fingerprint(target: str, domain: PlanarDomain, kappa: float,
                       t: float, cfg: FkConfig) -> str:
    parts = [
        "anderson-lab/v1",
        target,
        domain_tag(domain),
        repr(float(kappa)),
        repr(float(t)),
        repr(float(cfg.resolved_eps(t))),
        repr(int(cfg.n_steps)),
        repr(int(cfg.n_outer)),
        repr(int(cfg.n_paths_per_x)),
        repr(bool(cfg.exit_correction)),
        repr(bool(cfg.kernel_truncation)),
        repr(int(cfg.seed)),
    ]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:12]


# Context shared with worker processes through the pool initializer.
_CTX = None


def _set_ctx(ctx):
    global _CTX
    _CTX = ctx


def _dispatch(block):
    return _run_block(_CTX, block)


def _run_block(ctx, block):
    block_index, size = block
    rng = streams.block_stream(ctx["seed"], ctx["key"], block_index)
    if ctx["mode"] == "mean":
        return _mean_block(ctx, rng, size)
    return _var_block(ctx, rng, size)


def _sample_paths(ctx, rng, x):
    if ctx["kind"] == "bridge":
        return sample_bridge_batch(x, ctx["t"], ctx["n_steps"], rng)
    return sample_motion_batch(x, ctx["t"], ctx["n_steps"], rng)


def _mean_block(ctx, rng, size):
    domain = ctx["domain"]
    t = ctx["t"]
    p_inner = ctx["n_paths_per_x"]
    kappa2 = ctx["kappa"] ** 2
    x = sample_uniform_many(domain, size, rng)
    if p_inner > 1:
        x = np.repeat(x, p_inner, axis=0)
    pos = _sample_paths(ctx, rng, x)
    alive, _ = survive_batch(
        pos, t, domain, ctx["exit_correction"],
        rng if ctx["exit_correction"] else None,
    )
    overflow = 0
    if kappa2 == 0.0:
        if ctx["control_variate"]:
            per_path = np.zeros(alive.size)
        else:
            per_path = alive.astype(float)
    else:
        gamma = np.zeros(alive.size)
        hit = np.nonzero(alive)[0]
        if hit.size:
            raw = local_times.silt_batch_triangle(
                pos[hit], t, ctx["eps"], ctx["kernel_truncation"]
            )
            gamma[hit] = raw - ctx["silt_mean"]
        exponent = kappa2 * gamma
        overflow = int(np.count_nonzero(alive & (exponent > ctx["cap"])))
        if ctx["control_variate"]:
            per_path = np.where(alive, np.expm1(exponent), 0.0)
        else:
            per_path = np.where(alive, np.exp(exponent), 0.0)
    samples = per_path if p_inner == 1 else per_path.reshape(size, p_inner).mean(axis=1)
    return streams.MomentSummary.from_samples(samples), overflow


def _var_block(ctx, rng, size):
    domain = ctx["domain"]
    t = ctx["t"]
    kappa2 = ctx["kappa"] ** 2
    x1 = sample_uniform_many(domain, size, rng)
    x2 = sample_uniform_many(domain, size, rng)
    pos1 = _sample_paths(ctx, rng, x1)
    pos2 = _sample_paths(ctx, rng, x2)
    correction = ctx["exit_correction"]
    alive1, _ = survive_batch(pos1, t, domain, correction, rng if correction else None)
    alive2, _ = survive_batch(pos2, t, domain, correction, rng if correction else None)
    both = alive1 & alive2
    gamma1 = np.zeros(size)
    gamma2 = np.zeros(size)
    alpha = np.zeros(size)
    hit = np.nonzero(both)[0]
    if hit.size:
        raw1 = local_times.silt_batch_triangle(pos1[hit], t, ctx["eps"], ctx["kernel_truncation"])
        raw2 = local_times.silt_batch_triangle(pos2[hit], t, ctx["eps"], ctx["kernel_truncation"])
        gamma1[hit] = raw1 - ctx["silt_mean"]
        gamma2[hit] = raw2 - ctx["silt_mean"]
        alpha[hit] = local_times.milt_batch(pos1[hit], pos2[hit], t, ctx["eps"], ctx["kernel_truncation"])
    base = kappa2 * (gamma1 + gamma2)
    full = base + kappa2 * alpha
    overflow = int(np.count_nonzero(both & (np.maximum(base, full) > ctx["cap"])))
    samples = np.where(both, np.exp(base) * np.expm1(kappa2 * alpha), 0.0)
    return streams.MomentSummary.from_samples(samples), overflow


def _run_blocks(ctx, n_outer: int, workers: int):
    blocks = streams.block_ranges(n_outer)
    if workers <= 1:
        results = [_run_block(ctx, b) for b in blocks]
    else:
        with get_context("fork").Pool(workers, initializer=_set_ctx, initargs=(ctx,)) as pool:
            results = pool.map(_dispatch, blocks)
    total = streams.merge_summaries(s for s, _ in results)
    overflow = sum(o for _, o in results)
    return total, overflow


def _base_ctx(target: str, mode: str, kind: str, domain: PlanarDomain,
              kappa: float, t: float, cfg: FkConfig, control_variate: bool):
    if t <= 0:
        raise ValueError("t must be positive")
    eps = float(cfg.resolved_eps(t))
    dt = float(t) / cfg.n_steps
    if eps < 10.0 * dt:
        warnings.warn(
            f"eps={eps!r} is under ten time steps (dt={dt!r}); the intersection "
            "kernel is under-resolved at this grid",
            stacklevel=3,
        )
    if kind == "bridge":
        silt_mean = local_times.silt_mean_bridge_exact(t, eps, n_steps=cfg.n_steps)
    else:
        silt_mean = local_times.silt_mean_motion_exact(t, eps, n_steps=cfg.n_steps)
    key = streams.run_key(
        target, domain_tag(domain), float(kappa), float(t), float(eps),
        cfg.n_steps, cfg.n_paths_per_x, cfg.exit_correction,
        cfg.kernel_truncation,
    )
    return {
        "mode": mode,
        "kind": kind,
        "domain": domain,
        "kappa": float(kappa),
        "t": float(t),
        "eps": float(eps),
        "n_steps": cfg.n_steps,
        "n_paths_per_x": cfg.n_paths_per_x,
        "exit_correction": cfg.exit_correction,
        "kernel_truncation": cfg.kernel_truncation,
        "cap": cfg.exponent_cap,
        "seed": cfg.seed,
        "key": key,
        "silt_mean": silt_mean,
        "control_variate": control_variate,
    }


def _finish(target, domain, kappa, t, cfg, prefactor, value, std_error,
            overflow, reference):
    return MomentEstimate(
        target=target,
        t=float(t),
        kappa=float(kappa),
        value=float(value),
        std_error=float(std_error),
        n_outer=cfg.n_outer,
        n_paths_per_x=cfg.n_paths_per_x,
        eps=float(cfg.resolved_eps(t)),
        n_steps=cfg.n_steps,
        prefactor=float(prefactor),
        config_fingerprint=config_fingerprint(target, domain, kappa, t, cfg),
        overflow_count=int(overflow),
        reference=reference,
    )


def estimate_trace_mean(domain: PlanarDomain, kappa: float, t: float,
                        cfg: FkConfig, model: SpectralModel | None = None) -> MomentEstimate:
    """Expected exponential trace via bridge sampling.

    With a model the control-variate form
    prefactor * (T0 + A/(2 pi t) * mean[1{survived}(e^{k^2 gamma}-1)])
    is used; without one the plain form
    prefactor * A/(2 pi t) * mean[1{survived} e^{k^2 gamma}].
    """
    cv = model is not None
    ctx = _base_ctx("trace_mean", "mean", "bridge", domain, kappa, t, cfg, cv)
    area = domain.area()
    pref = moment_prefactor(kappa, t, 1, "bridge")
    reference = heat_trace(model, t) if cv else None
    if cv and kappa == 0.0:
        # The excess term is identically zero; no sampling needed.
        return _finish("trace_mean", domain, kappa, t, cfg, pref,
                       reference, 0.0, 0, reference)
    summary, overflow = _run_blocks(ctx, cfg.n_outer, cfg.workers)
    scale = area / (2.0 * math.pi * t)
    if cv:
        value = pref * (reference + scale * summary.mean)
    else:
        value = pref * scale * summary.mean
    se = pref * scale * summary.std_error
    return _finish("trace_mean", domain, kappa, t, cfg, pref, value, se,
                   overflow, reference)


def estimate_mass_mean(domain: PlanarDomain, kappa: float, t: float,
                       cfg: FkConfig, model: SpectralModel | None = None) -> MomentEstimate:
    """Expected mass (heat kept in the domain) via motion sampling."""
    cv = model is not None
    ctx = _base_ctx("mass_mean", "mean", "motion", domain, kappa, t, cfg, cv)
    area = domain.area()
    pref = moment_prefactor(kappa, t, 1, "motion")
    reference = heat_content(model, t) if cv else None
    if cv and kappa == 0.0:
        return _finish("mass_mean", domain, kappa, t, cfg, pref,
                       reference, 0.0, 0, reference)
    summary, overflow = _run_blocks(ctx, cfg.n_outer, cfg.workers)
    if cv:
        value = pref * (reference + area * summary.mean)
    else:
        value = pref * area * summary.mean
    se = pref * area * summary.std_error
    return _finish("mass_mean", domain, kappa, t, cfg, pref, value, se,
                   overflow, reference)


def estimate_trace_variance(domain: PlanarDomain, kappa: float, t: float,
                            cfg: FkConfig) -> MomentEstimate:
    """Variance of the exponential trace via independent bridge pairs."""
    cfg = replace(cfg, n_paths_per_x=1)
    pref = moment_prefactor(kappa, t, 2, "bridge")
    if kappa == 0.0:
        return _finish("trace_var", domain, kappa, t, cfg, pref, 0.0, 0.0, 0, None)
    ctx = _base_ctx("trace_var", "var", "bridge", domain, kappa, t, cfg, False)
    summary, overflow = _run_blocks(ctx, cfg.n_outer, cfg.workers)
    scale = domain.area() ** 2 / (2.0 * math.pi * t) ** 2
    value = pref * scale * summary.mean
    se = pref * scale * summary.std_error
    return _finish("trace_var", domain, kappa, t, cfg, pref, value, se,
                   overflow, None)


def estimate_mass_variance(domain: PlanarDomain, kappa: float, t: float,
                           cfg: FkConfig) -> MomentEstimate:
    """Variance of the mass via independent motion pairs."""
    cfg = replace(cfg, n_paths_per_x=1)
    pref = moment_prefactor(kappa, t, 2, "motion")
    if kappa == 0.0:
        return _finish("mass_var", domain, kappa, t, cfg, pref, 0.0, 0.0, 0, None)
    ctx = _base_ctx("mass_var", "var", "motion", domain, kappa, t, cfg, False)
    summary, overflow = _run_blocks(ctx, cfg.n_outer, cfg.workers)
    scale = domain.area() ** 2
    value = pref * scale * summary.mean
    se = pref * scale * summary.std_error
    return _finish("mass_var", domain, kappa, t, cfg, pref, value, se,
                   overflow, None)
