"""Moment estimators: exact collapses, determinism, and sanity bounds."""

import math

import numpy as np
import pytest

from anderson_lab.feynman_kac import (
    FkConfig,
    MomentEstimate,
    config_fingerprint,
    domain_tag,
    estimate_mass_mean,
    estimate_mass_variance,
    estimate_trace_mean,
    estimate_trace_variance,
    moment_prefactor,
)
from anderson_lab.geometry import Disk, KochPrefractal, Rectangle
from anderson_lab.spectral import heat_content, heat_trace, rectangle_model

T = 0.05
DOM = Rectangle(1.0, 1.0)


@pytest.fixture(scope="module")
def model():
    return rectangle_model(1.0, 1.0, cutoff_lambda=6e4)


def quick_cfg(n_outer=1024, **kw):
    kw.setdefault("eps", 2e-3)
    kw.setdefault("n_steps", 256)
    kw.setdefault("seed", 21)
    return FkConfig(n_outer=n_outer, **kw)


def test_prefactor_values():
    t = 1.0 / math.e
    # bridge first moment at kappa=1, t=1/e: exp(-1/(2 pi e))
    assert moment_prefactor(1.0, t, 1, "bridge") == pytest.approx(
        math.exp(-1.0 / (2.0 * math.pi * math.e)), rel=1e-14
    )
    assert moment_prefactor(1.0, t, 1, "bridge") == pytest.approx(0.94312, abs=2e-5)
    # motion adds the -t term in the exponent
    assert moment_prefactor(2.0, 0.1, 1, "motion") == pytest.approx(
        math.exp(4.0 * (0.1 * math.log(0.1) - 0.1) / (2.0 * math.pi)), rel=1e-14
    )
    # moment order multiplies the exponent
    p1 = moment_prefactor(1.0, 0.1, 1, "bridge")
    p2 = moment_prefactor(1.0, 0.1, 2, "bridge")
    assert p2 == pytest.approx(p1 ** 2, rel=1e-13)
    assert moment_prefactor(0.0, 0.1, 1, "bridge") == 1.0
    with pytest.raises(ValueError):
        moment_prefactor(1.0, 0.1, 1, "walk")
    with pytest.raises(ValueError):
        moment_prefactor(1.0, -0.1, 1, "bridge")


def test_trace_collapses_exactly_at_zero_coupling(model):
    est = estimate_trace_mean(DOM, 0.0, T, quick_cfg(), model)
    assert est.value == heat_trace(model, T)
    assert est.std_error == 0.0
    assert est.overflow_count == 0
    assert est.prefactor == 1.0
    assert est.reference == heat_trace(model, T)


def test_mass_collapses_exactly_at_zero_coupling(model):
    est = estimate_mass_mean(DOM, 0.0, T, quick_cfg(), model)
    assert est.value == heat_content(model, T)
    assert est.std_error == 0.0


def test_variances_vanish_exactly_at_zero_coupling():
    for estimator in (estimate_trace_variance, estimate_mass_variance):
        est = estimator(DOM, 0.0, T, quick_cfg())
        assert est.value == 0.0
        assert est.std_error == 0.0
        assert est.overflow_count == 0


def test_plain_survival_estimate_matches_reference(model):
    # kappa = 0 without the control variate is a pure survival estimate
    est = estimate_trace_mean(DOM, 0.0, T, quick_cfg(n_outer=4096), model=None)
    want = heat_trace(model, T)
    assert est.reference is None
    assert est.std_error > 0
    assert abs(est.value - want) < 4.0 * est.std_error + 0.01 * want


def test_mass_plain_estimate_matches_reference(model):
    est = estimate_mass_mean(DOM, 0.0, T, quick_cfg(n_outer=4096), model=None)
    want = heat_content(model, T)
    assert abs(est.value - want) < 4.0 * est.std_error + 0.01 * want
    assert 0.0 < est.value < DOM.area()


def test_control_variate_shrinks_the_error(model):
    cfg = quick_cfg(n_outer=2048)
    plain = estimate_trace_mean(DOM, 1.0, T, cfg, model=None)
    cv = estimate_trace_mean(DOM, 1.0, T, cfg, model)
    assert cv.std_error < 0.2 * plain.std_error
    # both estimate the same quantity
    spread = 4.0 * math.hypot(cv.std_error, plain.std_error)
    assert abs(cv.value - plain.value) < spread + 0.02 * cv.value


def test_worker_count_leaves_results_bitwise_identical(model):
    a = estimate_trace_mean(DOM, 1.0, T, quick_cfg(n_outer=2500), model)
    b = estimate_trace_mean(DOM, 1.0, T, quick_cfg(n_outer=2500, workers=3), model)
    assert a.value == b.value
    assert a.std_error == b.std_error
    assert a.overflow_count == b.overflow_count
    v1 = estimate_mass_variance(DOM, 1.0, T, quick_cfg(n_outer=1200))
    v3 = estimate_mass_variance(DOM, 1.0, T, quick_cfg(n_outer=1200, workers=3))
    assert v1.value == v3.value and v1.std_error == v3.std_error


def test_seed_changes_results():
    a = estimate_trace_mean(DOM, 1.0, T, quick_cfg(seed=1))
    b = estimate_trace_mean(DOM, 1.0, T, quick_cfg(seed=2))
    assert a.value != b.value


def test_inner_paths_reuse_starting_points(model):
    est = estimate_trace_mean(DOM, 1.0, T, quick_cfg(n_paths_per_x=2), model)
    assert est.n_paths_per_x == 2
    assert np.isfinite(est.value) and est.std_error > 0


def test_overflow_counting_with_tiny_cap(model):
    cfg = quick_cfg(n_outer=1024, exponent_cap=1e-12)
    est = estimate_trace_mean(DOM, 1.0, T, cfg, model)
    assert est.overflow_count > 0
    assert not est.valid
    assert est.overflow_fraction > 1e-4
    # the cap only counts, it never clips: values agree with a huge cap
    loose = estimate_trace_mean(DOM, 1.0, T, quick_cfg(n_outer=1024), model)
    assert est.value == loose.value


def test_variance_positive_and_growing_in_kappa():
    small = estimate_trace_variance(DOM, 0.5, T, quick_cfg(n_outer=1500))
    large = estimate_trace_variance(DOM, 1.0, T, quick_cfg(n_outer=1500))
    assert small.value > 0
    assert large.value > small.value


def test_mass_variance_positive():
    est = estimate_mass_variance(DOM, 1.0, T, quick_cfg(n_outer=1500))
    assert est.value > 0
    assert est.std_error > 0


def test_fingerprint_tracks_configuration(model):
    cfg = quick_cfg()
    fp = config_fingerprint("trace_mean", DOM, 1.0, T, cfg)
    assert fp == config_fingerprint("trace_mean", DOM, 1.0, T, quick_cfg())
    assert fp != config_fingerprint("trace_mean", DOM, 2.0, T, cfg)
    assert fp != config_fingerprint("mass_mean", DOM, 1.0, T, cfg)
    assert fp != config_fingerprint("trace_mean", Rectangle(1.0, 2.0), 1.0, T, cfg)
    assert fp != config_fingerprint("trace_mean", DOM, 1.0, T, quick_cfg(seed=99))
    est = estimate_trace_mean(DOM, 1.0, T, cfg, model)
    assert est.config_fingerprint == fp


def test_domain_tags_are_distinct():
    tags = {
        domain_tag(Rectangle(1.0, 1.0)),
        domain_tag(Rectangle(1.0, 2.0)),
        domain_tag(Disk(1.0)),
        domain_tag(KochPrefractal(2, 1.0)),
        domain_tag(KochPrefractal(3, 1.0)),
    }
    assert len(tags) == 5


def test_under_resolved_eps_warns(model):
    cfg = FkConfig(n_outer=16, eps=1e-5, n_steps=64, seed=3)
    with pytest.warns(UserWarning):
        estimate_trace_mean(DOM, 0.5, T, cfg, model)


def test_config_validation():
    with pytest.raises(ValueError):
        FkConfig(n_outer=0)
    with pytest.raises(ValueError):
        FkConfig(n_outer=10, eps=-1.0)
    with pytest.raises(ValueError):
        FkConfig(n_outer=10, n_steps=1)
    with pytest.raises(ValueError):
        estimate_trace_mean(DOM, 1.0, -0.05, quick_cfg())


@pytest.mark.filterwarnings("ignore:eps=")
def test_exponential_excess_is_higher_order(model):
    # the gap between E[1 e^{k^2 gamma}] and E[1], relative to t, shrinks
    # as t -> 0; checked across a dyadic grid within error bands.  The
    # resolution warning is expected: half-millisecond steps against an
    # eps of one percent of t is the documented trade-off at this size.
    cfg = FkConfig(n_outer=10000, eps_scale=1e-2, n_steps=512, seed=33)
    scaled = []
    for t in (0.04, 0.02, 0.01):
        est = estimate_trace_mean(DOM, 1.0, t, cfg, model)
        back = 2.0 * math.pi * t / DOM.area()
        excess = (est.value / est.prefactor - est.reference) * back
        se = est.std_error / est.prefactor * back
        scaled.append((abs(excess) / t, se / t))
    for (d_prev, se_prev), (d_next, se_next) in zip(scaled, scaled[1:]):
        assert d_next <= d_prev + 2.0 * (se_prev + se_next)
    assert scaled[-1][0] < scaled[0][0] + 2.0 * (scaled[0][1] + scaled[-1][1])
