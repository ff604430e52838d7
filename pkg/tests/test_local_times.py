"""Renormalized intersection local times: oracles and invariants."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from anderson_lab import local_times as lt
from anderson_lab.paths import sample_bridge, sample_bridge_batch, sample_motion, sample_motion_batch


def test_motion_triangle_frozen_value():
    # (t + eps) log(1 + t/eps) - t, over 2 pi, at t = 0.05, eps = 1e-3
    got = lt.silt_mean_motion_exact(0.05, 1e-3)
    assert got == pytest.approx(0.0239566, abs=5e-7)


def test_motion_closed_form_matches_quadrature():
    for region in (lt.Triangle(0.07), lt.DiagBlock(0.01, 0.06)):
        closed = lt.silt_mean_motion_exact(0.07, 2e-3, region=region)
        quad = lt._continuum_mean(0.07, 2e-3, region, lambda s: lt._rho_motion(s, 2e-3))
        assert closed == pytest.approx(quad, rel=1e-10)


def test_motion_rect_mean_against_double_integral():
    t, eps = 0.1, 1e-3
    region = lt.Rect(0.0, 0.04, 0.05, 0.1)
    got = lt.silt_mean_motion_exact(t, eps, region=region)
    want, err = integrate.dblquad(
        lambda r2, r1: 1.0 / (2.0 * math.pi * (eps + r2 - r1)),
        region.a, region.b, lambda r1: region.c, lambda r1: region.d,
    )
    assert err < 1e-7
    assert got == pytest.approx(want, rel=1e-7)


def test_bridge_triangle_mean_against_double_integral():
    t, eps = 0.05, 1e-3
    got = lt.silt_mean_bridge_exact(t, eps)
    want, err = integrate.dblquad(
        lambda r2, r1: 1.0 / (2.0 * math.pi * (eps + (r2 - r1) * (t - (r2 - r1)) / t)),
        0.0, t, lambda r1: r1, lambda r1: t,
    )
    assert err < 1e-7
    assert got == pytest.approx(want, rel=1e-7)


def test_bridge_rect_mean_against_double_integral():
    t, eps = 0.1, 1e-3
    region = lt.Rect(0.0, 0.04, 0.06, 0.1)
    got = lt.silt_mean_bridge_exact(t, eps, region=region)
    want, err = integrate.dblquad(
        lambda r2, r1: 1.0 / (2.0 * math.pi * (eps + (r2 - r1) * (t - (r2 - r1)) / t)),
        region.a, region.b, lambda r1: region.c, lambda r1: region.d,
    )
    assert err < 1e-7
    assert got == pytest.approx(want, rel=1e-7)


def test_pair_mean_against_double_integral():
    # bridges from a common start: lag density mixes both time variances
    t, eps = 0.05, 1e-3
    got = lt.milt_mean_bridge_exact(t, eps)

    def v(r):
        return r * (t - r) / t

    want, err = integrate.dblquad(
        lambda r2, r1: 1.0 / (2.0 * math.pi * (eps + v(r1) + v(r2))),
        0.0, t, lambda r1: 0.0, lambda r1: t,
    )
    assert err < 1e-7
    assert got == pytest.approx(want, rel=1e-7)


def test_discrete_mean_converges_to_continuum():
    t, eps = 0.05, 1e-3
    limit = lt.silt_mean_bridge_exact(t, eps)
    gaps = [
        abs(lt.silt_mean_bridge_exact(t, eps, n_steps=n) - limit)
        for n in (128, 256, 512)
    ]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 5e-3 * limit


def test_asymptotic_error_shrinks_with_eps():
    # four regimes of the log(1/eps) expansion, fixed horizon
    t = 0.1
    cases = [
        ("bridge", lt.DiagBlock(0.01, 0.09)),
        ("motion", lt.DiagBlock(0.0, t)),
        ("bridge", lt.Rect(0.01, 0.05, 0.06, 0.09)),
        ("bridge", None),
    ]
    for kind, region in cases:
        rel_gaps = []
        for eps in (1e-2, 1e-3, 1e-4):
            if kind == "bridge":
                exact = lt.silt_mean_bridge_exact(t, eps, region=region)
            else:
                exact = lt.silt_mean_motion_exact(t, eps, region=region)
            asym = lt.silt_mean_asymptotic(t, eps, kind, region=region)
            rel_gaps.append(abs(asym - exact) / exact)
        assert rel_gaps[0] > rel_gaps[1] > rel_gaps[2]
        assert rel_gaps[2] < 1e-2


def test_bridge_triangle_asymptotic_is_exact_in_form():
    # leading form (t/2pi)(log(1/eps) + log t); compare against quadrature
    t, eps = 0.1, 1e-5
    asym = lt.silt_mean_asymptotic(t, eps, "bridge")
    want = t / (2.0 * math.pi) * (math.log(1.0 / eps) + math.log(t))
    assert asym == pytest.approx(want, rel=1e-12)
    exact = lt.silt_mean_bridge_exact(t, eps)
    assert asym == pytest.approx(exact, rel=2e-3)


def test_motion_rect_asymptotic_rejected():
    with pytest.raises(ValueError):
        lt.silt_mean_asymptotic(0.1, 1e-3, "motion", region=lt.Rect(0.0, 0.02, 0.05, 0.1))


def test_region_validation():
    with pytest.raises(ValueError):
        lt.Triangle(0.0)
    with pytest.raises(ValueError):
        lt.DiagBlock(0.05, 0.05)
    with pytest.raises(ValueError):
        lt.Rect(0.0, 0.06, 0.05, 0.1)  # overlapping windows
    with pytest.raises(ValueError):
        lt.Rect(-0.01, 0.02, 0.05, 0.1)


def test_region_endpoints_must_sit_on_grid():
    rng = np.random.default_rng(5)
    path = sample_bridge(np.zeros(2), 0.05, 128, rng)
    with pytest.raises(ValueError):
        lt.approx_silt(path, 4e-3, region=lt.DiagBlock(0.0, 0.05 * 0.37))


def test_pair_horizon_and_grid_must_match():
    rng = np.random.default_rng(6)
    a = sample_bridge(np.zeros(2), 0.05, 128, rng)
    b = sample_bridge(np.zeros(2), 0.06, 128, rng)
    c = sample_bridge(np.zeros(2), 0.05, 256, rng)
    with pytest.raises(ValueError):
        lt.approx_milt(a, b, 1e-3)
    with pytest.raises(ValueError):
        lt.approx_milt(a, c, 1e-3)


def test_silt_batch_matches_single_path():
    from anderson_lab.paths import DiscretePath

    rng = np.random.default_rng(7)
    t, eps, n = 0.05, 4e-3, 128
    starts = rng.uniform(size=(4, 2))
    pos = sample_bridge_batch(starts, t, n, rng)
    batch = lt.silt_batch_triangle(pos, t, eps)
    for i in range(4):
        path = DiscretePath("bridge", starts[i], t, n, pos[i])
        # the BLAS matvec may pick a different accumulation for a one-row
        # batch, so equality is to the ulp rather than bitwise
        assert lt.approx_silt(path, eps) == pytest.approx(batch[i], rel=1e-13)


def test_shift_invariance():
    rng = np.random.default_rng(8)
    t, eps, n = 0.05, 2e-3, 256
    pos = sample_motion_batch(np.zeros((1, 2)), t, n, rng)
    base = lt.silt_batch_triangle(pos, t, eps)[0]
    shifted = lt.silt_batch_triangle(pos + np.array([13.25, -7.5]), t, eps)[0]
    assert shifted == pytest.approx(base, rel=1e-12)


def test_diffusive_scaling_coupling():
    # beta^eps over horizon t equals t times beta^{eps/t} of the unit-time
    # path, when the two paths are coupled by rescaling
    rng = np.random.default_rng(9)
    t, eps, n = 0.05, 2e-3, 256
    pos_unit = sample_motion_batch(np.zeros((1, 2)), 1.0, n, rng)
    pos_scaled = math.sqrt(t) * pos_unit
    long_time = lt.silt_batch_triangle(pos_scaled, t, eps, truncate=False)[0]
    unit_time = lt.silt_batch_triangle(pos_unit, 1.0, eps / t, truncate=False)[0]
    assert long_time == pytest.approx(t * unit_time, rel=1e-12)


def test_pair_symmetry_is_bitwise():
    rng = np.random.default_rng(10)
    t, eps, n = 0.05, 4e-3, 128
    a = sample_bridge(np.array([0.3, 0.4]), t, n, rng)
    b = sample_bridge(np.array([0.32, 0.41]), t, n, rng)
    assert lt.approx_milt(a, b, eps) == lt.approx_milt(b, a, eps)


def test_separated_pairs_vanish():
    from anderson_lab.paths import DiscretePath

    rng = np.random.default_rng(11)
    t, eps, n = 0.05, 2e-3, 256
    a = sample_bridge(np.zeros(2), t, n, rng)
    b_pos = a.positions + np.array([1.0, 0.0])
    b = DiscretePath("bridge", b_pos[0], t, n, b_pos)
    diff = a.positions[:, None, :] - b_pos[None, :, :]
    d2_min = (diff ** 2).sum(axis=2).min()
    assert d2_min > lt.KERNEL_CUTOFF * eps  # genuinely separated
    assert lt.approx_milt(a, b, eps) == 0.0
    free = lt.approx_milt(a, b, eps, truncate=False)
    # every pair kernel is below e^{-d2_min/2eps}/(2 pi eps)
    bound = t * t * math.exp(-d2_min / (2 * eps)) / (2 * math.pi * eps)
    assert 0.0 < free <= bound


def test_truncation_changes_little_on_real_paths():
    rng = np.random.default_rng(12)
    t, eps, n = 0.05, 2e-3, 256
    pos = sample_bridge_batch(rng.uniform(size=(8, 2)), t, n, rng)
    full = lt.silt_batch_triangle(pos, t, eps, truncate=False)
    cut = lt.silt_batch_triangle(pos, t, eps, truncate=True)
    assert np.all(cut <= full)
    assert np.max(full - cut) < 1e-9


def test_renormalized_silt_centers_the_estimate():
    # fixed-seed z-test: mean of renormalized values compatible with zero
    rng = np.random.default_rng(13)
    t, eps, n, n_mc = 0.05, 1e-3, 512, 1500
    pos = sample_bridge_batch(np.tile([0.5, 0.5], (n_mc, 1)), t, n, rng)
    raw = lt.silt_batch_triangle(pos, t, eps)
    centered = raw - lt.silt_mean_bridge_exact(t, eps, n_steps=n)
    z = centered.mean() / (centered.std(ddof=1) / math.sqrt(n_mc))
    assert abs(z) < 3.0


def test_renormalized_silt_motion_mean():
    rng = np.random.default_rng(14)
    t, eps, n, n_mc = 0.05, 1e-3, 512, 1500
    pos = sample_motion_batch(np.tile([0.5, 0.5], (n_mc, 1)), t, n, rng)
    raw = lt.silt_batch_triangle(pos, t, eps)
    centered = raw - lt.silt_mean_motion_exact(t, eps, n_steps=n)
    z = centered.mean() / (centered.std(ddof=1) / math.sqrt(n_mc))
    assert abs(z) < 3.0


def test_renormalized_value_fields():
    rng = np.random.default_rng(15)
    path = sample_bridge(np.array([0.5, 0.5]), 0.05, 256, rng)
    val = lt.renormalized_silt(path, 2e-3)
    assert val.eps == 2e-3
    assert isinstance(val.region, lt.Triangle)
    assert val.renormalized == val.raw - val.expected_mean


def test_pair_batch_matches_single():
    rng = np.random.default_rng(16)
    t, eps, n = 0.05, 4e-3, 128
    pos1 = sample_bridge_batch(rng.uniform(size=(5, 2)) * 0.1, t, n, rng)
    pos2 = sample_bridge_batch(rng.uniform(size=(5, 2)) * 0.1, t, n, rng)
    batch = lt.milt_batch(pos1, pos2, t, eps)
    from anderson_lab.paths import DiscretePath

    for i in range(5):
        a = DiscretePath("bridge", pos1[i, 0], t, n, pos1[i])
        b = DiscretePath("bridge", pos2[i, 0], t, n, pos2[i])
        # the canonical argument ordering may transpose the kernel loop,
        # shifting the accumulation order by an ulp
        assert lt.approx_milt(a, b, eps) == pytest.approx(batch[i], rel=1e-13)


def test_resolution_warning_fires():
    rng = np.random.default_rng(17)
    path = sample_bridge(np.zeros(2), 0.05, 64, rng)
    with pytest.warns(UserWarning):
        lt.approx_silt(path, 1e-4)


def test_renorm_constant_value():
    # kappa^2 log(1/eps) / 2 pi
    assert lt.renorm_constant(2.0, 1e-3) == pytest.approx(
        4.0 * math.log(1e3) / (2.0 * math.pi), rel=1e-14
    )


@given(
    a=st.floats(min_value=0.0, max_value=0.4),
    width=st.floats(min_value=0.05, max_value=0.5),
)
@settings(max_examples=25, deadline=None)
def test_trapezoid_weights_integrate_constants(a, width):
    # region weights must integrate 1 exactly to the region's time length
    t, n = 1.0, 200
    dt = t / n
    i0 = round(a / dt)
    i1 = round((a + width) / dt)
    if i1 <= i0:
        i1 = i0 + 1
    w = lt._trapezoid_weights(dt, i0, i1)
    assert w.sum() == pytest.approx((i1 - i0) * dt, rel=1e-12)
    assert w[0] == w[-1] == dt / 2.0
