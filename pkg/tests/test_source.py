"""Down-conversion pair source: statistics, joint angles, determinism.

Oracles:
- thermal single-mode photon statistics in closed form: <n> = sinh^2 x,
  <n(n-1)>/<n>^2 = 2, computed here from scratch and compared both to the
  library's closed forms and to sampled counts;
- the joint angle sampler is checked against the analytic density through
  moment identities (the pair is anti-correlated: var(t1+t2) << var(t1-t2));
- energy conservation of the sampled wavelengths against the fixed pump.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biphoton import (
    FourthOrderSampler,
    GainParam,
    OpticalConfig,
    SlitGeometry,
    coincidence_density,
    correlation_coefficient,
    cross_correlation,
    factorial_moment,
    generate_pairs,
    mean_pair_number,
)
from biphoton.source import sample_pair_counts, thin_times

gains = st.floats(min_value=1e-3, max_value=0.5)


@given(x=gains)
def test_mean_pair_number_closed_form(x):
    assert math.isclose(mean_pair_number(x), math.sinh(x) ** 2, rel_tol=1e-12)


@given(x=gains)
def test_thermal_second_factorial_moment(x):
    """<n(n-1)> = 2 <n>^2 for a single-mode thermal distribution."""
    n = mean_pair_number(x)
    assert math.isclose(factorial_moment(2, x), 2.0 * n * n, rel_tol=1e-9)


@given(x=gains)
def test_lossless_cross_correlation_is_thermal(x):
    """<n_s n_i> = <n> + 2<n>^2; normalized, g12 = 2 + 1/<n>."""
    n = mean_pair_number(x)
    assert math.isclose(cross_correlation(x), n + 2.0 * n * n, rel_tol=1e-12)
    assert math.isclose(cross_correlation(x) / n**2, 2.0 + 1.0 / n, rel_tol=1e-9)


def test_sampled_counts_match_thermal_moments():
    rng = np.random.default_rng(7)
    mean_n = 0.8
    counts = sample_pair_counts(mean_n, 200_000, rng)
    n_hat = counts.mean()
    assert abs(n_hat - mean_n) < 5.0 * math.sqrt(mean_n * (1 + mean_n) / len(counts))
    ratio = np.mean(counts * (counts - 1.0)) / n_hat**2
    assert abs(ratio - 2.0) < 0.05


def test_gain_validation():
    with pytest.raises(ValueError):
        GainParam(x=-0.1)
    with pytest.raises(ValueError):
        GainParam(x=0.8)  # beyond the parametric-approximation cap
    GainParam(x=0.8, allow_high_gain=True)
    with pytest.raises(ValueError):
        GainParam(pair_rate_hz=-100.0, duration_s=1.0)


def test_pair_stream_basic_properties(geom, opt):
    gain = GainParam(pair_rate_hz=5e3, duration_s=2.0)
    stream = generate_pairs(gain, geom, opt, seed=11)
    t = stream.times_s
    assert np.all(np.diff(t) >= 0)
    assert t[0] >= 0.0 and t[-1] <= gain.duration_s
    # Poisson rate check at 5 sigma
    expect = gain.pair_rate_hz * gain.duration_s
    assert abs(len(t) - expect) < 5.0 * math.sqrt(expect)
    assert stream.energy_conservation_residual(opt.pump_wavelength_m) < 1e-9


def test_generate_pairs_deterministic(geom, opt):
    gain = GainParam(pair_rate_hz=2e3, duration_s=1.0)
    s1 = generate_pairs(gain, geom, opt, seed=42)
    s2 = generate_pairs(gain, geom, opt, seed=42)
    assert np.array_equal(s1.times_s, s2.times_s)
    assert np.array_equal(s1.angle_signal_rad, s2.angle_signal_rad)
    assert np.array_equal(s1.angle_idler_rad, s2.angle_idler_rad)
    s3 = generate_pairs(gain, geom, opt, seed=43)
    assert not np.array_equal(s1.times_s, s3.times_s)


def test_fringe_lives_in_difference_coordinate_only(geom, opt):
    """Sampled pairs interfere in sin(t1)-sin(t2); the sum stays smooth.

    The two exchange paths differ in phase by k*s*(sin t1 - sin t2), so the
    joint density carries cos^2 fringes along the difference coordinate.
    Second moments cannot see this (the broad envelope dominates both
    coordinates); the discriminating statistic is fringe power at the
    lambda/s frequency, present in the difference histogram and absent in
    the sum histogram.
    """
    from biphoton import fringe_period_rad, fringe_projection

    gain = GainParam(pair_rate_hz=2e4, duration_s=5.0)
    stream = generate_pairs(gain, geom, opt, seed=3)
    u = np.sin(stream.angle_signal_rad) + np.sin(stream.angle_idler_rad)
    d = np.sin(stream.angle_signal_rad) - np.sin(stream.angle_idler_rad)
    edges = np.linspace(-0.06, 0.06, 241)
    centers = 0.5 * (edges[1:] + edges[:-1])
    period = fringe_period_rad(geom, opt)
    hist_u, _ = np.histogram(u, bins=edges)
    hist_d, _ = np.histogram(d, bins=edges)
    v_diff = fringe_projection(hist_d.astype(float), centers, period)
    v_sum = fringe_projection(hist_u.astype(float), centers, period)
    assert v_diff > 0.5
    assert v_sum < 0.1


def test_sampler_matches_analytic_density(geom, opt):
    """Histogram of sampled sum coordinate vs the integrated density."""
    sampler = FourthOrderSampler(geom, opt)
    rng = np.random.default_rng(5)
    t1, t2 = sampler.sample_joint(rng, 100_000)
    u = np.sin(t1) + np.sin(t2)
    edges = np.linspace(-0.02, 0.02, 41)
    hist, _ = np.histogram(u, bins=edges, density=True)
    # analytic marginal of the sum coordinate, by quadrature on a fine grid
    g = np.linspace(-0.2, 0.2, 2001)
    centers = 0.5 * (edges[1:] + edges[:-1])
    pred = np.empty_like(centers)
    d = g  # difference coordinate; small angles make the Jacobian ~constant
    for i, s in enumerate(centers):
        th1 = np.arcsin(np.clip((s + d) / 2.0, -1.0, 1.0))
        th2 = np.arcsin(np.clip((s - d) / 2.0, -1.0, 1.0))
        pred[i] = np.trapezoid(coincidence_density(th1, th2, geom, opt), d)
    pred /= np.trapezoid(pred, centers)
    inside = pred > 0.05 * pred.max()
    rel = np.abs(hist[inside] - pred[inside]) / pred[inside]
    assert np.median(rel) < 0.08


def test_sampler_norm_positive_and_stable(geom, opt):
    sampler = FourthOrderSampler(geom, opt)
    n1 = sampler.norm(n_quad=1001)
    n2 = sampler.norm(n_quad=4001)
    assert n1 > 0
    assert math.isclose(n1, n2, rel_tol=1e-4)


def test_correlation_coefficient_lossless_unity(geom, opt):
    gain = GainParam(pair_rate_hz=5e3, duration_s=5.0)
    stream = generate_pairs(gain, geom, opt, seed=9)
    sigma12 = correlation_coefficient(stream, window_s=0.01)
    assert abs(sigma12 - 1.0) < 1e-12


def test_correlation_degrades_monotonically_with_loss(geom, opt):
    gain = GainParam(pair_rate_hz=2e4, duration_s=5.0)
    stream = generate_pairs(gain, geom, opt, seed=21)
    rng = np.random.default_rng(100)
    from biphoton.source import count_correlation

    values = []
    for keep in (1.0, 0.7, 0.4, 0.15):
        ta = thin_times(stream.times_s, keep, rng)
        tb = thin_times(stream.times_s, keep, rng)
        values.append(count_correlation(ta, tb, stream.duration_s, 0.01))
    assert values[0] == pytest.approx(1.0, abs=1e-12)
    assert all(a > b for a, b in zip(values, values[1:]))


def test_thin_times_bounds():
    rng = np.random.default_rng(0)
    t = np.sort(rng.uniform(0, 1, 1000))
    kept = thin_times(t, 0.5, rng)
    assert 0 < len(kept) < len(t)
    assert np.all(np.isin(kept, t))
    with pytest.raises(ValueError):
        thin_times(t, 1.5, rng)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_pair_times_always_sorted_and_in_range(seed):
    geom, opt = SlitGeometry(), OpticalConfig()
    gain = GainParam(pair_rate_hz=500.0, duration_s=1.0)
    stream = generate_pairs(gain, geom, opt, seed=seed)
    t = stream.times_s
    if len(t):
        assert np.all(np.diff(t) >= 0)
        assert t[0] >= 0 and t[-1] <= gain.duration_s


def test_aimed_angles_concentrate_on_slits(geom, opt):
    """Bench mode keeps the pre-slit aims: two narrow angle clusters."""
    gain = GainParam(pair_rate_hz=1e4, duration_s=1.0)
    stream = generate_pairs(gain, geom, opt, seed=2, angles="aimed")
    aim_a = math.atan2(geom.slit_center_a_m, 0.5)
    assert np.allclose(stream.angle_signal_rad, aim_a, atol=1e-12)


def test_wavelength_spread_respects_energy_conservation(geom, opt):
    gain = GainParam(pair_rate_hz=1e4, duration_s=1.0)
    stream = generate_pairs(gain, geom, opt, seed=4, wavelength_fwhm_m=4e-9)
    assert stream.lambda_signal_m.std() > 0
    assert stream.energy_conservation_residual(opt.pump_wavelength_m) < 1e-9
