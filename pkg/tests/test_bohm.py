"""Paired guided trajectories on the two-photon wavefunction.

Oracles:
- the freely spreading Gaussian packet, whose quantum potential, guidance
  velocity and trajectories are all known in closed form;
- exact symmetry identities of the velocity field (exchange and parity)
  that the integrator is required to preserve bit-for-bit on symmetric
  states;
- a relative-coordinate field psi = f(y1 - y2), for which v1 + v2 = 0
  identically and y1 + y2 must be a constant of motion for any start.

A reduced-size double slit (wider slits on a coarser grid) exercises the
mirror-start machinery quickly; the production-scale run lives in the
acceptance suite.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biphoton import OpticalConfig, SlitGeometry
from biphoton.bohm import (
    FreeEvolution,
    GridSpec,
    ScaledFarField,
    WaveField2P,
    build_twoslit_field,
    default_t_star,
    effective_mass,
    ensemble_run,
    ergodicity_probe,
    gaussian_packet_field,
    gaussian_sigma,
    integrate_trajectory,
    mirror_samples,
    pair_constraint_check,
    propagate,
    quantum_potential,
    velocity_field,
)

# reduced double slit: same physics, 16x cheaper FFTs than production scale
GRID = GridSpec(n=256, half_span_m=500e-6)
GEOM = SlitGeometry(slit_width_m=40e-6, slit_separation_m=200e-6)
OPT = OpticalConfig()


def test_grid_axis_antisymmetric_exact():
    g = GridSpec(n=64, half_span_m=1e-3)
    y = g.axis()
    for j in range(1, 32):
        assert y[64 - j] == -y[j]
    with pytest.raises(ValueError):
        GridSpec(n=63)
    with pytest.raises(ValueError):
        GridSpec(n=8)


def test_twoslit_grid_resolution_guard():
    with pytest.raises(ValueError, match="resolves the slit"):
        build_twoslit_field(SlitGeometry(), OPT, GridSpec(n=256))


def test_gaussian_quantum_potential_closed_form():
    """Q = (hbar^2/2m) * (1/sigma_t^2 - (y1^2+y2^2)/(4 sigma_t^4))."""
    m = effective_mass(OPT)
    sigma0 = 50e-6
    t = 1e-10
    field = gaussian_packet_field(GRID, sigma0, t, m)
    q = quantum_potential(field)
    st_ = gaussian_sigma(sigma0, t, m)
    y = GRID.axis()
    y1, y2 = y[:, None], y[None, :]
    expected = (field.hbar_eff**2 / (2.0 * m)) * (
        1.0 / st_**2 - (y1**2 + y2**2) / (4.0 * st_**4)
    )
    core = (y1**2 + y2**2) < (3.0 * st_) ** 2
    valid = core & ~q.mask
    rel = np.abs(q.values[valid] - expected[valid]) / np.abs(expected).max()
    assert np.max(rel) < 1e-4


def test_gaussian_velocity_closed_form():
    """v_i = y_i * hbar * beta / (2 m sigma0^2 (1 + beta^2))."""
    m = effective_mass(OPT)
    sigma0 = 50e-6
    t = 1e-10
    field = gaussian_packet_field(GRID, sigma0, t, m)
    beta = field.hbar_eff * t / (2.0 * m * sigma0**2)
    v1, v2, mask = velocity_field(field)
    y = GRID.axis()
    coef = field.hbar_eff * beta / (2.0 * m * sigma0**2 * (1.0 + beta * beta))
    expect1 = np.broadcast_to((y * coef)[:, None], v1.shape)
    st_ = gaussian_sigma(sigma0, t, m)
    core = (y[:, None] ** 2 + y[None, :] ** 2) < (3.0 * st_) ** 2
    valid = core & ~mask
    scale = np.abs(expect1[valid]).max()
    assert np.max(np.abs(v1[valid] - expect1[valid])) / scale < 1e-4
    assert np.max(np.abs(v2[valid] - expect1.T[valid])) / scale < 1e-4


def test_free_gaussian_trajectory_scaling():
    """Paths ride the spreading width: y(t) = y0 * sigma(t) / sigma0."""
    m = effective_mass(OPT)
    sigma0 = 50e-6
    field = gaussian_packet_field(GRID, sigma0, 0.0, m)
    evo = FreeEvolution(field)
    t_final = 3e-10
    y0_1, y0_2 = 30e-6, -45e-6
    traj = integrate_trajectory(evo, (y0_1, y0_2), dt=t_final / 300, t_final=t_final)
    scale_t = gaussian_sigma(sigma0, traj.times_s, m) / sigma0
    for y_num, y0 in ((traj.y1_m, y0_1), (traj.y2_m, y0_2)):
        rel = np.abs(y_num - y0 * scale_t) / (abs(y0) * scale_t[-1])
        assert np.max(rel) < 1e-3


def test_propagate_norm_conservation():
    m = effective_mass(OPT)
    field = gaussian_packet_field(GRID, 50e-6, 0.0, m)
    out = propagate(field, dt=1e-13, steps=1000)
    assert abs(out.norm() - 1.0) < 1e-6
    assert out.time_s == pytest.approx(1e-10)


def test_propagate_zero_steps_identity():
    m = effective_mass(OPT)
    field = gaussian_packet_field(GRID, 50e-6, 0.0, m)
    assert propagate(field, 1e-13, 0) is field


def test_twoslit_velocity_symmetries_exact():
    """Exchange (v1 = v2^T) and parity (v(-y) = -v(y)) hold bit-for-bit."""
    field = build_twoslit_field(GEOM, OPT, GRID)
    evo = FreeEvolution(field)
    assert evo.symmetrize
    v1, v2, _ = evo.velocities_at(2e-12)
    assert np.array_equal(v1, v2.T)
    from biphoton.bohm import _negate_indices

    assert np.array_equal(v1, -_negate_indices(v1))


def test_relative_coordinate_field_conserves_sum_for_any_start():
    """psi = f(y1 - y2) gives v1 = -v2; y1 + y2 is frozen for every start.

    f is built on the wrapped difference so it is smooth on the periodic
    domain (a bare Gaussian in y1 - y2 is O(1)-discontinuous at the torus
    corners and the resulting spectral ringing masks the invariant).
    """
    y = GRID.axis()
    m = effective_mass(OPT)
    span = 2.0 * GRID.half_span_m
    d = y[:, None] - y[None, :]
    d = (d + GRID.half_span_m) % span - GRID.half_span_m
    rel = np.exp(-(d**2) / (4.0 * (40e-6) ** 2))
    field = WaveField2P.from_psi(rel, y, y.copy(), 0.0, m, normalize=True)
    evo = FreeEvolution(field)
    for start in ((40e-6, -10e-6), (-80e-6, -120e-6), (5e-6, 65e-6)):
        traj = integrate_trajectory(evo, start, dt=2e-12, t_final=1.5e-10)
        total = traj.y1_m + traj.y2_m
        assert np.max(np.abs(total - total[0])) < 1e-9 * GRID.half_span_m


@pytest.fixture(scope="module")
def mirror_ensemble():
    field = build_twoslit_field(GEOM, OPT, GRID)
    evolution = ScaledFarField(field, default_t_star(GRID))
    t_final = evolution.tau_of(1.0 / 299_792_458.0)  # 1 m of flight
    return ensemble_run(
        evolution, n_traj=48, sampling="mirror", seed=5, t_final=t_final,
        n_steps=120,
    )


def test_mirror_starts_are_exactly_paired():
    field = build_twoslit_field(GEOM, OPT, GRID)
    starts = mirror_samples(field, 40, np.random.default_rng(3))
    assert starts.shape == (40, 2)
    assert np.array_equal(starts[0::2, 0], -starts[0::2, 1])
    assert np.array_equal(starts[0::2, 0], starts[1::2, 1])
    with pytest.raises(ValueError):
        mirror_samples(field, 7, np.random.default_rng(0))


def test_mirror_ensemble_conserves_pair_sum(mirror_ensemble):
    total = mirror_ensemble.y1_m + mirror_ensemble.y2_m
    drift = np.max(np.abs(total - total[0]))
    assert drift < 1e-9 * GRID.half_span_m


def test_mirror_ensemble_never_crosses_axis(mirror_ensemble):
    for i in range(mirror_ensemble.n_traj):
        report = pair_constraint_check(mirror_ensemble.trajectory(i))
        assert not report.y1_sign_changed
        assert not report.y2_sign_changed


def test_ergodicity_breaks_maximally(mirror_ensemble):
    """Every trajectory's time average differs from the ensemble average by
    the maximal amount: space average 0 (exact pairing), time averages +-1."""
    report = ergodicity_probe(mirror_ensemble)
    assert report.space_average == 0.0
    assert np.array_equal(np.abs(report.time_averages), np.ones(48))
    assert report.min_discrepancy == 1.0


def test_ensemble_deterministic():
    field = build_twoslit_field(GEOM, OPT, GRID)
    evolution = ScaledFarField(field, default_t_star(GRID))
    t_final = evolution.tau_of(1.0 / 299_792_458.0)
    a = ensemble_run(evolution, 8, "mirror", seed=9, t_final=t_final, n_steps=30)
    b = ensemble_run(evolution, 8, "mirror", seed=9, t_final=t_final, n_steps=30)
    assert np.array_equal(a.y1_m, b.y1_m)
    assert np.array_equal(a.y2_m, b.y2_m)


def test_constraint_check_not_applicable_for_asymmetric_field():
    y = GRID.axis()
    m = effective_mass(OPT)
    f = np.exp(-((y - 30e-6) ** 2) / (4.0 * (40e-6) ** 2))
    g = np.exp(-(y**2) / (4.0 * (80e-6) ** 2))
    psi = np.outer(f, g)
    field = WaveField2P.from_psi(psi, y, y.copy(), 0.0, m, normalize=True)
    evo = FreeEvolution(field)
    assert not evo.symmetrize
    traj = integrate_trajectory(evo, (20e-6, -20e-6), dt=5e-12, t_final=5e-11)
    assert not pair_constraint_check(traj, field).applicable
    sym = build_twoslit_field(GEOM, OPT, GRID)
    traj2 = integrate_trajectory(FreeEvolution(sym), (50e-6, -50e-6), dt=5e-12,
                                 t_final=5e-11)
    assert pair_constraint_check(traj2, sym).applicable


def test_scaled_far_field_time_maps_are_inverse():
    field = build_twoslit_field(GEOM, OPT, GRID)
    evo = ScaledFarField(field, default_t_star(GRID))
    for t in (1e-13, 5e-12, 1e-9, 3.3e-9):
        assert math.isclose(evo.t_of(evo.tau_of(t)), t, rel_tol=1e-9)
    assert evo.magnification(0.0) == 1.0
    assert evo.magnification(evo.t_star) == 2.0
    # tau saturates at t_star: the whole semi-infinite flight fits the frame
    assert evo.tau_of(3.3e-9) < evo.t_star
    assert evo.tau_of(1e6) <= evo.t_star


def test_scaled_far_field_rejects_bad_inputs():
    field = build_twoslit_field(GEOM, OPT, GRID)
    with pytest.raises(ValueError):
        ScaledFarField(field, -1.0)
    shifted = propagate(field, 1e-12, 1)
    with pytest.raises(ValueError):
        ScaledFarField(shifted, default_t_star(GRID))


def test_physical_endpoints_magnify(mirror_ensemble):
    e1, e2 = mirror_ensemble.physical_endpoints()
    b = mirror_ensemble.magnification[-1]
    assert b > 1.0
    assert np.array_equal(e1, b * mirror_ensemble.y1_m[-1])
    assert np.array_equal(e2, b * mirror_ensemble.y2_m[-1])
