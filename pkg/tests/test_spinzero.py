import numpy as np
import pytest

from bbbtraj import spinzero as sz
from bbbtraj.errors import StepSizeError
from bbbtraj.models import (build_circle, harmonic_ground_state, packet_fields, periodic_gaussian,
                            plane_wave)
from bbbtraj.reference import UnitaryIntegrator, evolve


def test_quantum_potential_plane_wave_zero():
    assert np.abs(sz.quantum_potential(np.full(16, 1 / 16), 1.0, 0.5).Q).max() < 1e-12


def test_quantum_potential_scale_free():
    P = np.abs(periodic_gaussian(32, 0.5, 8.0, 2.0)) ** 2
    q1 = sz.quantum_potential(P, 1.0, 0.5).Q
    q2 = sz.quantum_potential(P * 7.3, 1.0, 0.5).Q
    assert np.allclose(q1, q2, rtol=1e-12, atol=1e-14)


def test_quantum_potential_second_order_in_a():
    L, w = 20.0, 2.0
    errs = []
    for N in (64, 128, 256):
        a = L / N
        P = np.abs(periodic_gaussian(N, a, L / 2, w)) ** 2
        Q = sz.quantum_potential(P, 1.0, a).Q
        exact = packet_fields(np.arange(N) * a, L, L / 2, w, 0.0, 1.0)["Q"]
        errs.append(np.abs(Q - exact).max())
    r = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(r - 4) < 0.2)


def test_quantum_potential_reports_floor():
    P = np.array([0.5, 0.5, 0.0, 0.0])
    assert sz.quantum_potential(P, 1.0, 1.0).floored.tolist() == [2, 3]


def test_velocity_plane_wave():
    N, a, q, m = 32, 0.25, 3, 2.0
    v = sz.f1_velocity_field(plane_wave(N, q), a, m)
    assert np.allclose(v, 2 * np.pi * q / (N * a) / m)
    assert sz.integrability_check(v, a, m) < 1e-12


def test_phase_steps_flags_ambiguous_jump(caplog):
    psi = np.array([1, -1, 1, -1]) / 2.0
    _, amb = sz.phase_steps(psi)
    assert amb.size == 4
    sz.f1_velocity_field(psi, 1.0, 1.0)
    assert "ambiguous" in caplog.text


def test_interpolate_periodic_wraps():
    f = np.array([0.0, 1.0, 2.0, 3.0])
    assert sz.interpolate_periodic(f, [0.5, 3.5, -0.5, 4.0], 1.0).tolist() == [0.5, 1.5, 1.5, 0.0]


def test_f1_plane_wave_straight_lines():
    N, a, q, m = 32, 0.25, 2, 1.0
    H = build_circle(N, a, m)
    ser = evolve(plane_wave(N, q), UnitaryIntegrator(H, 0.01), 200, record_every=10)
    x = sz.f1_trajectories([0.1, 3.0], ser.times, ser.amplitudes, a, m)
    v = 2 * np.pi * q / (N * a) / m
    want = np.mod(np.array([0.1, 3.0])[None, :] + v * ser.times[:, None], N * a)
    assert np.abs(x - want).max() < 1e-9


def test_density_estimators_conserve_mass():
    psi = periodic_gaussian(32, 0.5, 8.0, 2.0, 1.0)
    ens = sz.sample_ensemble(psi, 0.5, 1.0, 5000, seed=3)
    for est in sz.ESTIMATORS:
        assert sz.estimate_density(ens, est).sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        sz.estimate_density(ens, "bogus")


def test_sample_ensemble_reproducible():
    psi = periodic_gaussian(32, 0.5, 8.0, 2.0, 1.0)
    a = sz.sample_ensemble(psi, 0.5, 1.0, 1000, seed=3)
    b = sz.sample_ensemble(psi, 0.5, 1.0, 1000, seed=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


def test_lattice_ensemble_histogram_exact():
    psi = periodic_gaussian(32, 0.5, 8.0, 2.0, 1.0)
    ens = sz.lattice_ensemble(psi, 0.5, 1.0)
    assert np.allclose(sz.estimate_density(ens), np.abs(psi) ** 2, atol=1e-15)


def test_ground_state_static_under_f2():
    # ring short enough that the far tail stays well above the probability floor
    N, a, m, om = 64, 0.125, 1.0, 1.0
    V, psi, _ = harmonic_ground_state(N, a, m, om)
    ens = sz.lattice_ensemble(psi, a, m, V)
    out = sz.f2_evolve(ens, 1e-3, 500)
    L = N * a
    moved = np.mod(out.x - ens.x + L / 2, L) - L / 2
    assert np.abs(moved).max() < 1e-8


def test_particle_ensemble_validation():
    with pytest.raises(ValueError):
        sz.ParticleEnsemble(np.zeros(3), np.zeros(2), 1.0, np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        sz.ParticleEnsemble(np.zeros(2), np.zeros(2), -1.0, np.zeros(4), 1.0)


def test_grid_field_validation():
    with pytest.raises(ValueError):
        sz.GridField(np.array([0.5, 0.6]), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        sz.GridField(np.array([0.5, 0.5]), np.zeros(2), 0.0)


def test_f3_plane_wave_stationary(backend):
    g = sz.grid_field_from_psi(plane_wave(32, 2), 0.5, 1.0)
    out, *_ = sz.f3_evolve(g, np.zeros(32), 1.0, 1e-3, 2000, backend=backend)
    assert np.abs(out.P - g.P).max() < 1e-13
    assert np.abs(out.v - g.v).max() < 1e-12


def test_f3_ground_state_stationary(backend):
    V, psi, _ = harmonic_ground_state(64, 0.125, 1.0, 1.0)
    g = sz.grid_field_from_psi(psi, 0.125, 1.0)
    out, *_ = sz.f3_evolve(g, V, 1.0, 1e-3, 2000, backend=backend)
    assert np.abs(out.P - g.P).max() < 1e-6


def test_f3_records_and_conservation():
    psi = periodic_gaussian(64, 0.5, 16.0, 3.0, 0.5)
    g = sz.grid_field_from_psi(psi, 0.5, 1.0)
    out, t, P, v = sz.f3_evolve(g, np.zeros(64), 1.0, 2e-3, 1000, record_every=250)
    assert t.tolist() == pytest.approx([0, 0.5, 1.0, 1.5, 2.0])
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12


def test_f3_cfl_guard():
    g = sz.grid_field_from_psi(plane_wave(16, 4), 0.1, 1.0)
    with pytest.raises(StepSizeError) as info:
        sz.f3_evolve(g, np.zeros(16), 1.0, 0.5, 1)
    assert info.value.required is not None


def test_f3_blowup_reported():
    psi = periodic_gaussian(64, 0.5, 16.0, 2.0, 1.0)
    g = sz.grid_field_from_psi(psi, 0.5, 1.0)
    with pytest.raises(StepSizeError):
        sz.f3_evolve(g, np.zeros(64), 1.0, 0.05, 20_000)


def test_f3_tracks_reference_short_time():
    N, L = 128, 32.0
    a = L / N
    psi = periodic_gaussian(N, a, L / 2, 3.0, 2 * np.pi / L)
    H = build_circle(N, a, 1.0)
    ser = evolve(psi, UnitaryIntegrator(H, 1e-2), 500, record_every=500)
    out, *_ = sz.f3_evolve(sz.grid_field_from_psi(psi, a, 1.0), np.zeros(N), 1.0, 1e-3, 5000)
    ref = np.abs(ser.amplitudes[-1]) ** 2
    assert np.linalg.norm(out.P - ref) / np.linalg.norm(ref) < 5e-3
