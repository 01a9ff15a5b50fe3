import numpy as np
import pytest

from bbbtraj import models
from bbbtraj.reference import eigen_propagate


def test_circle_generator_entries():
    H = models.build_circle(5, 0.5, 2.0, V=np.arange(5.0))
    D = H.to_dense()
    kin = 1.0 / (2.0 * 0.25)
    assert np.allclose(np.diag(D).real, np.arange(5.0) + kin)
    assert D[0, 1] == pytest.approx(-kin / 2) and D[0, 4] == pytest.approx(-kin / 2)
    assert H.n_links == 5


def test_circle_rejects_bad_input():
    with pytest.raises(ValueError):
        models.build_circle(2, 1.0, 1.0)
    with pytest.raises(ValueError):
        models.build_circle(8, -1.0, 1.0)


def test_spin_half_spectrum():
    H = models.build_spin_half(1.5, 2.0, bz=0.5)
    w = np.linalg.eigvalsh(H.to_dense())
    assert np.allclose(w, [-1.5 * np.hypot(2.0, 0.5), 1.5 * np.hypot(2.0, 0.5)])


def test_particle_spin_layout():
    c = models.build_circle(4, 1.0, 1.0)
    s = models.build_spin_half(1.0, 0.7)
    H = models.build_particle_spin(c, s)
    assert H.dim == 8
    D = H.to_dense()
    assert D[0, 1] == pytest.approx(0.7)       # same cell, spin flip
    assert D[0, 2] == pytest.approx(-0.5)      # neighbouring cell, same spin
    assert D[0, 3] == 0


def test_snapped_momentum():
    L = 10.0
    assert models.snapped_momentum(0.7, L) == pytest.approx(2 * np.pi / L)
    assert models.snapped_momentum(2 * np.pi * 3 / L, L) == pytest.approx(2 * np.pi * 3 / L)


def test_periodic_gaussian_properties():
    N, a = 64, 0.25
    psi = models.periodic_gaussian(N, a, 8.0, 1.5, 2 * np.pi * 2 / (N * a))
    assert np.vdot(psi, psi).real == pytest.approx(1.0)
    assert np.argmax(np.abs(psi)) == 32
    # seam-smooth: the phase advance across the wrap equals the interior advance
    d = np.angle(psi[1:] / psi[:-1])
    assert np.angle(psi[0] / psi[-1]) == pytest.approx(d[0])
    with pytest.raises(ValueError):
        models.periodic_gaussian(N, a, 8.0, 0.0)


def test_packet_fields_match_lattice_envelope():
    N, L = 256, 20.0
    x = np.arange(N) * (L / N)
    psi = models.periodic_gaussian(N, L / N, 7.0, 2.0)
    R = models.packet_fields(x, L, 7.0, 2.0, 0.0, 1.0)["R"]
    assert np.allclose(R / R.max(), np.abs(psi) / np.abs(psi).max(), atol=1e-12)


def test_ground_state_is_eigenvector():
    V, psi, E = models.harmonic_ground_state(64, 0.125, 1.0, 1.0)
    H = models.build_circle(64, 0.125, 1.0, V)
    assert np.abs(H.to_dense() @ psi - E * psi).max() < 1e-10
    assert E == pytest.approx(0.5, abs=5e-3)


def test_spin_state_initial_probability():
    assert np.abs(models.spin_state(0.3)[1]) ** 2 == pytest.approx(np.cos(0.3) ** 2)


def test_analytic_spin_solution_matches_propagator():
    H = models.build_spin_half(1.0, 1.0)
    sol = models.AnalyticSpinSolution(1.0, 0.3)
    t = np.linspace(0, 5, 41)
    P2 = np.abs(eigen_propagate(models.spin_state(0.3), H, t)[:, 1]) ** 2
    assert np.abs(P2 - sol.P2(t)).max() < 1e-12


@pytest.mark.parametrize("mu,B", [(1.0, 1.0), (0.5, 3.0), (2.0, 0.25)])
def test_calibrated_gamma_is_mu_b_over_hbar(mu, B):
    assert models.calibrate_gamma(mu, B) == pytest.approx(mu * B, rel=1e-9)


def test_quadratic_form_disagrees():
    assert models.printed_gamma(1.0, 1.0) == pytest.approx(2.0)
    assert models.printed_gamma(2.0, 1.0) / models.calibrate_gamma(2.0, 1.0) == pytest.approx(4.0)


def test_spin_closed_form_experiment():
    rep = models.spin_closed_form_experiment(periods=1.0, dt=1e-3)
    assert rep["sup_error_vs_reference"] < 1e-9
    assert rep["cos2_residual"] < 1e-9
    assert rep["gamma_fit"] == pytest.approx(1.0, rel=1e-8)
    assert rep["tbar_rel_error"] < 1e-6


def test_continuum_limit_first_order():
    rep = models.continuum_limit_experiment(N_list=(64, 128, 256))
    assert np.all(np.abs(np.array(rep["ratios"]) - 2.0) < 0.1)
