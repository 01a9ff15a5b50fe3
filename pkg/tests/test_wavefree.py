import numpy as np
import pytest

from bbbtraj import HermitianGenerator, polar_compose, polar_decompose
from bbbtraj import wavefree as wf
from bbbtraj.errors import (FrozenLinkError, IntegrationError, StepSizeError, UndefinedLinkError)
from bbbtraj.models import (build_circle, build_spin_half, crossover_experiment, periodic_gaussian,
                            spin_state, tilted_spin)
from bbbtraj.reference import UnitaryIntegrator, eigen_propagate, evolve, simulate_guided_ensemble

from conftest import random_generator_dense, random_state


def make(psi, H):
    return wf.init_from_polar(polar_decompose(psi, H.hbar), H)


def same_up_to_phase(a, b):
    k = np.argmax(np.abs(b))
    ph = a[k] / b[k] * abs(b[k]) / abs(a[k])
    return np.abs(a - ph * b).max()


def test_init_roundtrip_dense_graph():
    H = HermitianGenerator.from_dense(random_generator_dense(6, 1, density=0.7))
    for seed in range(20):
        psi = random_state(6, seed)
        s = make(psi, H)
        assert s.radicand().min() > -1e-12
        back = polar_compose(wf.reconstruct_phases(s, H)).amplitudes
        assert same_up_to_phase(back, psi) < 1e-10


def test_theta_unit_modulus_and_alpha_nonnegative():
    H = build_circle(12, 0.5, 1.0)
    s = make(periodic_gaussian(12, 0.5, 3.0, 1.0, 2.0), H)
    assert np.abs(np.abs(wf.theta_values(s)) - 1).max() < 1e-12
    assert np.all(wf.alpha_values(s) >= 0)


def test_tbar_antisymmetry():
    H = HermitianGenerator.from_dense(random_generator_dense(5, 4))
    s = make(random_state(5, 4), H)
    g = s.geometry
    tb = s.Tbar
    assert np.allclose(tb[:, 0] * s.P[g.lb], -tb[:, 1] * s.P[g.la], atol=1e-14)
    k = 0
    assert s.tbar(g.la[k], g.lb[k]) == pytest.approx(tb[k, 0])
    assert s.tbar(g.lb[k], g.la[k]) == pytest.approx(tb[k, 1])


def test_null_generator_state_constant():
    H = HermitianGenerator(np.zeros(3), [0, 1], [1, 2], [0.0, 0.0])
    assert H.n_links == 0  # zero-magnitude entries are not links
    run = wf.evolve_wavefree(make(random_state(3, 0), H), H, 0.1, 10)
    assert np.abs(run.P - run.P[0]).max() == 0.0


def test_zero_rates_real_stationary_state():
    H = build_circle(8, 1.0, 1.0)
    w, V = np.linalg.eigh(H.to_dense())
    s = make(V[:, 2].astype(complex), H)
    assert np.abs(wf.tbar_dot(s, H)[np.isfinite(wf.tbar_dot(s, H))]).max() < 1e-10
    run = wf.evolve_wavefree(s, H, 0.01, 200, record_every=200)
    assert np.abs(run.P[-1] - run.P[0]).max() < 1e-12


def test_state_is_immutable():
    H = build_spin_half(1, 1)
    s = make(spin_state(0.2), H)
    with pytest.raises(ValueError):
        s.P[0] = 1.0


def test_generator_mismatch_rejected():
    s = make(spin_state(0.2), build_spin_half(1, 1))
    with pytest.raises(ValueError):
        wf.step(s, build_spin_half(2, 1), 1e-3)


def test_frozen_link_at_init():
    H = build_circle(6, 1.0, 1.0)
    psi = np.zeros(6, complex)
    psi[2] = 1
    with pytest.raises(FrozenLinkError) as info:
        make(psi, H)
    assert list(info.value.labels) == [0, 1, 3, 4, 5]
    s = wf.init_from_polar(polar_decompose(psi), H, allow_frozen=True)
    with pytest.raises(UndefinedLinkError):
        s.tbar(2, 1)


def test_step_size_guard():
    H = build_circle(16, 0.1, 1.0)
    s = make(plane_like(16), H)
    with pytest.raises(StepSizeError) as info:
        wf.step(s, H, 1.0, "rk4")
    assert info.value.required is not None and info.value.required < 1.0


def plane_like(N):
    return periodic_gaussian(N, 0.1, 0.8, 0.3, 3.0)


def test_step_is_pure():
    H = build_spin_half(1, 1)
    s = make([np.cos(0.4), np.sin(0.4) * np.exp(0.7j)], H)
    a = wf.step(s, H, 1e-3, "rk4")
    b = wf.step(s, H, 1e-3, "rk4")
    assert np.array_equal(a.P, b.P) and np.array_equal(a.J, b.J) and a.t == pytest.approx(1e-3)
    assert s.t == 0.0


def test_spin_rk4_matches_reference():
    H = build_spin_half(1, 1)
    psi = spin_state(0.3)
    run = wf.evolve_wavefree(make(psi, H), H, 1e-3, 6000, record_every=100)
    exact = np.abs(eigen_propagate(psi, H, run.times)) ** 2
    assert np.abs(run.P - exact).max() < 1e-9


def test_rk4_fourth_order():
    H = build_spin_half(1, 1)
    psi = np.array([np.cos(0.4), np.sin(0.4) * np.exp(0.7j)])
    errs = []
    for dt in (0.02, 0.01):
        run = wf.evolve_wavefree(make(psi, H), H, dt, int(round(2.0 / dt)), record_every=int(round(2.0 / dt)))
        errs.append(np.abs(run.P[-1] - np.abs(eigen_propagate(psi, H, [2.0])[0]) ** 2).max())
    assert 12 < errs[0] / errs[1] < 20


def test_euler_first_order_off_manifold():
    H = build_spin_half(1, 1)
    psi = np.array([np.cos(0.4), np.sin(0.4) * np.exp(0.7j)])
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        n = int(round(0.5 / dt))
        run = wf.evolve_wavefree(make(psi, H), H, dt, n, scheme="euler", record_every=n)
        errs.append(np.abs(run.P[-1] - np.abs(eigen_propagate(psi, H, [0.5])[0]) ** 2).max())
    r = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(r - 2) < 0.2)


def test_euler_fails_loudly_on_zero_alpha_manifold():
    # the x-field spin state keeps Re(H psi_1* psi_2) = 0; one Euler step leaves the
    # admissible set by O(dt^2) and the run must stop rather than continue silently
    H = build_spin_half(1, 1)
    with pytest.raises(IntegrationError) as info:
        wf.evolve_wavefree(make(spin_state(0.3), H), H, 1e-3, 100, scheme="euler")
    assert "radicand" in str(info.value)


def test_circle_matches_reference_full_transit():
    N, L = 32, 16.0
    a = L / N
    H = build_circle(N, a, 1.0)
    psi = periodic_gaussian(N, a, L / 2, 2.0, 2 * np.pi / L)
    steps = 4000
    run = wf.evolve_wavefree(make(psi, H), H, 4e-3, steps, record_every=400)
    ref = np.abs(eigen_propagate(psi, H, run.times)) ** 2
    assert np.abs(run.P - ref).max() < 1e-7
    assert run.diagnostics["sum_drift"] < 1e-12


def test_crossover_flips_match_reference_events():
    rep = crossover_experiment(periods=1.0, dt=2e-4)
    assert rep["events_match"]
    assert rep["max_dtheta"] < 1e-2


def test_detect_crossover_keeps_sign_without_history():
    H = tilted_spin()
    s = make([np.cos(0.4), np.sin(0.4) * np.exp(0.7j)], H)
    assert wf.detect_crossover(s, s, 0) == s.signs[0]


def test_phase_reconstruction_after_evolution():
    H = tilted_spin()
    psi = np.array([np.cos(0.4), np.sin(0.4) * np.exp(0.7j)])
    run = wf.evolve_wavefree(make(psi, H), H, 1e-3, 3000, record_every=3000)
    back = polar_compose(wf.reconstruct_phases(run.final, H)).amplitudes
    assert same_up_to_phase(back, eigen_propagate(psi, H, [3.0])[0]) < 1e-4


def test_loop_defects_dense_graph():
    H = HermitianGenerator.from_dense(random_generator_dense(5, 9, density=1.0))
    psi = random_state(5, 9)
    s = make(psi, H)
    assert wf.loop_defects(s).max() < 1e-12
    run = wf.evolve_wavefree(s, H, 1e-3, 300, record_every=300)
    assert wf.loop_defects(run.final).max() < 1e-5


def test_record_layout():
    H = build_spin_half(1, 1)
    run = wf.evolve_wavefree(make(spin_state(0.1), H), H, 1e-3, 1050, record_every=100)
    assert run.times.size == run.P.shape[0] == 12
    assert run.times[-1] == pytest.approx(1.05)
    assert run.Tbar.shape == (12, 1, 2)


def test_ensemble_determinism_and_backend_label(backend):
    H = build_spin_half(1, 1)
    s = make(spin_state(0.3), H)
    a = wf.simulate_wavefree_ensemble(s, H, 2000, 1.0, seed=3, dt=1e-3, backend=backend)
    b = wf.simulate_wavefree_ensemble(s, H, 2000, 1.0, seed=3, dt=1e-3, backend=backend)
    assert np.array_equal(a.final_labels, b.final_labels)


def test_ensemble_unknown_rule():
    H = build_spin_half(1, 1)
    with pytest.raises(ValueError):
        wf.simulate_wavefree_ensemble(make(spin_state(0.3), H), H, 10, 0.1, 0, 1e-3, rule="bogus")


@pytest.mark.parametrize("rule", ["instant", "flux"])
def test_ensemble_tracks_occupancy(rule):
    H = build_spin_half(1, 1)
    res = wf.simulate_wavefree_ensemble(make(spin_state(0.3), H), H, 20_000, 3.0, seed=1, dt=1e-3,
                                        rule=rule)
    assert np.all(np.abs(res.zscores()) < 4.5)


def test_ensemble_statistically_matches_guided_reference():
    H = build_spin_half(1, 1)
    psi = spin_state(0.3)
    a = wf.simulate_wavefree_ensemble(make(psi, H), H, 20_000, 2.0, seed=7, dt=1e-3)
    b = simulate_guided_ensemble(psi, UnitaryIntegrator(H, 1e-3), 20_000, 2.0, seed=8)
    fa = np.mean(a.final_labels == 1)
    fb = np.mean(b.final_labels == 1)
    p = 0.5 * (fa + fb)
    assert abs(fa - fb) < 4.5 * np.sqrt(2 * p * (1 - p) / 20_000)


def test_cycle_defects_ring_and_dense():
    H = build_circle(10, 1.0, 1.0)
    s = make(periodic_gaussian(10, 1.0, 5.0, 1.5, 2 * np.pi / 10), H)
    d = wf.cycle_defects(s)
    assert d.size == 1 and d[0] < 1e-12
    H = HermitianGenerator.from_dense(random_generator_dense(6, 3, density=1.0))
    d = wf.cycle_defects(make(random_state(6, 3), H))
    assert d.size == H.n_links - 5 and d.max() < 1e-12
