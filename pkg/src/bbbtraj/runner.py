"""Execute a validated RunConfig: build the model, run one formulation, collect outputs."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import models, reference, spinzero, wavefree
from .config import RunConfig, tolerance
from .io import SeriesWriter
from .lattice import HermitianGenerator, current_values, polar_decompose

log = logging.getLogger(__name__)


@dataclass
class RunOutput:
    series: SeriesWriter
    summary: dict
    wall_time: float = 0.0
    checks: dict = field(default_factory=dict)  # name -> passed


# ---------------------------------------------------------------- model and state

def circle_potential(spec) -> np.ndarray:
    N, a = spec.N, spec.a
    pot = spec.potential
    if pot.kind == "zero":
        return np.zeros(N)
    if pot.kind == "harmonic":
        x = (np.arange(N) - N // 2) * a
        return 0.5 * spec.M * pot.omega ** 2 * x ** 2
    return np.asarray(pot.values, dtype=float)


def build_model(cfg: RunConfig) -> HermitianGenerator:
    m = cfg.model
    if m.kind == "circle":
        return models.build_circle(m.N, m.a, m.M, circle_potential(m), cfg.hbar)
    if m.kind == "spin-half":
        return models.build_spin_half(m.mu, m.B, m.bz, cfg.hbar)
    circ = models.build_circle(m.circle.N, m.circle.a, m.circle.M, circle_potential(m.circle), cfg.hbar)
    return models.build_particle_spin(circ, models.build_spin_half(m.spin.mu, m.spin.B, m.spin.bz, cfg.hbar))


def _state(spec, dim: int, model, hbar: float) -> np.ndarray:
    k = spec.kind
    if k == "gaussian-packet":
        return models.periodic_gaussian(dim, model.a, spec.center, spec.width, spec.momentum, hbar)
    if k == "plane-wave":
        return models.plane_wave(dim, spec.q)
    if k == "basis-state":
        if spec.n >= dim:
            raise ValueError(f"initial.n = {spec.n} out of range for {dim} labels")
        return models.basis_state(dim, spec.n)
    if k == "spin-delta":
        return models.spin_state(spec.delta)
    if k == "ground-state":
        return models.harmonic_ground_state(model.N, model.a, model.M, model.potential.omega, hbar)[1]
    if k == "explicit":
        if len(spec.R) != dim:
            raise ValueError(f"initial R has {len(spec.R)} entries, expected {dim}")
        psi = np.asarray(spec.R) * np.exp(1j * np.asarray(spec.S) / hbar)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise ValueError("initial R is identically zero")
        return psi / norm
    raise ValueError(f"unknown initial state kind {k!r}")


def build_initial(cfg: RunConfig) -> np.ndarray:
    m, init = cfg.model, cfg.initial
    if m.kind == "particle-spin":
        space = _state(init.space, m.circle.N, m.circle, cfg.hbar)
        spin = _state(init.spin, 2, m.spin, cfg.hbar)
        return np.kron(space, spin)
    dim = 2 if m.kind == "spin-half" else m.N
    return _state(init, dim, m, cfg.hbar)


def link_labels(H: HermitianGenerator) -> list:
    """CSV index labels for the (L, 2) Tbar layout: 'a-b' is Tbar_ab, then 'b-a'."""
    return [f"{a}-{b}" for a, b in zip(H.rows, H.cols)] + [f"{b}-{a}" for a, b in zip(H.rows, H.cols)]


def _tbar_flat(tb: np.ndarray) -> np.ndarray:
    return np.concatenate([tb[..., 0], tb[..., 1]], axis=-1)


def _record_steps(cfg: RunConfig) -> int:
    return min(cfg.output.record_every, cfg.steps)


def _add_traj(series: SeriesWriter, res, count: int) -> None:
    for i in range(min(count, res.M)):
        rec = res.trajectory(i)
        series.add_rows("traj", [(t, i, lab) for t, lab in rec.samples])


def _ensemble_summary(res) -> dict:
    z = np.abs(res.zscores())
    return {"M": res.M, "sup_error": res.sup_error(), "max_abs_z": float(z.max()),
            "within_3_sigma": bool(np.all(z <= 3.0)),
            "cap_events": res.cap_events, "floor_events": res.floor_events, "backend": res.backend}


# ---------------------------------------------------------------- formulations

def run_reference(cfg: RunConfig, H, psi0) -> RunOutput:
    scheme = cfg.options.scheme or "implicit-midpoint"
    integ = reference.UnitaryIntegrator(H, cfg.dt, scheme)
    every = _record_steps(cfg)
    ser = reference.evolve(psi0, integ, cfg.steps, record_every=every)
    out = SeriesWriter()
    labels = list(range(H.dim))
    out.add("P", ser.times, ser.P, labels)
    out.add("S", ser.times, cfg.hbar * np.angle(ser.amplitudes), labels)
    tb = np.stack([_psi_tbar(a, H) for a in ser.amplitudes])
    out.add("Tbar", ser.times, tb, link_labels(H))
    exact = np.abs(reference.eigen_propagate(psi0, H, ser.times)) ** 2 if H.dim <= 2048 else None
    summary = {"scheme": scheme, "steps": cfg.steps,
               "sum_drift": float(np.abs(ser.P.sum(axis=1) - 1.0).max())}
    if exact is not None:
        summary["sup_error_vs_eigen"] = float(np.abs(ser.P - exact).max())
    if cfg.M:
        res = reference.simulate_guided_ensemble(psi0, integ, cfg.M, cfg.horizon, cfg.seed,
                                                 backend=cfg.options.backend)
        _add_traj(out, res, cfg.output.trajectories)
        summary["ensemble"] = _ensemble_summary(res)
    return RunOutput(out, summary)


def _psi_tbar(psi, H) -> np.ndarray:
    P = np.abs(psi) ** 2
    J = current_values(psi, H)
    with np.errstate(divide="ignore", invalid="ignore"):
        ab = np.where(P[H.cols] >= wavefree.EPS_P, J / P[H.cols], np.nan)
        ba = np.where(P[H.rows] >= wavefree.EPS_P, -J / P[H.rows], np.nan)
    return np.concatenate([ab, ba])


def run_wavefree(cfg: RunConfig, H, psi0) -> RunOutput:
    scheme = cfg.options.scheme or "rk4"
    state = wavefree.init_from_polar(polar_decompose(psi0, cfg.hbar), H)
    every = _record_steps(cfg)
    run = wavefree.evolve_wavefree(state, H, cfg.dt, cfg.steps, scheme=scheme, record_every=every,
                                   backend=cfg.options.backend)
    out = SeriesWriter()
    out.add("P", run.times, run.P, list(range(H.dim)))
    out.add("Tbar", run.times, _tbar_flat(run.Tbar), link_labels(H))
    d = dict(run.diagnostics)
    th = models.run_thetas(run, H)
    dev = np.abs(np.abs(th) - 1.0)
    loops = wavefree.loop_defects(run.final)
    loop_max = float(loops.max()) if loops.size else 0.0
    summary = {"scheme": scheme, "steps": cfg.steps, "backend": run.backend,
               "flips": int(run.flips.shape[0]), "diagnostics": d,
               "theta_modulus_dev": float(np.nanmax(dev)) if np.any(np.isfinite(dev)) else 0.0,
               "loop_defect": loop_max}
    if H.dim <= 2048:
        exact = np.abs(reference.eigen_propagate(psi0, H, run.times)) ** 2
        summary["sup_error_vs_eigen"] = float(np.abs(run.P - exact).max())
    checks = {
        "sum_drift": d["sum_drift"] < tolerance(cfg, "sum_drift"),
        "radicand": d["min_radicand"] >= tolerance(cfg, "radicand"),
        "loop": loop_max <= tolerance(cfg, "loop"),
    }
    if cfg.M:
        res = wavefree.simulate_wavefree_ensemble(state, H, cfg.M, cfg.horizon, cfg.seed, cfg.dt,
                                                  scheme=scheme, rule=cfg.options.rule,
                                                  backend=cfg.options.backend)
        _add_traj(out, res, cfg.output.trajectories)
        summary["ensemble"] = _ensemble_summary(res)
    return RunOutput(out, summary, checks=checks)


def run_f1(cfg: RunConfig, H, psi0) -> RunOutput:
    m = cfg.model
    scheme = cfg.options.scheme or "implicit-midpoint"
    integ = reference.UnitaryIntegrator(H, cfg.dt, scheme)
    every = _record_steps(cfg)
    ser = reference.evolve(psi0, integ, cfg.steps, record_every=1)
    ens = spinzero.sample_ensemble(psi0, m.a, m.M, cfg.M, cfg.seed, hbar=cfg.hbar)
    X = spinzero.f1_trajectories(ens.x, ser.times, ser.amplitudes, m.a, m.M, cfg.hbar)
    keep = np.unique(np.append(np.arange(0, ser.times.size, every), ser.times.size - 1))
    out = SeriesWriter()
    cells = list(range(m.N))
    out.add("P", ser.times[keep], ser.P[keep], cells)
    v = np.stack([spinzero.f1_velocity_field(ser.amplitudes[i], m.a, m.M, cfg.hbar) for i in keep])
    out.add("v", ser.times[keep], v, cells)
    ntr = min(cfg.output.trajectories, cfg.M)
    out.add("traj", ser.times[keep], X[keep][:, :ntr], list(range(ntr)))
    hist = np.bincount(spinzero.cell_of(X[-1], m.a, m.N), minlength=m.N) / cfg.M
    summary = {"scheme": scheme, "M": cfg.M,
               "final_l1_vs_psi": float(np.abs(hist - ser.P[-1]).sum())}
    return RunOutput(out, summary)


def run_f2(cfg: RunConfig, H, psi0) -> RunOutput:
    m = cfg.model
    V = circle_potential(m)
    o = cfg.options
    ens = spinzero.sample_ensemble(psi0, m.a, m.M, cfg.M, cfg.seed, V=V, hbar=cfg.hbar)
    every = _record_steps(cfg)
    out = SeriesWriter()
    cells = list(range(m.N))
    ntr = min(cfg.output.trajectories, cfg.M)
    times, Ps, Qs, X = [], [], [], []

    def record(e):
        P = spinzero.estimate_density(e, "histogram")
        times.append(e.t)
        Ps.append(P)
        Qs.append(spinzero.quantum_potential(spinzero.estimate_density(e, o.estimator, o.bandwidth),
                                             m.M, m.a, cfg.hbar).Q)
        X.append(e.x[:ntr].copy())

    record(ens)
    for s in range(1, cfg.steps + 1):
        ens = spinzero.f2_step(ens, cfg.dt, o.estimator, o.bandwidth)
        if s % every == 0 or s == cfg.steps:
            record(ens)
    times = np.array(times)
    out.add("P", times, np.array(Ps), cells)
    out.add("Q", times, np.array(Qs), cells)
    out.add("traj", times, np.array(X), list(range(ntr)))
    exact = np.abs(reference.eigen_propagate(psi0, H, times)) ** 2
    l1 = np.abs(np.array(Ps) - exact).sum(axis=1)
    return RunOutput(out, {"M": cfg.M, "estimator": o.estimator, "final_l1_vs_reference": float(l1[-1]),
                           "max_l1_vs_reference": float(l1.max())})


def run_f3(cfg: RunConfig, H, psi0) -> RunOutput:
    m = cfg.model
    V = circle_potential(m)
    o = cfg.options
    g = spinzero.grid_field_from_psi(psi0, m.a, m.M, cfg.hbar)
    every = _record_steps(cfg)
    final, times, Ps, vs = spinzero.f3_evolve(g, V, m.M, cfg.dt, cfg.steps, cfg.hbar, o.flux,
                                              o.convective, record_every=every, backend=o.backend)
    out = SeriesWriter()
    cells = list(range(m.N))
    out.add("P", times, Ps, cells)
    out.add("v", times, vs, cells)
    out.add("Q", times, np.stack([spinzero.quantum_potential(p, m.M, m.a, cfg.hbar).Q for p in Ps]), cells)
    exact = np.abs(reference.eigen_propagate(psi0, H, times[-1:])[0]) ** 2
    rel = float(np.linalg.norm(final.P - exact) / np.linalg.norm(exact))
    return RunOutput(out, {"flux": o.flux, "convective": o.convective, "final_rel_l2_vs_reference": rel,
                           "sum_drift": float(abs(Ps[-1].sum() - Ps[0].sum()))})


RUNNERS = {"reference": run_reference, "wavefree": run_wavefree, "f1-guided": run_f1,
           "f2-ensemble": run_f2, "f3-hydro": run_f3}


def execute(cfg: RunConfig) -> RunOutput:
    H = build_model(cfg)
    psi0 = build_initial(cfg)
    wall = time.perf_counter()
    res = RUNNERS[cfg.formulation](cfg, H, psi0)
    res.wall_time = time.perf_counter() - wall
    if cfg.model.kind == "spin-half" and cfg.model.bz == 0 and cfg.model.mu * cfg.model.B > 0:
        res.summary["gamma"] = spin_gamma_record(cfg.model.mu, cfg.model.B, cfg.hbar)
    return res


def spin_gamma_record(mu: float, B: float, hbar: float) -> dict:
    """Calibrated oscillation constant next to the quadratic closed form it replaces."""
    g = models.calibrate_gamma(mu, B, hbar)
    alt = models.printed_gamma(mu, B, hbar)
    log.info("gamma: calibrated %.12g, expected mu B / hbar = %.12g, quadratic form 2 mu^2 B^2 / hbar^2 = "
             "%.12g (relative discrepancy %.3g)", g, mu * B / hbar, alt, abs(alt - g) / g)
    return {"calibrated": g, "expected": mu * B / hbar, "quadratic_form": alt,
            "quadratic_form_rel_discrepancy": abs(alt - g) / g}


# ---------------------------------------------------------------- sweeps

def final_error(cfg: RunConfig) -> float:
    """Error of one run's final P against the exact lattice solution (L1 for ensembles)."""
    H = build_model(cfg)
    psi0 = build_initial(cfg)
    exact = np.abs(reference.eigen_propagate(psi0, H, [cfg.steps * cfg.dt])[0]) ** 2
    if cfg.formulation == "wavefree":
        st = wavefree.init_from_polar(polar_decompose(psi0, cfg.hbar), H)
        run = wavefree.evolve_wavefree(st, H, cfg.dt, cfg.steps, scheme=cfg.options.scheme or "rk4",
                                       record_every=cfg.steps, backend=cfg.options.backend)
        return float(np.abs(run.P[-1] - exact).max())
    if cfg.formulation == "reference":
        integ = reference.UnitaryIntegrator(H, cfg.dt, cfg.options.scheme or "implicit-midpoint")
        ser = reference.evolve(psi0, integ, cfg.steps, record_every=cfg.steps)
        return float(np.abs(ser.P[-1] - exact).max())
    m = cfg.model
    if cfg.formulation == "f3-hydro":
        g = spinzero.grid_field_from_psi(psi0, m.a, m.M, cfg.hbar)
        fin = spinzero.f3_evolve(g, circle_potential(m), m.M, cfg.dt, cfg.steps, cfg.hbar,
                                 cfg.options.flux, cfg.options.convective, backend=cfg.options.backend)[0]
        return float(np.linalg.norm(fin.P - exact) / np.linalg.norm(exact))
    if cfg.formulation == "f2-ensemble":
        ens = spinzero.sample_ensemble(psi0, m.a, m.M, cfg.M, cfg.seed, V=circle_potential(m), hbar=cfg.hbar)
        ens = spinzero.f2_evolve(ens, cfg.dt, cfg.steps, cfg.options.estimator, cfg.options.bandwidth)
        return float(np.abs(spinzero.estimate_density(ens, "histogram") - exact).sum())
    raise ValueError(f"no error measure for formulation {cfg.formulation}")


def fitted_order(x, err) -> float:
    """Slope of log(err) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(err, float)), 1)[0])


def sweep(cfg: RunConfig, axis: str, values) -> dict:
    values = list(values)
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    doc = cfg.model_dump(mode="json")
    if axis == "dt":
        errs = []
        for v in values:
            errs.append(final_error(cfg.model_validate({**doc, "dt": float(v)})))
        return {"axis": "dt", "values": values, "errors": errs, "fitted_order": fitted_order(values, errs),
                "ratios": [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]}
    if axis == "a":
        if cfg.model.kind != "circle" or cfg.initial.kind != "gaussian-packet":
            raise ValueError("an a-sweep needs a circle model with a gaussian-packet initial state")
        Ns = [int(round(cfg.model.L / float(v))) for v in values]
        p = models.snapped_momentum(cfg.initial.momentum, cfg.model.L, cfg.hbar)
        q = int(round(p * cfg.model.L / (2 * np.pi * cfg.hbar)))
        rep = models.continuum_limit_experiment(Ns, cfg.model.L, cfg.initial.width, q, cfg.model.M, cfg.hbar)
        return {"axis": "a", "values": rep["a"], "N": Ns, "errors": rep["errors"], "ratios": rep["ratios"],
                "fitted_order": fitted_order(rep["a"], rep["errors"])}
    if axis == "M":
        if cfg.formulation != "f2-ensemble":
            raise ValueError("an M-sweep applies to the f2-ensemble formulation")
        errs = [final_error(cfg.model_validate({**doc, "M": int(v)})) for v in values]
        return {"axis": "M", "values": values, "errors": errs, "fitted_order": fitted_order(values, errs)}
    raise ValueError(f"sweep axis must be dt, a or M, got {axis!r}")
