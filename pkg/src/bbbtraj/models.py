"""Model generators (circle, spin-1/2, particle with spin) and the experiments built on them."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import wavefree as wf
from .lattice import HermitianGenerator, polar_decompose
from .reference import eigen_propagate

log = logging.getLogger(__name__)


def build_circle(N: int, a: float, M: float, V=None, hbar: float = 1.0) -> HermitianGenerator:
    """Nearest-neighbour ring: diagonal V_n + hbar^2/(M a^2), links -hbar^2/(2 M a^2)."""
    if N < 3:
        raise ValueError(f"circle needs N >= 3 cells, got {N}")
    if not a > 0 or not M > 0:
        raise ValueError("spacing a and mass M must be positive")
    V = np.zeros(N) if V is None else np.broadcast_to(np.asarray(V, dtype=float), (N,))
    kin = hbar * hbar / (M * a * a)
    rows = np.concatenate([np.arange(N - 1), [0]])
    cols = np.concatenate([np.arange(1, N), [N - 1]])
    return HermitianGenerator(V + kin, rows, cols, np.full(N, -0.5 * kin), hbar=hbar)


def build_spin_half(mu: float, B: float, bz: float = 0.0, hbar: float = 1.0) -> HermitianGenerator:
    """mu (B sigma_x + bz sigma_z); bz = 0 is the field along x."""
    h = mu * B
    return HermitianGenerator([mu * bz, -mu * bz], [0], [1], [h], hbar=hbar)


def build_particle_spin(circle: HermitianGenerator, spin: HermitianGenerator) -> HermitianGenerator:
    """H_circle (x) 1 + 1 (x) H_spin; label 2k + s is cell k with spin s."""
    if abs(circle.hbar - spin.hbar) > 1e-15:
        raise ValueError("submodels use different hbar")
    Hs = sp.kron(circle.to_sparse(), sp.identity(spin.dim)) + sp.kron(sp.identity(circle.dim), spin.to_sparse())
    up = sp.triu(Hs, k=1).tocoo()
    return HermitianGenerator(Hs.diagonal().real, up.row, up.col, up.data, hbar=circle.hbar)


# ---------------------------------------------------------------- initial states

def snapped_momentum(p: float, L: float, hbar: float = 1.0) -> float:
    """Nearest momentum 2 pi hbar q / L for integer q, so that e^{ipx/hbar} is periodic."""
    unit = 2.0 * np.pi * hbar / L
    return unit * np.round(p / unit)


def periodic_gaussian(N: int, a: float, center: float, width: float, momentum: float = 0.0,
                      hbar: float = 1.0) -> np.ndarray:
    """Normalized packet with a wrapped-Gaussian envelope and a plane-wave phase.

    The envelope is |psi|^2 ~ exp(kappa (cos(k(x - c)) - 1)), k = 2 pi / L, with
    kappa = 1/(k w)^2, which is a Gaussian of width w near its centre and smooth
    across the seam. The momentum is snapped to the nearest periodic value.
    """
    if not width > 0:
        raise ValueError("packet width must be positive")
    L = N * a
    p = snapped_momentum(momentum, L, hbar)
    if abs(p - momentum) > 1e-12 * max(1.0, abs(momentum)):
        log.info("packet momentum %.6g snapped to periodic value %.6g", momentum, p)
    x = np.arange(N) * a
    k = 2.0 * np.pi / L
    kappa = 1.0 / (k * width) ** 2
    P = np.exp(kappa * (np.cos(k * (x - center)) - 1.0))
    psi = np.sqrt(P / P.sum()) * np.exp(1j * p * x / hbar)
    return psi


def packet_fields(x, L: float, center: float, width: float, momentum: float, M: float,
                  hbar: float = 1.0) -> dict:
    """Continuum R, S and quantum potential derivatives of ``periodic_gaussian`` at x."""
    k = 2.0 * np.pi / L
    u = 0.5 / (k * width) ** 2
    ph = k * (np.asarray(x, dtype=float) - center)
    s, c = np.sin(ph), np.cos(ph)
    r1 = -u * k * s                     # R'/R
    r2 = r1 * r1 - u * k * k * c        # R''/R
    c2 = -hbar * hbar / (2.0 * M)
    Q = c2 * r2
    # d/dx (R''/R) = 2 (R'/R)(R'/R)' - u k^3 (-sin), with (R'/R)' = -u k^2 cos
    dQ = c2 * (2.0 * r1 * (-u * k * k * c) + u * k ** 3 * s)
    return {"R": np.exp(u * (c - 1.0)), "S": momentum * np.asarray(x), "Q": Q, "dQ": dQ}


def plane_wave(N: int, q: int) -> np.ndarray:
    return np.exp(2j * np.pi * q * np.arange(N) / N) / np.sqrt(N)


def basis_state(N: int, n: int) -> np.ndarray:
    psi = np.zeros(N, dtype=complex)
    psi[n] = 1.0
    return psi


def spin_state(delta: float) -> np.ndarray:
    """(-i sin delta, cos delta): P_2 = cos^2(delta), evolving as cos^2(gamma t + delta) under sigma_x."""
    return np.array([-1j * np.sin(delta), np.cos(delta)])


def harmonic_ground_state(N: int, a: float, M: float, omega: float, hbar: float = 1.0):
    """Potential, ground eigenvector and energy of the discrete harmonic well centred on the ring."""
    x = (np.arange(N) - N // 2) * a
    V = 0.5 * M * omega ** 2 * x ** 2
    w, vecs = np.linalg.eigh(build_circle(N, a, M, V, hbar).to_dense())
    g = vecs[:, 0].real
    g *= np.sign(g[np.argmax(np.abs(g))])
    return V, g.astype(complex), float(w[0])


# ---------------------------------------------------------------- spin-1/2 closed forms

@dataclass(frozen=True)
class AnalyticSpinSolution:
    """P_2(t) = cos^2(gamma t + delta), Tbar_12(t) = 2 gamma tan(gamma t + delta)."""

    gamma: float
    delta: float

    def phase(self, t):
        return self.gamma * np.asarray(t, dtype=float) + self.delta

    def P2(self, t):
        return np.cos(self.phase(t)) ** 2

    def Tbar12(self, t):
        return 2.0 * self.gamma * np.tan(self.phase(t))


def printed_gamma(mu: float, B: float, hbar: float = 1.0) -> float:
    """The quadratic form 2 mu^2 B^2 / hbar^2, kept only to quantify its disagreement."""
    return 2.0 * (mu * B) ** 2 / hbar ** 2


def calibrate_gamma(mu: float, B: float, hbar: float = 1.0, periods: int = 8) -> float:
    """Half the angular frequency of P_2(t) for psi0 = (1, 0) under the exact propagator."""
    if not mu * B > 0:
        raise ValueError("calibration needs mu B > 0")
    H = build_spin_half(mu, B, hbar=hbar)
    scale = H.spectral_radius / hbar
    # sample finely over several guessed periods, then refine a sinusoid fit
    t = np.linspace(0.0, periods * np.pi / scale, 64 * periods + 1)
    P2 = np.abs(eigen_propagate([1.0, 0.0], H, t)[:, 1]) ** 2
    d = P2 - P2.mean()
    crossings = np.flatnonzero(np.signbit(d[1:]) != np.signbit(d[:-1]))
    if crossings.size < 4 or np.ptp(P2) < 1e-6:
        raise RuntimeError("no oscillation detected in P_2(t); cannot calibrate gamma")
    omega0 = np.pi * (crossings.size - 1) / (t[crossings[-1]] - t[crossings[0]])

    def resid(par):
        w, c0, c1, c2 = par
        return c0 + c1 * np.cos(w * t) + c2 * np.sin(w * t) - P2

    fit = scipy.optimize.least_squares(resid, [omega0, 0.5, -0.5, 0.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not fit.success or np.abs(fit.fun).max() > 1e-8:
        raise RuntimeError(f"sinusoid fit failed (max residual {np.abs(fit.fun).max():.3g})")
    return 0.5 * float(fit.x[0])


def fit_cos2(t, P2, gamma0: float, delta0: float) -> AnalyticSpinSolution:
    def resid(par):
        return np.cos(par[0] * t + par[1]) ** 2 - P2

    fit = scipy.optimize.least_squares(resid, [gamma0, delta0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return AnalyticSpinSolution(float(fit.x[0]), float(fit.x[1]))


def spin_closed_form_experiment(mu: float = 1.0, B: float = 1.0, delta: float = 0.3,
                                periods: float = 3.0, dt: float = 1e-4, scheme: str = "rk4",
                                hbar: float = 1.0, pole_cut: float = 0.2, record_every: int = 10,
                                backend: str | None = None) -> dict:
    """Wave-free spin-1/2 run against the reference solution and the cos^2 closed form."""
    gamma = calibrate_gamma(mu, B, hbar)
    alt = printed_gamma(mu, B, hbar)
    log.info("gamma calibrated %.12g; quadratic form 2 mu^2 B^2/hbar^2 gives %.12g "
             "(ratio %.6g, not used)", gamma, alt, alt / gamma)
    H = build_spin_half(mu, B, hbar=hbar)
    psi0 = spin_state(delta)
    horizon = periods * np.pi / gamma
    steps = int(round(horizon / dt))
    state = wf.init_from_polar(polar_decompose(psi0, hbar), H)
    wall = time.perf_counter()
    run = wf.evolve_wavefree(state, H, dt, steps, scheme=scheme, record_every=record_every,
                             backend=backend)
    wall = time.perf_counter() - wall
    t = run.times
    P2 = run.P[:, 1]
    ref = np.abs(eigen_propagate(psi0, H, t)[:, 1]) ** 2
    tb0 = run.Tbar[0, 0, 0]
    d0 = np.sign(tb0 if np.isfinite(tb0) and tb0 != 0 else 1.0) * np.arccos(np.sqrt(min(P2[0], 1.0)))
    fit = fit_cos2(t, P2, gamma, d0)
    tb = run.Tbar[:, 0, 0]
    away = np.abs(np.cos(fit.phase(t))) > pole_cut
    tb_fit = fit.Tbar12(t)
    tb_err = np.abs(tb[away] - tb_fit[away]) / (1.0 + np.abs(tb[away]))
    return {
        "gamma_calibrated": gamma, "gamma_expected": mu * B / hbar, "gamma_quadratic_form": alt,
        "gamma_fit": fit.gamma, "delta_fit": fit.delta, "delta": delta,
        "sup_error_vs_reference": float(np.abs(P2 - ref).max()),
        "cos2_residual": float(np.abs(P2 - fit.P2(t)).max()),
        "tbar_rel_error": float(tb_err.max()), "steps": steps, "dt": dt,
        "wall_time": wall, "diagnostics": run.diagnostics, "run": run, "fit": fit,
    }


# ---------------------------------------------------------------- crossover

def tilted_spin(mu: float = 1.0, B: float = 1.0, hbar: float = 1.0) -> HermitianGenerator:
    """Field at 45 degrees in the x-z plane; same magnitude as build_spin_half(mu, B)."""
    c = B / np.sqrt(2.0)
    return build_spin_half(mu, c, bz=c, hbar=hbar)


def crossover_experiment(periods: float = 3.0, dt: float = 1e-4, scheme: str = "rk4",
                         shift: float = np.pi / 8, backend: str | None = None) -> dict:
    """Wave-free run through repeated alpha = 0 events on the tilted spin-1/2 field.

    The reference events are the sign changes of beta = 2 Re(H_12 psi_1* psi_2);
    the wave-free sign register must flip on exactly those steps.
    """
    H = tilted_spin()
    psi0 = eigen_propagate(np.array([1.0, -1.0j]) / np.sqrt(2.0), H, [shift])[0]
    omega = 2.0 * H.spectral_radius / H.hbar
    horizon = periods * 2.0 * np.pi / omega
    steps = int(round(horizon / dt))
    state = wf.init_from_polar(polar_decompose(psi0, H.hbar), H)
    run = wf.evolve_wavefree(state, H, dt, steps, scheme=scheme, record_every=1, backend=backend)
    psi = eigen_propagate(psi0, H, run.times)
    beta = 2.0 * (H.values[0] * np.conj(psi[:, 0]) * psi[:, 1]).real
    ref_events = np.flatnonzero(np.signbit(beta[1:]) != np.signbit(beta[:-1])) + 1
    flips = run.flips[:, 0] if run.flips.size else np.empty(0, dtype=np.int64)
    th = run_thetas(run, H)
    return {
        "reference_events": ref_events, "flip_steps": flips,
        "events_match": bool(np.array_equal(np.sort(flips), ref_events)),
        "max_dtheta": float(np.abs(np.diff(th, axis=0)).max()),
        "sup_error_vs_reference": float(np.abs(run.P - np.abs(psi) ** 2).max()),
        "diagnostics": run.diagnostics, "run": run,
    }


def run_thetas(run: wf.WaveFreeRun, H: HermitianGenerator) -> np.ndarray:
    """theta on every link at every record, (records, L); NaN where a label is below the floor."""
    g = run.final.geometry
    pa, pb = run.P[:, g.la], run.P[:, g.lb]
    alpha = np.sqrt(np.maximum(4.0 * pa * pb - (g.hbar * run.J / g.hmod) ** 2, 0.0))
    h = g.hre + 1j * g.him
    with np.errstate(divide="ignore", invalid="ignore"):
        th = ((g.base * run.signs * g.hmod * alpha + 1j * g.hbar * run.J) * np.conj(h)
              / (2.0 * np.sqrt(pa * pb) * g.hmod ** 2))
    return np.where(np.minimum(pa, pb) >= wf.EPS_P, th, np.nan)


# ---------------------------------------------------------------- continuum limit

def continuum_limit_experiment(N_list=(64, 128, 256, 512), L: float = 40.0, width: float = 3.0,
                               q: int = 2, M: float = 1.0, hbar: float = 1.0) -> dict:
    """Compare a dTbar_{n+1,n}/dt with -(V + Q)'/M at t = 0 for a right-moving packet.

    v_n = a Tbar_{n+1,n} is the mean velocity out of cell n to the right. Both
    sides use the same analytic envelope and linear phase; the residual is
    expected to shrink linearly with a.
    """
    p = 2.0 * np.pi * hbar * q / L
    center = 0.5 * L
    errors = []
    wall = time.perf_counter()
    for N in N_list:
        a = L / N
        H = build_circle(N, a, M, hbar=hbar)
        psi = periodic_gaussian(N, a, center, width, p, hbar)
        state = wf.init_from_polar(polar_decompose(psi, hbar), H)
        right = rightward_rates(state, wf.tbar_dot(state, H))
        if np.any(rightward_rates(state, state.Tbar) < 0):
            raise ValueError("continuum-limit experiment needs a right-moving state")
        x = np.arange(N) * a
        rhs = -packet_fields(x, L, center, width, p, M, hbar)["dQ"] / M
        errors.append(float(np.abs(a * right - rhs).max()))
    errors = np.array(errors)
    return {"N": list(N_list), "a": [L / n for n in N_list], "errors": errors.tolist(),
            "ratios": (errors[:-1] / errors[1:]).tolist(), "wall_time": time.perf_counter() - wall}


def rightward_rates(state: wf.WaveFreeState, per_link: np.ndarray) -> np.ndarray:
    """Pick the n -> n+1 (mod N) entry of an (L, 2) per-link array for every cell n."""
    g = state.geometry
    out = np.empty(g.dim)
    wrap = g.lb - g.la != 1
    # stored link (a, b = a + 1): column 1 is the a -> b rate; the wrap link (0, N-1) runs b -> a
    out[g.la[~wrap]] = per_link[~wrap, 1]
    out[g.lb[wrap]] = per_link[wrap, 0]
    return out
