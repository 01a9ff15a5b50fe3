"""Spin-zero trajectory formulations on a 1-D periodic grid.

Three ways to move probability around a circle of N cells with spacing a:

* guided trajectories (``f1_*``): positions follow the phase gradient of a
  separately evolved wave function;
* particle ensembles (``f2_*``): particles carry their own velocities and feel
  the classical force plus the quantum force computed from their own density;
* grid hydrodynamics (``f3_*``): a probability and a velocity per cell,
  advanced by a force kick and a flux-form continuity update.

Cells are centred: cell k owns positions [(k - 1/2)a, (k + 1/2)a) modulo L = N a.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _backend, rng
from . import _pykernels as pk
from .errors import IntegrationError, StepSizeError

log = logging.getLogger(__name__)

EPS_P = 1e-12
SUM_TOL = 1e-9
CFL_LIMIT = 0.5
UNWRAP_MARGIN = 1e-6  # phase jumps within this fraction of pi are ambiguous
ESTIMATORS = ("histogram", "cic", "kde")
FLUXES = {"upwind": pk.UPWIND, "central": pk.CENTRAL}
CHUNK = 1 << 16


def _periodic_d1(f, a):
    return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * a)


def _periodic_d2(f, a):
    return (np.roll(f, -1) - 2.0 * f + np.roll(f, 1)) / (a * a)


@dataclass(frozen=True, eq=False)
class GridField:
    """Probability mass and velocity per cell of a periodic grid."""

    P: np.ndarray
    v: np.ndarray
    a: float

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        v = np.array(self.v, dtype=float)
        if P.ndim != 1 or P.shape != v.shape:
            raise ValueError("P and v must be 1-D arrays of equal length")
        if not self.a > 0:
            raise ValueError(f"grid spacing must be positive, got {self.a}")
        if np.any(P < 0) or not np.all(np.isfinite(P)) or not np.all(np.isfinite(v)):
            raise ValueError("P must be finite and nonnegative, v finite")
        if abs(P.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"cell probabilities sum to {P.sum()!r}, not 1")
        P.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "a", float(self.a))

    @property
    def N(self) -> int:
        return self.P.size

    @property
    def L(self) -> float:
        return self.N * self.a

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * self.a


@dataclass(frozen=True, eq=False)
class QuantumPotentialField:
    Q: np.ndarray
    floored: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Particles on [0, L) with velocities, optional weights, and the grid they live on.

    ``V`` is the external potential sampled at the cell centres. Weights default
    to 1/M each; weighted ensembles let a density be represented exactly.
    """

    x: np.ndarray
    v: np.ndarray
    m: float
    V: np.ndarray
    a: float
    w: np.ndarray | None = None
    hbar: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if x.shape != v.shape or x.ndim != 1:
            raise ValueError("positions and velocities must be 1-D arrays of equal length")
        if not self.m > 0 or not self.a > 0 or not self.hbar > 0:
            raise ValueError("mass, spacing and hbar must be positive")
        L = V.size * self.a
        object.__setattr__(self, "x", np.mod(x, L))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "V", V)
        if self.w is None:
            w = np.full(x.size, 1.0 / max(x.size, 1))
        else:
            w = np.asarray(self.w, dtype=float)
            if w.shape != x.shape or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per particle")
            w = w / w.sum()
        object.__setattr__(self, "w", w)

    @property
    def M(self) -> int:
        return self.x.size

    @property
    def N(self) -> int:
        return self.V.size

    @property
    def L(self) -> float:
        return self.N * self.a


def quantum_potential(P, m: float, a: float, hbar: float = 1.0, eps_p: float = EPS_P,
                      ) -> QuantumPotentialField:
    """Q_k = -(hbar^2 / 2m) D2(sqrt P)_k / sqrt(P_k), periodic central stencil.

    ``P`` is a cell mass or a density; only its shape matters. Cells below
    ``eps_p`` (relative to the largest cell) are floored and reported.
    """
    if isinstance(P, GridField):
        P = P.P
    P = np.asarray(P, dtype=float)
    floor = eps_p * P.max(initial=0.0)
    low = np.flatnonzero(P < floor)
    if low.size:
        log.debug("quantum potential: %d cells below the probability floor", low.size)
    R = np.sqrt(np.maximum(P, floor))
    Q = -(hbar * hbar) / (2.0 * m) * _periodic_d2(R, a) / R
    return QuantumPotentialField(Q, low)


def phase_steps(psi, hbar: float = 1.0) -> tuple:
    """Phase differences S_{k+1} - S_k on the branch |dS| <= pi hbar, plus ambiguous links."""
    psi = np.asarray(psi, dtype=complex)
    dS = hbar * np.angle(np.roll(psi, -1) * np.conj(psi))
    amb = np.flatnonzero(np.abs(dS) > np.pi * hbar * (1.0 - UNWRAP_MARGIN))
    return dS, amb


def f1_velocity_field(psi, a: float, m: float, hbar: float = 1.0) -> np.ndarray:
    """Guidance velocity per cell: central difference of the unwrapped phase, over m."""
    dS, amb = phase_steps(psi, hbar)
    if amb.size:
        log.warning("phase unwrap ambiguous on %d links (|dS| near pi hbar)", amb.size)
    return (dS + np.roll(dS, 1)) / (2.0 * a * m)


def interpolate_periodic(f, x, a: float) -> np.ndarray:
    """Linear interpolation of a cell-centred periodic field at positions x."""
    f = np.asarray(f)
    n = f.size
    s = np.asarray(x) / a
    k = np.floor(s).astype(np.int64)
    frac = s - k
    k %= n
    return (1.0 - frac) * f[k] + frac * f[(k + 1) % n]


def f1_trajectories(x0, times, amplitudes, a: float, m: float, hbar: float = 1.0) -> np.ndarray:
    """Guided positions for each recorded time, by Heun steps between records.

    ``amplitudes[i]`` is the wave function at ``times[i]``; the velocity field is
    interpolated linearly in space, and the two ends of each interval give the
    predictor and corrector slopes.
    """
    amplitudes = np.asarray(amplitudes)
    times = np.asarray(times, dtype=float)
    L = amplitudes.shape[1] * a
    x = np.mod(np.asarray(x0, dtype=float), L)
    out = np.empty((times.size, x.size))
    out[0] = x
    v_now = f1_velocity_field(amplitudes[0], a, m, hbar)
    for i in range(1, times.size):
        h = times[i] - times[i - 1]
        v_next = f1_velocity_field(amplitudes[i], a, m, hbar)
        k1 = interpolate_periodic(v_now, x, a)
        k2 = interpolate_periodic(v_next, np.mod(x + h * k1, L), a)
        x = np.mod(x + 0.5 * h * (k1 + k2), L)
        out[i] = x
        v_now = v_next
    return out


def integrability_check(v, a: float, m: float, hbar: float = 1.0) -> float:
    """Distance of the circulation sum v a m from the nearest multiple of 2 pi hbar."""
    circ = float(np.sum(np.asarray(v, dtype=float)) * a * m)
    quantum = 2.0 * np.pi * hbar
    return abs(circ - quantum * np.round(circ / quantum))


# ---------------------------------------------------------------- particle ensembles

def cell_of(x, a: float, n: int) -> np.ndarray:
    return np.floor(np.asarray(x) / a + 0.5).astype(np.int64) % n


def estimate_density(ens: ParticleEnsemble, estimator: str = "histogram",
                     bandwidth: float | None = None) -> np.ndarray:
    """Probability mass per cell from particle positions and weights."""
    n, a = ens.N, ens.a
    if estimator == "histogram":
        return np.bincount(cell_of(ens.x, a, n), weights=ens.w, minlength=n)
    if estimator == "cic":
        s = ens.x / a
        k = np.floor(s).astype(np.int64)
        frac = s - k
        k %= n
        return (np.bincount(k, weights=ens.w * (1.0 - frac), minlength=n)
                + np.bincount((k + 1) % n, weights=ens.w * frac, minlength=n))
    if estimator == "kde":
        # histogram smoothed by a periodic Gaussian kernel, applied in Fourier space
        h = a if bandwidth is None else float(bandwidth)
        hist = np.bincount(cell_of(ens.x, a, n), weights=ens.w, minlength=n)
        freq = 2.0 * np.pi * np.fft.rfftfreq(n, d=a)
        out = np.fft.irfft(np.fft.rfft(hist) * np.exp(-0.5 * (freq * h) ** 2), n)
        return np.maximum(out, 0.0)
    raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")


def _force_at(ens: ParticleEnsemble, F, estimator: str) -> np.ndarray:
    if estimator == "histogram":
        return F[cell_of(ens.x, ens.a, ens.N)]
    return interpolate_periodic(F, ens.x, ens.a)


def f2_force(ens: ParticleEnsemble, estimator: str = "histogram", bandwidth: float | None = None):
    """Force per cell -D(V + Q) from the estimated density, and the count of occupied floored cells."""
    P = estimate_density(ens, estimator, bandwidth)
    qp = quantum_potential(P, ens.m, ens.a, ens.hbar)
    occupied = np.bincount(cell_of(ens.x, ens.a, ens.N), minlength=ens.N) > 0
    underflow = int(np.count_nonzero(occupied[qp.floored]))
    return -_periodic_d1(ens.V + qp.Q, ens.a), underflow


def f2_step(ens: ParticleEnsemble, dt: float, estimator: str = "histogram",
            bandwidth: float | None = None) -> ParticleEnsemble:
    """One kick-drift step: velocities first, then positions with the new velocities."""
    F, underflow = f2_force(ens, estimator, bandwidth)
    if underflow:
        log.warning("density estimate underflow in %d occupied cells at t=%.6g", underflow, ens.t)
    v = ens.v + dt / ens.m * _force_at(ens, F, estimator)
    return ParticleEnsemble(ens.x + v * dt, v, ens.m, ens.V, ens.a, ens.w, ens.hbar, ens.t + dt)


def f2_evolve(ens: ParticleEnsemble, dt: float, steps: int, estimator: str = "histogram",
              bandwidth: float | None = None) -> ParticleEnsemble:
    underflows = 0
    for _ in range(int(steps)):
        F, under = f2_force(ens, estimator, bandwidth)
        underflows += under
        v = ens.v + dt / ens.m * _force_at(ens, F, estimator)
        ens = ParticleEnsemble(ens.x + v * dt, v, ens.m, ens.V, ens.a, ens.w, ens.hbar, ens.t + dt)
    if underflows:
        log.warning("density estimate underflow in %d occupied cell-steps", underflows)
    return ens


def sample_ensemble(psi, a: float, m: float, M: int, seed: int, V=None, hbar: float = 1.0
                    ) -> ParticleEnsemble:
    """M particles drawn from |psi|^2 (cell by inverse CDF, uniform within the cell).

    Velocities come from the phase gradient of psi at the particle positions.
    """
    psi = np.asarray(psi, dtype=complex)
    n = psi.size
    P = np.abs(psi) ** 2
    cdf = np.cumsum(P)
    cdf /= cdf[-1]
    u = rng.uniforms(seed, 0, M, purpose=rng.PARTICLES)
    k = np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)
    off = rng.uniforms(seed, 1, M, purpose=rng.PARTICLES) - 0.5
    x = (k + off) * a
    v = interpolate_periodic(f1_velocity_field(psi, a, m, hbar), x, a)
    V = np.zeros(n) if V is None else np.asarray(V, dtype=float)
    return ParticleEnsemble(x, v, m, V, a, hbar=hbar)


def lattice_ensemble(psi, a: float, m: float, V=None, hbar: float = 1.0) -> ParticleEnsemble:
    """One particle per cell centre weighted by |psi_k|^2: the histogram reproduces P exactly."""
    psi = np.asarray(psi, dtype=complex)
    n = psi.size
    V = np.zeros(n) if V is None else np.asarray(V, dtype=float)
    return ParticleEnsemble(np.arange(n) * a, f1_velocity_field(psi, a, m, hbar), m, V, a,
                            w=np.abs(psi) ** 2, hbar=hbar)


# ---------------------------------------------------------------- grid hydrodynamics

def _check_cfl(v, dt, a):
    vmax = float(np.abs(v).max(initial=0.0))
    if vmax * dt / a > CFL_LIMIT:
        raise StepSizeError(f"CFL number {vmax * dt / a:.4g} exceeds {CFL_LIMIT}",
                            required=CFL_LIMIT * a / vmax)


def f3_evolve(g: GridField, V, m: float, dt: float, steps: int, hbar: float = 1.0,
              flux: str = "central", convective: bool = True, record_every: int = 0,
              backend: str | None = None, eps_p: float = EPS_P):
    """Advance a grid field ``steps`` times; returns (final field, record times, P records, v records).

    Each step kicks v by -(1/m) D(V + Q) dt (plus the convective m v^2/2 term when
    ``convective``) and then moves probability with the flux-form continuity
    update, which conserves the total to summation accuracy.
    """
    if flux not in FLUXES:
        raise ValueError(f"flux must be one of {tuple(FLUXES)}, got {flux!r}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    kern = _backend.get(backend)
    V = np.ascontiguousarray(V, dtype=float)
    if V.shape != g.P.shape:
        raise ValueError("potential must have one value per cell")
    _check_cfl(g.v, dt, g.a)
    P = g.P.copy()
    v = g.v.copy()
    every = int(record_every) if record_every else int(steps)
    times, recP, recv = [0.0], [P.copy()], [v.copy()]
    done = floors = 0
    while done < steps:
        n = min(CHUNK, every - done % every, steps - done)
        status, did, fl = kern.f3_advance(P, v, V, n, float(dt), g.a, float(m), float(hbar),
                                          eps_p, FLUXES[flux], bool(convective))
        floors += fl
        done += did
        if status == pk.CFL_VIOLATION or not (np.all(np.isfinite(P)) and np.all(np.isfinite(v))):
            vmax = float(np.nanmax(np.abs(v))) if np.any(np.isfinite(v)) else np.inf
            raise StepSizeError(
                f"grid step unstable at step {done} (max |v| = {vmax:.4g})",
                required=CFL_LIMIT * g.a / vmax if np.isfinite(vmax) and vmax > 0 else None)
        if done % every == 0 or done == steps:
            times.append(done * dt)
            recP.append(P.copy())
            recv.append(v.copy())
    if floors:
        log.info("grid run: %d floored cell-steps in the quantum potential", floors)
    drift = abs(P.sum() - g.P.sum())
    if drift > SUM_TOL:
        raise IntegrationError(f"total probability drifted by {drift:.3g}", {"drift": drift})
    if np.any(P < -SUM_TOL):
        log.warning("grid run produced negative cell probability %.3g", P.min())
    P = np.maximum(P, 0.0)
    P /= P.sum()
    return GridField(P, v, g.a), np.array(times), np.array(recP), np.array(recv)


def f3_step(g: GridField, V, m: float, dt: float, hbar: float = 1.0, flux: str = "central",
            convective: bool = True, backend: str | None = None) -> GridField:
    return f3_evolve(g, V, m, dt, 1, hbar, flux, convective, backend=backend)[0]


def grid_field_from_psi(psi, a: float, m: float, hbar: float = 1.0) -> GridField:
    psi = np.asarray(psi, dtype=complex)
    P = np.abs(psi) ** 2
    return GridField(P / P.sum(), f1_velocity_field(psi, a, m, hbar), a)
