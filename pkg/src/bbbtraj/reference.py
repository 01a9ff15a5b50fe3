"""Unitary integration of i hbar dpsi/dt = H psi, and Bell jump trajectories guided by psi."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from . import _backend, ensemble, rng
from .errors import IntegrationError, StepSizeError
from .lattice import (ComplexAmplitudeField, HermitianGenerator, amplitudes_of,
                      current_values)

log = logging.getLogger(__name__)

EPS_P = 1e-12
MIDPOINT_LIMIT = 0.5  # dt * spectral radius / hbar
EXACT_MAX_DIM = 4096
DENSE_MAX_DIM = 1024
NORM_DRIFT_TOL = 1e-10

SCHEMES = ("implicit-midpoint", "exact-exponential")


class UnitaryIntegrator:
    """Fixed-step propagator for the discrete wave equation."""

    def __init__(self, H: HermitianGenerator, dt: float, scheme: str = "implicit-midpoint"):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.H = H
        self.dt = float(dt)
        self.scheme = scheme
        self.hbar = H.hbar
        n = H.dim
        self.spectral_radius = H.spectral_radius
        if scheme == "exact-exponential":
            if n > EXACT_MAX_DIM:
                raise ValueError(f"exact exponential limited to N <= {EXACT_MAX_DIM}, got {n}")
            self._U = scipy.linalg.expm(-1j * self.dt / self.hbar * H.to_dense())
            return
        bound = self.dt * self.spectral_radius / self.hbar
        if bound >= MIDPOINT_LIMIT:
            raise StepSizeError(
                f"dt*rho/hbar = {bound:.4g} >= {MIDPOINT_LIMIT} (spectral radius {self.spectral_radius:.6g})",
                required=MIDPOINT_LIMIT * self.hbar / self.spectral_radius)
        z = 0.5j * self.dt / self.hbar
        if n <= DENSE_MAX_DIM:
            Hd = H.to_dense()
            eye = np.eye(n)
            self._U = np.linalg.solve(eye + z * Hd, eye - z * Hd)
        else:
            Hs = H.to_sparse().tocsc()
            eye = sp.identity(n, dtype=complex, format="csc")
            self._U = None
            self._lu = scipy.sparse.linalg.splu(eye + z * Hs)
            self._rhs = (eye - z * Hs).tocsr()

    def step(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        if psi.shape[0] != self.H.dim:
            raise ValueError(f"dimension mismatch: state has {psi.shape[0]} labels, generator {self.H.dim}")
        if self._U is not None:
            return self._U @ psi
        return self._lu.solve(self._rhs @ psi)


@dataclass(frozen=True, eq=False)
class StateSeries:
    times: np.ndarray
    amplitudes: np.ndarray  # (n_records, N)

    @property
    def P(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def field(self, i: int) -> ComplexAmplitudeField:
        return ComplexAmplitudeField(self.amplitudes[i])


def evolve(psi0, integ: UnitaryIntegrator, steps: int, record_every: int = 1,
           t0: float = 0.0) -> StateSeries:
    """Records psi at t0 and every ``record_every`` steps thereafter."""
    psi = np.array(amplitudes_of(psi0), dtype=complex)
    if psi.size != integ.H.dim:
        raise ValueError(f"dimension mismatch: state has {psi.size} labels, generator {integ.H.dim}")
    norm0 = np.vdot(psi, psi).real
    if abs(norm0 - 1.0) > 1e-9:
        raise ValueError(f"initial state is not normalized: {norm0!r}")
    times, out = [t0], [psi.copy()]
    prev = norm0
    for s in range(1, steps + 1):
        psi = integ.step(psi)
        norm = np.vdot(psi, psi).real
        if abs(norm - prev) > NORM_DRIFT_TOL:
            raise IntegrationError(f"norm drift {abs(norm - prev):.3g} at step {s}",
                                   diagnostics={"step": s, "norm": norm})
        prev = norm
        if s % record_every == 0 or s == steps:
            times.append(t0 + s * integ.dt)
            out.append(psi.copy())
    return StateSeries(np.array(times), np.array(out))


def eigen_propagate(psi0, H: HermitianGenerator, times) -> np.ndarray:
    """psi(t) for each t from a dense eigendecomposition; the exact oracle for small N."""
    w, V = np.linalg.eigh(H.to_dense())
    c = V.conj().T @ amplitudes_of(psi0)
    t = np.asarray(times, dtype=float)
    return (np.exp(-1j * np.outer(t, w) / H.hbar) * c) @ V.T


@dataclass(frozen=True, eq=False)
class JumpRates:
    """Clipped rates per stored link a < b: rate_ab = T_ab (b to a), rate_ba = T_ba (a to b)."""

    rows: np.ndarray
    cols: np.ndarray
    rate_ab: np.ndarray
    rate_ba: np.ndarray
    dim: int
    floored: np.ndarray  # labels below the probability floor

    def get(self, n: int, m: int) -> float:
        """T_nm, the rate for a jump from m to n."""
        a, b = (n, m) if n < m else (m, n)
        hit = np.flatnonzero((self.rows == a) & (self.cols == b))
        if hit.size == 0:
            return 0.0
        return float((self.rate_ab if n < m else self.rate_ba)[hit[0]])

    def exit_rates(self) -> np.ndarray:
        return (np.bincount(self.cols, weights=self.rate_ab, minlength=self.dim)
                + np.bincount(self.rows, weights=self.rate_ba, minlength=self.dim))


def clipped_rates(P, J, la, lb, eps_p: float = EPS_P):
    """T_ab = max(0, J/P_b) and T_ba = max(0, -J/P_a), zero where the source is floored."""
    okb = P[lb] >= eps_p
    oka = P[la] >= eps_p
    with np.errstate(divide="ignore", invalid="ignore"):
        r_ab = np.where(okb, np.maximum(J, 0.0) / P[lb], 0.0)
        r_ba = np.where(oka, np.maximum(-J, 0.0) / P[la], 0.0)
    return r_ab, r_ba


def bell_rates(psi, H: HermitianGenerator, eps_p: float = EPS_P) -> JumpRates:
    amps = amplitudes_of(psi)
    if amps.size != H.dim:
        raise ValueError(f"dimension mismatch: state has {amps.size} labels, generator {H.dim}")
    P = np.abs(amps) ** 2
    J = current_values(amps, H)
    r_ab, r_ba = clipped_rates(P, J, H.rows, H.cols, eps_p)
    floored = np.flatnonzero(P < eps_p)
    touched = np.isin(floored, np.concatenate([H.rows, H.cols]))
    if np.any(touched):
        log.debug("probability floor hit at %d labels; their outgoing rates set to 0", int(touched.sum()))
    return JumpRates(H.rows, H.cols, r_ab, r_ba, H.dim, floored)


def jump_step(n: int, rates: JumpRates, dt: float, u: float) -> int:
    """One first-order jump draw from label n with uniform variate u."""
    out = [(int(rates.rows[i]), float(rates.rate_ab[i])) for i in np.flatnonzero(rates.cols == n)]
    out += [(int(rates.cols[i]), float(rates.rate_ba[i])) for i in np.flatnonzero(rates.rows == n)]
    out.sort()
    total = dt * sum(r for _, r in out)
    if total > ensemble.MAX_STEP_PROB:
        raise StepSizeError(
            f"dt * exit rate = {total:.4g} exceeds {ensemble.MAX_STEP_PROB}",
            required=ensemble.MAX_STEP_PROB * dt / total)
    acc = 0.0
    for k, r in out:
        acc += r * dt
        if u < acc:
            return k
    return n


def simulate_guided_ensemble(psi0, integ: UnitaryIntegrator, M: int, horizon: float, seed: int,
                             n0=None, n_samples: int = 20, backend: str | None = None
                             ) -> ensemble.EnsembleResult:
    """Jump trajectories driven by rates computed from psi(t) at the start of each step.

    ``n0`` overrides the default |psi0|^2 sampling of starting labels.
    """
    H = integ.H
    dt = integ.dt
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ValueError("horizon shorter than one step")
    rng.check_seed(seed)
    psi = np.array(amplitudes_of(psi0), dtype=complex)
    if n0 is None:
        n0 = ensemble.sample_initial(np.abs(psi) ** 2, M, seed)
    n0 = np.asarray(n0, dtype=np.int64)
    table = ensemble.JumpTable(H.dim, H.rows, H.cols)
    floors = caps = 0
    state = {"psi": psi}

    def stepper(s):
        nonlocal floors, caps
        cur = state["psi"]
        P = np.abs(cur) ** 2
        J = current_values(cur, H)
        r_ab, r_ba = clipped_rates(P, J, H.rows, H.cols)
        floors += int(np.count_nonzero(P < EPS_P))
        p_ab, p_ba, capped = ensemble.cap_exit(table, H.rows, H.cols, r_ab * dt, r_ba * dt)
        caps += capped
        nxt = integ.step(cur)
        state["psi"] = nxt
        return p_ab, p_ba, np.abs(nxt) ** 2

    out = ensemble.run_jumps(table, n0, steps, dt, 0.0, seed, stepper, n_samples,
                             kernels=_backend.get(backend))
    if floors or caps:
        log.info("guided run: %d floored label-steps, %d capped exit probabilities", floors, caps)
    return ensemble.EnsembleResult(seed=seed, M=int(n0.size), dt=dt, t0=0.0, initial_labels=n0,
                                   floor_events=floors, cap_events=caps, **out)
