"""Wave-function-free evolution of (P, Tbar) on the links of a Hermitian generator.

The stored dynamical variables are the probabilities P_n and one current J_ab per
link a < b; the generalized rates are Tbar_ab = J_ab / P_b and Tbar_ba = -J_ab / P_a.
Link phases theta and amplitudes alpha are reconstructed from (P, J, H) and a sign
register per link, which is flipped when alpha passes through zero so that theta
stays continuous in time.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _backend, _pykernels, ensemble, rng
from .errors import (ConsistencyError, FrozenLinkError, InconsistentStateError,
                     IntegrationError, StepSizeError, UndefinedLinkError)
from .lattice import (CurrentField, HermitianGenerator, PolarField, ProbabilityField,
                      current_from_polar)

log = logging.getLogger(__name__)

SCHEMES = {"euler": _pykernels.EULER, "midpoint": _pykernels.MIDPOINT, "rk4": _pykernels.RK4}
EPS_P = 1e-12
RADICAND_TOL = 1e-9
NODE_TOL = 1e-4  # |theta| and theta jumps are monitored only where P_a P_b exceeds this
TIE_TOL = 1e-9
LOOP_TOL = 1e-6
STABILITY_LIMIT = 1.0  # dt * spectral radius / hbar for the multi-stage schemes
FLIPLOG_MAX = 1_000_000


@dataclass(frozen=True, eq=False)
class LinkGeometry:
    """Per-link constants of a generator: |H_ab|, baseline sign of Re H_ab, adjacency."""

    dim: int
    la: np.ndarray
    lb: np.ndarray
    hmod: np.ndarray
    base: np.ndarray
    hre: np.ndarray
    him: np.ndarray
    hdiag: np.ndarray
    hbar: float
    rate_scale: float
    adjacency: tuple

    @classmethod
    def from_generator(cls, H: HermitianGenerator) -> "LinkGeometry":
        v = H.values
        base = np.where(v.real < 0, -1.0, 1.0)
        scale = float(np.abs(v).max(initial=0.0)) / H.hbar
        arrays = dict(
            la=np.ascontiguousarray(H.rows, dtype=np.int64),
            lb=np.ascontiguousarray(H.cols, dtype=np.int64),
            hmod=np.abs(v).astype(float), base=base,
            hre=v.real.copy(), him=v.imag.copy(), hdiag=np.array(H.diag, dtype=float))
        for a in arrays.values():
            a.setflags(write=False)
        return cls(dim=H.dim, hbar=H.hbar, rate_scale=scale if scale > 0 else 1.0,
                   adjacency=H.adjacency, **arrays)

    @property
    def n_links(self) -> int:
        return self.la.size

    def matches(self, H: HermitianGenerator) -> bool:
        return (H.dim == self.dim and H.hbar == self.hbar
                and np.array_equal(H.rows, self.la) and np.array_equal(H.cols, self.lb)
                and np.array_equal(H.values.real, self.hre) and np.array_equal(H.values.imag, self.him)
                and np.array_equal(H.diag, self.hdiag))

    def link(self, n: int, m: int) -> tuple:
        """(link index, orientation): orientation +1 when (n, m) is stored as (a, b)."""
        a, b = (n, m) if n < m else (m, n)
        i = np.searchsorted(self.la, a, side="left")
        j = np.searchsorted(self.la, a, side="right")
        k = i + np.searchsorted(self.lb[i:j], b)
        if k >= j or self.lb[k] != b:
            raise KeyError(f"({n}, {m}) is not a link of the generator")
        return int(k), (1 if n < m else -1)


def _ro(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class WaveFreeState:
    """(P, J, sign register, t) plus the short theta history used for crossover decisions."""

    P: np.ndarray
    J: np.ndarray
    signs: np.ndarray
    t: float
    geometry: LinkGeometry
    theta_prev: np.ndarray = field(repr=False, default=None)
    theta_now: np.ndarray = field(repr=False, default=None)
    history: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        nl = self.geometry.n_links
        P = _ro(self.P)
        J = _ro(self.J)
        if P.size != self.geometry.dim or J.size != nl:
            raise ValueError("state arrays do not match the link geometry")
        signs = _ro(self.signs)
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("sign register entries must be +1 or -1")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "signs", signs)
        for name, dtype in (("theta_prev", complex), ("theta_now", complex), ("history", np.int64)):
            val = getattr(self, name)
            object.__setattr__(self, name, _ro(np.zeros(nl) if val is None else val, dtype))

    @property
    def Tbar(self) -> np.ndarray:
        """(L, 2) array: column 0 is Tbar_ab = J/P_b, column 1 is Tbar_ba = -J/P_a; NaN at frozen labels."""
        g = self.geometry
        pa, pb = self.P[g.la], self.P[g.lb]
        with np.errstate(divide="ignore", invalid="ignore"):
            ab = np.where(pb >= EPS_P, self.J / pb, np.nan)
            ba = np.where(pa >= EPS_P, -self.J / pa, np.nan)
        return np.column_stack([ab, ba])

    def tbar(self, n: int, m: int) -> float:
        """Tbar_nm = J_nm / P_m."""
        k, o = self.geometry.link(n, m)
        if self.P[m] < EPS_P:
            raise UndefinedLinkError(f"Tbar_{n}{m} undefined: P_{m} below the floor")
        return float(o * self.J[k] / self.P[m])

    def current_field(self) -> CurrentField:
        g = self.geometry
        return CurrentField(g.la, g.lb, self.J, g.dim)

    def probability_field(self) -> ProbabilityField:
        return ProbabilityField(self.P)

    def radicand(self) -> np.ndarray:
        """4 P_a P_b - hbar^2 J^2 / |H_ab|^2 per link."""
        g = self.geometry
        return 4.0 * self.P[g.la] * self.P[g.lb] - (g.hbar * self.J / g.hmod) ** 2


def init_from_polar(p: PolarField, H: HermitianGenerator, allow_frozen: bool = False,
                    eps_p: float = EPS_P) -> WaveFreeState:
    """State from a modulus/phase pair; the sign register reproduces the input phases."""
    if p.dim != H.dim:
        raise ValueError(f"dimension mismatch: state has {p.dim} labels, generator {H.dim}")
    if abs(p.hbar - H.hbar) > 1e-15 * H.hbar:
        raise ValueError("polar field and generator use different hbar")
    g = LinkGeometry.from_generator(H)
    P = p.R ** 2
    low = np.flatnonzero(P < eps_p)
    if low.size and not allow_frozen:
        touching = np.intersect1d(low, np.concatenate([g.la, g.lb]))
        if touching.size:
            raise FrozenLinkError(f"labels {touching.tolist()[:10]} have P below {eps_p} on active links",
                                  labels=touching)
    J = current_from_polar(p, H).values
    # 2 Re(H_ab psi_a* psi_b) equals s |H| alpha, which fixes s = base * register
    beta = 2.0 * p.R[g.la] * p.R[g.lb] * (
        (g.hre + 1j * g.him) * np.exp(-1j * (p.S[g.la] - p.S[g.lb]) / p.hbar)).real
    reg = np.where(beta != 0, np.sign(beta) * g.base, 1.0)
    state = WaveFreeState(P=P, J=J, signs=reg, t=0.0, geometry=g)
    th = theta_values(state)
    ok = np.isfinite(th)
    return WaveFreeState(P=P, J=J, signs=reg, t=0.0, geometry=g, theta_now=np.where(ok, th, 0.0),
                         history=ok.astype(np.int64))


def _link_arg(state: WaveFreeState, link) -> tuple:
    if isinstance(link, tuple):
        return state.geometry.link(*link)
    return int(link), 1


def alpha_values(state: WaveFreeState) -> np.ndarray:
    """alpha for every link, raising if any radicand is below tolerance."""
    g = state.geometry
    rad = 4.0 * state.P[g.la] * state.P[g.lb] - (g.hbar * state.J / g.hmod) ** 2
    if rad.size and rad.min() < -RADICAND_TOL:
        k = int(np.argmin(rad))
        raise ConsistencyError(f"alpha radicand {rad[k]:.3g} on link ({g.la[k]}, {g.lb[k]}) below -{RADICAND_TOL}")
    return np.sqrt(np.maximum(rad, 0.0))


def alpha(state: WaveFreeState, link) -> float:
    """alpha_nm for a link given as (n, m) or a stored link index; symmetric in n, m."""
    k, _ = _link_arg(state, link)
    return float(alpha_values(state)[k])


def theta_values(state: WaveFreeState) -> np.ndarray:
    """theta_ab for every stored link (NaN where an endpoint is below the floor)."""
    g = state.geometry
    a = alpha_values(state)
    h = g.hre + 1j * g.him
    rr = np.sqrt(state.P[g.la] * state.P[g.lb])
    s = g.base * state.signs
    with np.errstate(divide="ignore", invalid="ignore"):
        th = (s * g.hmod * a + 1j * g.hbar * state.J) * np.conj(h) / (2.0 * rr * g.hmod ** 2)
    dead = (state.P[g.la] < EPS_P) | (state.P[g.lb] < EPS_P)
    th[dead] = np.nan
    return th


def theta(state: WaveFreeState, link) -> complex:
    k, o = _link_arg(state, link)
    g = state.geometry
    a, b = g.la[k], g.lb[k]
    if state.P[a] < EPS_P or state.P[b] < EPS_P:
        raise UndefinedLinkError(f"theta undefined on link ({a}, {b}): zero modulus at an endpoint")
    th = complex(theta_values(state)[k])
    return th if o > 0 else th.conjugate()


def _check_generator(state: WaveFreeState, H: HermitianGenerator | None):
    if H is not None and not state.geometry.matches(H):
        raise ValueError("generator does not match the state's link geometry")


def tbar_dot(state: WaveFreeState, H: HermitianGenerator | None = None) -> np.ndarray:
    """Time derivative of Tbar as an (L, 2) array laid out like ``state.Tbar``."""
    _check_generator(state, H)
    alpha_values(state)  # consistency check
    g = state.geometry
    P, J = state.P, state.J
    n = g.dim
    hmod2 = g.hmod ** 2
    beta = _pykernels._beta(P, J, g.base * state.signs, g.la, g.lb, hmod2, g.hbar)
    jd, _ = _pykernels._link_rates(P, J, beta, g.la, g.lb, hmod2, g.hdiag, g.hbar, EPS_P, n)
    pdot = _pykernels._scatter(g.la, g.lb, J, n)
    pa, pb = P[g.la], P[g.lb]
    with np.errstate(divide="ignore", invalid="ignore"):
        ab = (jd - J / pb * pdot[g.lb]) / pb
        ba = (-jd + J / pa * pdot[g.la]) / pa
    ab[pb < EPS_P] = np.nan
    ba[pa < EPS_P] = np.nan
    return np.column_stack([ab, ba])


def _check_dt(g: LinkGeometry, H: HermitianGenerator | None, dt: float, scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {sorted(SCHEMES)}, got {scheme!r}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if scheme == "euler" or H is None:
        return
    bound = dt * H.spectral_radius / g.hbar
    if bound > STABILITY_LIMIT:
        raise StepSizeError(f"dt*rho/hbar = {bound:.4g} exceeds {STABILITY_LIMIT} for scheme {scheme}",
                            required=STABILITY_LIMIT * g.hbar / H.spectral_radius)


class _Integrator:
    """Mutable working copy of a state that is advanced by the kernel in place."""

    def __init__(self, state: WaveFreeState, dt: float, scheme: str, kernels, step0: int = 0):
        self.g = state.geometry
        self.P = np.array(state.P)
        self.J = np.array(state.J)
        self.reg = np.array(state.signs)
        self.th_prev = np.array(state.theta_prev)
        self.th_now = np.array(state.theta_now)
        self.hist = np.array(state.history)
        self.dflux = np.zeros(self.g.n_links)
        self.diag = np.zeros(_pykernels.N_DIAG)
        self.diag[_pykernels.D_MIN_RAD] = np.inf
        self.t0 = state.t
        self.dt = dt
        self.code = SCHEMES[scheme]
        self.kern = kernels
        self.steps = step0
        self.flips = []
        self.n_flips = 0

    def advance(self, nsteps: int, rec_every: int = 0):
        """Run ``nsteps`` steps; with ``rec_every`` > 0 return the states recorded
        after every ``rec_every`` steps as (P, J, reg) arrays."""
        g = self.g
        cap = max(1, min(g.n_links * nsteps, FLIPLOG_MAX))
        log_buf = np.zeros((cap, 2), dtype=np.int64)
        nrec = nsteps // rec_every if rec_every > 0 else 0
        rec = (np.empty((nrec, g.dim)), np.empty((nrec, g.n_links)), np.empty((nrec, g.n_links)))
        status, nflips, done = self.kern.wavefree_advance(
            self.code, self.dt, nsteps, g.hbar, EPS_P, NODE_TOL, TIE_TOL, g.rate_scale,
            g.la, g.lb, g.hmod, g.base, g.hre, g.him, g.hdiag,
            self.P, self.J, self.reg, self.th_prev, self.th_now, self.hist,
            self.dflux, self.diag, log_buf, self.steps, rec_every, *rec)
        self.n_flips += nflips
        self.flips.append(log_buf[:min(nflips, cap)])
        if nflips > cap:
            log.warning("flip log truncated: %d flips in one chunk", nflips)
        self.steps += done
        if status == _pykernels.RADICAND_VIOLATION:
            raise IntegrationError(
                f"alpha radicand {self.diag[_pykernels.D_MIN_RAD]:.3g} below -{RADICAND_TOL} at step {self.steps + 1}",
                diagnostics=self.diagnostics())
        return rec

    @property
    def t(self) -> float:
        return self.t0 + self.steps * self.dt

    def state(self) -> WaveFreeState:
        return WaveFreeState(P=self.P, J=self.J, signs=self.reg, t=self.t, geometry=self.g,
                             theta_prev=self.th_prev, theta_now=self.th_now, history=self.hist)

    def flip_log(self) -> np.ndarray:
        parts = [f for f in self.flips if f.size]
        return np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)

    def diagnostics(self) -> dict:
        d = self.diag
        return {
            "min_radicand": float(d[_pykernels.D_MIN_RAD]),
            "max_dtheta": float(d[_pykernels.D_MAX_DTHETA]),
            "max_theta_modulus_dev": float(d[_pykernels.D_MAX_THETA_DEV]),
            "guard_exhausted": int(d[_pykernels.D_GUARD]),
            "substepped_steps": int(d[_pykernels.D_SUBSTEPS]),
            "frozen_label_steps": int(d[_pykernels.D_FROZEN]),
            "flips": int(self.n_flips),
            "steps": int(self.steps),
        }


def step(state: WaveFreeState, H: HermitianGenerator | None, dt: float, scheme: str = "euler",
         backend: str | None = None) -> WaveFreeState:
    """One time step; pure function of the input state."""
    _check_generator(state, H)
    _check_dt(state.geometry, H, dt, scheme)
    it = _Integrator(state, dt, scheme, _backend.get(backend))
    it.advance(1)
    return it.state()


def detect_crossover(before: WaveFreeState, after: WaveFreeState, link) -> int:
    """Sign register for ``link`` after a step, chosen for continuity of theta.

    The candidate register values are compared against theta extrapolated linearly
    from ``before`` and its stored predecessor; the current sign is kept on ties or
    when there is not enough history.
    """
    k, _ = _link_arg(after, link)
    g = after.geometry
    cur = after.signs[k]
    if min(after.P[g.la[k]], after.P[g.lb[k]]) < EPS_P or before.history[k] < 1:
        return int(cur)
    if before.history[k] >= 2:
        pred = 2.0 * before.theta_now[k] - before.theta_prev[k]
    else:
        pred = before.theta_now[k]
    rad = max(float(after.radicand()[k]), 0.0)
    a = np.sqrt(rad)
    h = g.hre[k] + 1j * g.him[k]
    rr = np.sqrt(after.P[g.la[k]] * after.P[g.lb[k]])

    def th(sign):
        return (g.base[k] * sign * g.hmod[k] * a + 1j * g.hbar * after.J[k]) * np.conj(h) / (2 * rr * g.hmod[k] ** 2)

    keep, flip = th(cur), th(-cur)
    if abs(keep - flip) <= TIE_TOL:
        return int(cur)
    return int(-cur) if abs(flip - pred) < abs(keep - pred) else int(cur)


def _tree_phases(state: WaveFreeState, root: int):
    """Phases S (zero at ``root``) along a breadth-first spanning tree, theta, and the tree-link mask."""
    g = state.geometry
    th = theta_values(state)
    if np.any(~np.isfinite(th)):
        raise UndefinedLinkError("theta undefined on some link; phases cannot be reconstructed")
    phase = -g.hbar * np.angle(th)  # S_a - S_b per stored link
    nbr = [[] for _ in range(g.dim)]
    for k, (a, b) in enumerate(zip(g.la.tolist(), g.lb.tolist())):
        nbr[a].append((b, k, -1.0))  # S_b = S_a - (S_a - S_b)
        nbr[b].append((a, k, 1.0))
    S = np.full(g.dim, np.nan)
    S[root] = 0.0
    tree = np.zeros(g.n_links, dtype=bool)
    queue = deque([root])
    while queue:
        n = queue.popleft()
        for m, k, sgn in nbr[n]:
            if np.isnan(S[m]):
                S[m] = S[n] + sgn * phase[k]
                tree[k] = True
                queue.append(m)
    if np.any(np.isnan(S)):
        raise InconsistentStateError("adjacency graph is not connected")
    return S, th, tree


def cycle_defects(state: WaveFreeState, root: int = 0) -> np.ndarray:
    """Closure error |prod theta - 1| of each fundamental cycle of the adjacency graph.

    Each link outside a breadth-first spanning tree closes exactly one cycle; together
    these cycles form a basis, so all of them closing means every cycle closes.
    """
    S, th, tree = _tree_phases(state, root)
    g = state.geometry
    off = ~tree
    z = th[off] * np.exp(1j * (S[g.la[off]] - S[g.lb[off]]) / g.hbar)
    return np.abs(z - 1.0)


def reconstruct_phases(state: WaveFreeState, H: HermitianGenerator | None = None, root: int = 0,
                       tol: float = LOOP_TOL) -> PolarField:
    """Phases S (zero at ``root``) accumulated along a breadth-first spanning tree.

    Every non-tree link closes a cycle; its theta must agree with the tree phases
    within ``tol`` or InconsistentStateError is raised.
    """
    _check_generator(state, H)
    g = state.geometry
    S, th, tree = _tree_phases(state, root)
    off = ~tree
    if np.any(off):
        z = th[off] * np.exp(1j * (S[g.la[off]] - S[g.lb[off]]) / g.hbar)
        defect = np.abs(z - 1.0)
        if defect.max() > tol:
            raise InconsistentStateError(f"loop closure defect {defect.max():.3g} exceeds {tol}")
    R = np.sqrt(np.maximum(state.P, 0.0))
    S = np.angle(np.exp(1j * S / g.hbar)) * g.hbar
    return PolarField(R, S, g.hbar)


def loop_defects(state: WaveFreeState) -> np.ndarray:
    """|theta_ab theta_bc theta_ca - 1| for every 3-cycle of the adjacency graph."""
    g = state.geometry
    th = theta_values(state)
    tab = {}
    for k, (a, b) in enumerate(zip(g.la.tolist(), g.lb.tolist())):
        tab[(a, b)] = th[k]
        tab[(b, a)] = np.conj(th[k])
    out = []
    adj = [set(x) for x in g.adjacency]
    for a in range(g.dim):
        for b in adj[a]:
            if b <= a:
                continue
            for c in adj[a] & adj[b]:
                if c > b:
                    out.append(abs(tab[(a, b)] * tab[(b, c)] * tab[(c, a)] - 1.0))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class WaveFreeRun:
    times: np.ndarray
    P: np.ndarray       # (records, N)
    J: np.ndarray       # (records, L)
    signs: np.ndarray   # (records, L)
    flips: np.ndarray   # (k, 2) rows of (step, link)
    dt: float
    final: WaveFreeState
    diagnostics: dict
    backend: str
    wall_time: float

    @property
    def Tbar(self) -> np.ndarray:
        """(records, L, 2) generalized rates laid out like ``WaveFreeState.Tbar``."""
        g = self.final.geometry
        pa, pb = self.P[:, g.la], self.P[:, g.lb]
        with np.errstate(divide="ignore", invalid="ignore"):
            ab = np.where(pb >= EPS_P, self.J / pb, np.nan)
            ba = np.where(pa >= EPS_P, -self.J / pa, np.nan)
        return np.stack([ab, ba], axis=-1)

    def flip_times(self, link: int | None = None) -> np.ndarray:
        rows = self.flips if link is None else self.flips[self.flips[:, 1] == link]
        return self.times[0] + rows[:, 0] * self.dt


def evolve_wavefree(state: WaveFreeState, H: HermitianGenerator | None, dt: float, steps: int,
                    scheme: str = "rk4", record_every: int = 1, backend: str | None = None
                    ) -> WaveFreeRun:
    """Advance ``steps`` steps, recording the state at t0 and every ``record_every`` steps."""
    _check_generator(state, H)
    _check_dt(state.geometry, H, dt, scheme)
    kern = _backend.get(backend)
    it = _Integrator(state, dt, scheme, kern)
    Ps, Js, regs = [state.P[None, :]], [state.J[None, :]], [state.signs[None, :]]
    wall = time.perf_counter()
    done = 0
    while done < steps:
        # bounded chunks keep the flip log and record buffers small
        chunk = min(steps - done, record_every * max(1, 65536 // record_every))
        if chunk >= record_every:
            chunk -= chunk % record_every
        p, j, r = it.advance(chunk, rec_every=record_every)
        if chunk < record_every:
            p, j, r = it.P[None, :].copy(), it.J[None, :].copy(), it.reg[None, :].copy()
        done += chunk
        Ps.append(p)
        Js.append(j)
        regs.append(r)
    Ps, Js, regs = np.concatenate(Ps), np.concatenate(Js), np.concatenate(regs)
    nrec = steps // record_every
    times = state.t + dt * record_every * np.arange(nrec + 1)
    if steps % record_every:
        times = np.append(times, state.t + steps * dt)
    wall = time.perf_counter() - wall
    diag = it.diagnostics()
    diag["sum_drift"] = float(np.abs(Ps.sum(axis=1) - Ps[0].sum()).max())
    if diag["guard_exhausted"]:
        log.warning("euler step guard could not be met at the finest substep on %d occasions",
                    diag["guard_exhausted"])
    return WaveFreeRun(times=times, P=Ps, J=Js, signs=regs,
                       flips=it.flip_log(), dt=dt, final=it.state(), diagnostics=diag,
                       backend=_backend.name_of(kern), wall_time=wall)


RULES = ("instant", "flux")


def simulate_wavefree_ensemble(state0: WaveFreeState, H: HermitianGenerator | None, M: int,
                               horizon: float, seed: int, dt: float, scheme: str = "rk4",
                               rule: str = "instant", n0=None, n_samples: int = 20,
                               backend: str | None = None) -> ensemble.EnsembleResult:
    """Jump trajectories driven by the co-evolved clipped rates T = max(0, Tbar).

    ``rule="instant"`` uses the rates at the start of each step times dt;
    ``rule="flux"`` uses the probability actually moved across each link during the
    step divided by the source probability at its start.
    """
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}, got {rule!r}")
    _check_generator(state0, H)
    _check_dt(state0.geometry, H, dt, scheme)
    rng.check_seed(seed)
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ValueError("horizon shorter than one step")
    g = state0.geometry
    kern = _backend.get(backend)
    it = _Integrator(state0, dt, scheme, kern)
    if n0 is None:
        n0 = ensemble.sample_initial(state0.P, M, seed)
    n0 = np.asarray(n0, dtype=np.int64)
    table = ensemble.JumpTable(g.dim, g.la, g.lb)
    counts = {"caps": 0, "floors": 0}

    def stepper(s):
        P0 = it.P.copy()
        J0 = it.J.copy()
        it.dflux[:] = 0.0
        it.advance(1)
        oka = P0[g.la] >= EPS_P
        okb = P0[g.lb] >= EPS_P
        counts["floors"] += int(np.count_nonzero(P0 < EPS_P))
        moved_ab = np.maximum(J0 * dt if rule == "instant" else it.dflux, 0.0)
        moved_ba = np.maximum(-(J0 * dt) if rule == "instant" else -it.dflux, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            p_ab = np.where(okb, moved_ab / P0[g.lb], 0.0)
            p_ba = np.where(oka, moved_ba / P0[g.la], 0.0)
        p_ab, p_ba, capped = ensemble.cap_exit(table, g.la, g.lb, p_ab, p_ba)
        counts["caps"] += capped
        return p_ab, p_ba, it.P.copy()

    out = ensemble.run_jumps(table, n0, steps, dt, state0.t, seed, stepper, n_samples, kernels=kern)
    if counts["caps"] or counts["floors"]:
        log.info("wave-free ensemble: %d capped exit probabilities, %d floored label-steps",
                 counts["caps"], counts["floors"])
    return ensemble.EnsembleResult(seed=seed, M=int(n0.size), dt=dt, t0=state0.t, initial_labels=n0,
                                   cap_events=counts["caps"], floor_events=counts["floors"], **out)
