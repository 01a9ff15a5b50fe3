"""Numpy implementations of the hot loops.

These are the reference semantics for the compiled kernels in ``_ckernels.pyx``;
both modules expose the same functions with the same in-place conventions.
"""
from __future__ import annotations

import numpy as np

EULER, MIDPOINT, RK4 = 0, 1, 2
UPWIND, CENTRAL = 0, 1

# slots of the diagnostics vector filled by wavefree_advance
D_MIN_RAD, D_MAX_DTHETA, D_MAX_THETA_DEV, D_GUARD, D_SUBSTEPS, D_FROZEN = range(6)
N_DIAG = 6

OK, RADICAND_VIOLATION, CFL_VIOLATION = 0, 1, 2

_UNITS = 4096  # finest euler substep is dt / _UNITS
RADICAND_FLOOR = -1e-9


def _scatter(la, lb, w, n):
    return np.bincount(la, weights=w, minlength=n) - np.bincount(lb, weights=w, minlength=n)


def _beta(P, J, sgn, la, lb, hmod2, hbar):
    """Signed beta = s |H| alpha = 2 Re(H_ab conj(psi_a) psi_b) implied by the state."""
    rad = 4.0 * hmod2 * P[la] * P[lb] - (hbar * J) ** 2
    return sgn * np.sqrt(np.maximum(rad, 0.0))


def _link_rates(P, J, beta, la, lb, hmod2, hdiag, hbar, eps_p, n):
    """(dJ/dt, dbeta/dt) per link from the closed equation for z = (beta + i hbar J) / 2.

    Labels below ``eps_p`` contribute no 1/P terms.
    """
    A = np.bincount(lb, weights=J, minlength=n) - np.bincount(la, weights=J, minlength=n)
    B = np.bincount(la, weights=beta, minlength=n) + np.bincount(lb, weights=beta, minlength=n)
    inv = np.zeros(n)
    live = P >= eps_p
    inv[live] = 1.0 / P[live]
    ia, ib = inv[la], inv[lb]
    dh = hdiag[la] - hdiag[lb]
    xr = (B[la] - beta) * ia - (B[lb] - beta) * ib
    xi = (A[la] + J) * ia + (A[lb] - J) * ib
    hb2 = hbar * hbar
    jd = dh * beta / hb2 + 2.0 * hmod2 / hb2 * (P[lb] - P[la]) + 0.5 * (beta * xr / hb2 - J * xi)
    bd = -dh * J - 0.5 * (beta * xi + J * xr)
    return jd, bd


def _euler_parts(P, J, beta, la, lb, hmod2, hdiag, hbar, eps_p, n):
    """Pieces of one explicit rate update: clipped flows, exit rates and Tbar slopes.

    Each link evolves the generalized rate whose denominator is its larger endpoint
    probability; links with both endpoints below the floor are held.
    """
    jd, bd = _link_rates(P, J, beta, la, lb, hmod2, hdiag, hbar, eps_p, n)
    oka = P[la] >= eps_p
    okb = P[lb] >= eps_p
    out_b = np.where(okb, np.maximum(J, 0.0) / np.where(okb, P[lb], 1.0), 0.0)
    out_a = np.where(oka, np.maximum(-J, 0.0) / np.where(oka, P[la], 1.0), 0.0)
    exit_rate = np.bincount(lb, weights=out_b, minlength=n) + np.bincount(la, weights=out_a, minlength=n)
    flow = out_b * P[lb] - out_a * P[la]
    pdot = _scatter(la, lb, flow, n)
    use_b = P[lb] >= P[la]
    d = np.where(use_b, lb, la)
    sd = np.where(use_b, 1.0, -1.0)
    live = P[d] >= eps_p
    Pd = np.where(live, P[d], 1.0)
    tb = sd * J / Pd
    tbdot = (sd * jd - tb * pdot[d]) / Pd
    return flow, exit_rate, d, sd, live, tb, tbdot, bd


def _euler_guard(h, exit_rate, tb, tbdot, live, rate_scale):
    if exit_rate.max(initial=0.0) * h > 0.05:
        return False
    tmax = max(np.abs(tb[live]).max(initial=0.0), rate_scale)
    return np.abs(tbdot[live]).max(initial=0.0) * h <= 0.1 * tmax


def _theta(P, J, sgn, la, lb, hmod, hre, him, hbar):
    pa = np.maximum(P[la], 0.0)
    pb = np.maximum(P[lb], 0.0)
    rr = np.sqrt(pa * pb)
    rad_n = 4.0 * pa * pb - (hbar * J / hmod) ** 2
    alpha = np.sqrt(np.maximum(rad_n, 0.0))
    h = hre + 1j * him
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = (sgn * hmod * alpha + 1j * hbar * J) * np.conj(h) / (2.0 * rr * hmod * hmod)
        flip = (-sgn * hmod * alpha + 1j * hbar * J) * np.conj(h) / (2.0 * rr * hmod * hmod)
    return rad_n, keep, flip


def wavefree_advance(scheme, dt, nsteps, hbar, eps_p, node_tol, tie_tol, rate_scale,
                     la, lb, hmod, base, hre, him, hdiag,
                     P, J, reg, th_prev, th_now, hist, dflux, diag, fliplog, step0,
                     rec_every, rec_P, rec_J, rec_reg):
    """Advance the (P, J) link system ``nsteps`` steps in place.

    Within a step the signed beta is carried as an auxiliary variable, seeded from
    the state and the sign register, so no stage takes a square root near alpha = 0.
    Returns (status, flips_seen, steps_done). ``dflux`` accumulates the probability
    moved into la from lb per link; ``fliplog`` receives (step, link) rows. When
    ``rec_every`` > 0, row r of rec_P/rec_J/rec_reg receives the state after step
    (r + 1) * rec_every.
    """
    n = P.size
    hmod2 = hmod * hmod
    nflips = 0
    cap = fliplog.shape[0]
    args = (la, lb, hmod2, hdiag, hbar, eps_p, n)
    for s in range(nsteps):
        sgn = base * reg
        b = _beta(P, J, sgn, la, lb, hmod2, hbar)
        if scheme == RK4:
            k1, m1 = _link_rates(P, J, b, *args)
            J2 = J + 0.5 * dt * k1
            P2 = P + 0.5 * dt * _scatter(la, lb, J, n)
            k2, m2 = _link_rates(P2, J2, b + 0.5 * dt * m1, *args)
            J3 = J + 0.5 * dt * k2
            P3 = P + 0.5 * dt * _scatter(la, lb, J2, n)
            k3, m3 = _link_rates(P3, J3, b + 0.5 * dt * m2, *args)
            J4 = J + dt * k3
            P4 = P + dt * _scatter(la, lb, J3, n)
            k4, _ = _link_rates(P4, J4, b + dt * m3, *args)
            fl = dt / 6.0 * (J + 2.0 * J2 + 2.0 * J3 + J4)
            J += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            P += _scatter(la, lb, fl, n)
            dflux += fl
        elif scheme == MIDPOINT:
            k1, m1 = _link_rates(P, J, b, *args)
            J2 = J + 0.5 * dt * k1
            P2 = P + 0.5 * dt * _scatter(la, lb, J, n)
            k2, _ = _link_rates(P2, J2, b + 0.5 * dt * m1, *args)
            fl = dt * J2
            J += dt * k2
            P += _scatter(la, lb, fl, n)
            dflux += fl
        else:
            left = _UNITS
            last = _UNITS
            while left > 0:
                flow, exit_rate, d, sd, live, tb, tbdot, bd = _euler_parts(P, J, b, *args)
                hu = min(left, 2 * last)
                while hu > 1 and not _euler_guard(hu * dt / _UNITS, exit_rate, tb, tbdot, live, rate_scale):
                    hu //= 2
                h = hu * dt / _UNITS
                if hu == 1 and not _euler_guard(h, exit_rate, tb, tbdot, live, rate_scale):
                    diag[D_GUARD] += 1
                if hu < _UNITS:
                    diag[D_SUBSTEPS] += 1
                fl = h * flow
                P += _scatter(la, lb, fl, n)
                dflux += fl
                J[:] = np.where(live, sd * (tb + h * tbdot) * P[d], J)
                b = b + h * bd
                left -= hu
                last = hu
        diag[D_FROZEN] += np.count_nonzero(P < eps_p)

        rad_n, keep, flip = _theta(P, J, sgn, la, lb, hmod, hre, him, hbar)
        rmin = rad_n.min(initial=np.inf)
        if rmin < diag[D_MIN_RAD]:
            diag[D_MIN_RAD] = rmin
        if rmin < RADICAND_FLOOR:
            return RADICAND_VIOLATION, nflips, s
        valid = (P[la] >= eps_p) & (P[lb] >= eps_p)
        pred = np.where(hist >= 2, 2.0 * th_now - th_prev, th_now)
        decide = valid & (hist >= 1) & (np.abs(keep - flip) > tie_tol)
        do_flip = decide & (np.abs(flip - pred) < np.abs(keep - pred))
        new = np.where(do_flip, flip, keep)
        for l in np.flatnonzero(do_flip):
            if nflips < cap:
                fliplog[nflips, 0] = step0 + s + 1
                fliplog[nflips, 1] = l
            nflips += 1
        reg[do_flip] = -reg[do_flip]
        good = valid & (P[la] * P[lb] >= node_tol)
        if np.any(good):
            dev = np.abs(np.abs(new[good]) - 1.0).max()
            if dev > diag[D_MAX_THETA_DEV]:
                diag[D_MAX_THETA_DEV] = dev
            both = good & (hist >= 1)
            if np.any(both):
                jump = np.abs(new[both] - th_now[both]).max()
                if jump > diag[D_MAX_DTHETA]:
                    diag[D_MAX_DTHETA] = jump
        th_prev[:] = th_now
        th_now[:] = np.where(valid, new, 0.0)
        hist[:] = np.where(valid, np.minimum(hist + 1, 2), 0)
        if rec_every > 0 and (s + 1) % rec_every == 0:
            r = (s + 1) // rec_every - 1
            if r < rec_P.shape[0]:
                rec_P[r] = P
                rec_J[r] = J
                rec_reg[r] = reg
    return OK, nflips, nsteps


def sample_jumps(x, u, tgt, cum, deg, changed):
    """Categorical jump draw for every trajectory; returns the number that moved."""
    c = cum[x]
    cnt = (c <= u[:, None]).sum(axis=1)
    idx = np.flatnonzero(cnt < deg[x])
    x[idx] = tgt[x[idx], cnt[idx]]
    changed[:idx.size] = idx
    return idx.size


def f3_advance(P, v, V, nsteps, dt, a, m, hbar, eps_p, flux, convective):
    """Grid hydrodynamics: velocity kick from -D(V + Q [+ m v^2/2]), then flux-form continuity.

    Returns (status, steps_done, floor_events).
    """
    floors = 0
    c2 = -hbar * hbar / (2.0 * m * a * a)
    for s in range(nsteps):
        low = P < eps_p
        floors += int(np.count_nonzero(low))
        sq = np.sqrt(np.where(low, eps_p, P))
        W = V + c2 * (np.roll(sq, -1) - 2.0 * sq + np.roll(sq, 1)) / sq
        if convective:
            W = W + 0.5 * m * v * v
        v -= dt / m * (np.roll(W, -1) - np.roll(W, 1)) / (2.0 * a)
        if np.abs(v).max() * dt / a > 0.5:
            return CFL_VIOLATION, s, floors
        if flux == UPWIND:
            F = P * np.maximum(v, 0.0) + np.roll(P, -1) * np.minimum(np.roll(v, -1), 0.0)
        else:
            pv = P * v
            F = 0.5 * (pv + np.roll(pv, -1))
        P -= dt / a * (F - np.roll(F, 1))
    return OK, nsteps, floors
