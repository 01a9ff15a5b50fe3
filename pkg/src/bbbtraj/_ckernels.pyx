# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``; same signatures, same semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

ctypedef cnp.int64_t i64

cdef int EULER = 0, MIDPOINT = 1, RK4 = 2
cdef int UPWIND = 0
cdef int OK = 0, RADICAND_VIOLATION = 1, CFL_VIOLATION = 2
cdef int D_MIN_RAD = 0, D_MAX_DTHETA = 1, D_MAX_THETA_DEV = 2, D_GUARD = 3, D_SUBSTEPS = 4, D_FROZEN = 5
cdef long UNITS = 4096
cdef double RADICAND_FLOOR = -1e-9


cdef inline double cabs_(double complex z) noexcept nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef void link_rates(Py_ssize_t n, Py_ssize_t nl, double[::1] P, double[::1] J, double[::1] beta,
                     const i64[::1] la, const i64[::1] lb, double[::1] hmod2, const double[::1] hdiag,
                     double hbar, double eps_p, double[::1] A, double[::1] B, double[::1] inv,
                     double[::1] jd, double[::1] bd) noexcept nogil:
    cdef Py_ssize_t i, l, a, b
    cdef double j, bt, ia, ib, dh, xr, xi
    cdef double hb2 = hbar * hbar
    for i in range(n):
        A[i] = 0.0
        B[i] = 0.0
        if P[i] >= eps_p:
            inv[i] = 1.0 / P[i]
        else:
            inv[i] = 0.0
    for l in range(nl):
        a = la[l]
        b = lb[l]
        A[b] += J[l]
        A[a] -= J[l]
        B[a] += beta[l]
        B[b] += beta[l]
    for l in range(nl):
        a = la[l]
        b = lb[l]
        j = J[l]
        bt = beta[l]
        ia = inv[a]
        ib = inv[b]
        dh = hdiag[a] - hdiag[b]
        xr = (B[a] - bt) * ia - (B[b] - bt) * ib
        xi = (A[a] + j) * ia + (A[b] - j) * ib
        jd[l] = dh * bt / hb2 + 2.0 * hmod2[l] / hb2 * (P[b] - P[a]) + 0.5 * (bt * xr / hb2 - j * xi)
        bd[l] = -dh * j - 0.5 * (bt * xi + j * xr)


cdef inline void stage(Py_ssize_t n, Py_ssize_t nl, double c, double[::1] P, double[::1] J,
                       double[::1] Jsrc, double[::1] k, double[::1] b, double[::1] m,
                       const i64[::1] la, const i64[::1] lb,
                       double[::1] Pout, double[::1] Jout, double[::1] bout) noexcept nogil:
    """Pout = P + c * scatter(Jsrc); Jout = J + c * k; bout = b + c * m."""
    cdef Py_ssize_t i, l
    for i in range(n):
        Pout[i] = P[i]
    for l in range(nl):
        Pout[la[l]] += c * Jsrc[l]
        Pout[lb[l]] -= c * Jsrc[l]
        Jout[l] = J[l] + c * k[l]
        bout[l] = b[l] + c * m[l]


cdef bint euler_guard(Py_ssize_t n, Py_ssize_t nl, double h, double[::1] exit_rate,
                      double[::1] tb, double[::1] tbdot, cnp.uint8_t[::1] live,
                      double rate_scale) noexcept nogil:
    cdef Py_ssize_t i, l
    cdef double emax = 0.0, tmax = 0.0, dmax = 0.0
    for i in range(n):
        if exit_rate[i] > emax:
            emax = exit_rate[i]
    if emax * h > 0.05:
        return False
    for l in range(nl):
        if live[l]:
            if fabs(tb[l]) > tmax:
                tmax = fabs(tb[l])
            if fabs(tbdot[l]) > dmax:
                dmax = fabs(tbdot[l])
    if rate_scale > tmax:
        tmax = rate_scale
    return dmax * h <= 0.1 * tmax


def wavefree_advance(int scheme, double dt, long nsteps, double hbar, double eps_p,
                     double node_tol, double tie_tol, double rate_scale,
                     const i64[::1] la, const i64[::1] lb, const double[::1] hmod,
                     const double[::1] base, const double[::1] hre, const double[::1] him,
                     const double[::1] hdiag,
                     double[::1] P, double[::1] J, double[::1] reg,
                     double complex[::1] th_prev, double complex[::1] th_now, i64[::1] hist,
                     double[::1] dflux, double[::1] diag, i64[:, ::1] fliplog, long step0,
                     long rec_every, double[:, ::1] rec_P, double[:, ::1] rec_J,
                     double[:, ::1] rec_reg):
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t nl = J.shape[0]
    cdef Py_ssize_t cap = fliplog.shape[0]
    cdef Py_ssize_t nrec = rec_P.shape[0]
    cdef Py_ssize_t i, l, a, b, dl
    cdef long s, nflips = 0, left, last, hu, r
    cdef double h, pa, pb, rr, rad_n, alpha, rmin, dev, jump, sg, hm, fl, rad
    cdef double complex hc, keep, flip, pred, new
    cdef bint valid
    cdef int status = OK
    cdef long done = nsteps

    hmod2_a = np.empty(nl)
    cdef double[::1] hmod2 = hmod2_a
    cdef double[::1] sgn = np.empty(nl)
    cdef double[::1] A = np.empty(n)
    cdef double[::1] B = np.empty(n)
    cdef double[::1] inv = np.empty(n)
    cdef double[::1] b0 = np.empty(nl)
    cdef double[::1] b2 = np.empty(nl)
    cdef double[::1] b3 = np.empty(nl)
    cdef double[::1] b4 = np.empty(nl)
    cdef double[::1] k1 = np.empty(nl)
    cdef double[::1] k2 = np.empty(nl)
    cdef double[::1] k3 = np.empty(nl)
    cdef double[::1] k4 = np.empty(nl)
    cdef double[::1] m1 = np.empty(nl)
    cdef double[::1] m2 = np.empty(nl)
    cdef double[::1] m3 = np.empty(nl)
    cdef double[::1] J2 = np.empty(nl)
    cdef double[::1] J3 = np.empty(nl)
    cdef double[::1] J4 = np.empty(nl)
    cdef double[::1] P2 = np.empty(n)
    cdef double[::1] P3 = np.empty(n)
    cdef double[::1] P4 = np.empty(n)
    cdef double[::1] exit_rate = np.empty(n)
    cdef double[::1] flow = np.empty(nl)
    cdef double[::1] pdot = np.empty(n)
    cdef double[::1] tb = np.empty(nl)
    cdef double[::1] tbdot = np.empty(nl)
    cdef double[::1] sd = np.empty(nl)
    cdef i64[::1] dsel = np.empty(nl, dtype=np.int64)
    cdef cnp.uint8_t[::1] live = np.empty(nl, dtype=np.uint8)

    for l in range(nl):
        hmod2[l] = hmod[l] * hmod[l]

    with nogil:
        for s in range(nsteps):
            for l in range(nl):
                sgn[l] = base[l] * reg[l]
                rad = 4.0 * hmod2[l] * P[la[l]] * P[lb[l]] - (hbar * J[l]) * (hbar * J[l])
                b0[l] = sgn[l] * sqrt(rad) if rad > 0.0 else 0.0
            if scheme == RK4:
                link_rates(n, nl, P, J, b0, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k1, m1)
                stage(n, nl, 0.5 * dt, P, J, J, k1, b0, m1, la, lb, P2, J2, b2)
                link_rates(n, nl, P2, J2, b2, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k2, m2)
                stage(n, nl, 0.5 * dt, P, J, J2, k2, b0, m2, la, lb, P3, J3, b3)
                link_rates(n, nl, P3, J3, b3, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k3, m3)
                stage(n, nl, dt, P, J, J3, k3, b0, m3, la, lb, P4, J4, b4)
                link_rates(n, nl, P4, J4, b4, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k4, m1)
                for l in range(nl):
                    fl = dt / 6.0 * (J[l] + 2.0 * J2[l] + 2.0 * J3[l] + J4[l])
                    J[l] += dt / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4[l])
                    P[la[l]] += fl
                    P[lb[l]] -= fl
                    dflux[l] += fl
            elif scheme == MIDPOINT:
                link_rates(n, nl, P, J, b0, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k1, m1)
                stage(n, nl, 0.5 * dt, P, J, J, k1, b0, m1, la, lb, P2, J2, b2)
                link_rates(n, nl, P2, J2, b2, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k2, m2)
                for l in range(nl):
                    fl = dt * J2[l]
                    J[l] += dt * k2[l]
                    P[la[l]] += fl
                    P[lb[l]] -= fl
                    dflux[l] += fl
            else:
                left = UNITS
                last = UNITS
                while left > 0:
                    link_rates(n, nl, P, J, b0, la, lb, hmod2, hdiag, hbar, eps_p, A, B, inv, k1, m1)
                    for i in range(n):
                        exit_rate[i] = 0.0
                        pdot[i] = 0.0
                    for l in range(nl):
                        a = la[l]
                        b = lb[l]
                        pa = 0.0
                        pb = 0.0
                        if P[b] >= eps_p and J[l] > 0.0:
                            pb = J[l] / P[b]
                        if P[a] >= eps_p and J[l] < 0.0:
                            pa = -J[l] / P[a]
                        exit_rate[b] += pb
                        exit_rate[a] += pa
                        flow[l] = pb * P[b] - pa * P[a]
                        pdot[a] += flow[l]
                        pdot[b] -= flow[l]
                    for l in range(nl):
                        a = la[l]
                        b = lb[l]
                        if P[b] >= P[a]:
                            dsel[l] = b
                            sd[l] = 1.0
                        else:
                            dsel[l] = a
                            sd[l] = -1.0
                        dl = dsel[l]
                        live[l] = P[dl] >= eps_p
                        if live[l]:
                            tb[l] = sd[l] * J[l] / P[dl]
                            tbdot[l] = (sd[l] * k1[l] - tb[l] * pdot[dl]) / P[dl]
                        else:
                            tb[l] = sd[l] * J[l]
                            tbdot[l] = sd[l] * k1[l] - tb[l] * pdot[dl]
                    hu = left if left < 2 * last else 2 * last
                    while hu > 1 and not euler_guard(n, nl, hu * dt / UNITS, exit_rate, tb, tbdot, live, rate_scale):
                        hu = hu // 2
                    h = hu * dt / UNITS
                    if hu == 1 and not euler_guard(n, nl, h, exit_rate, tb, tbdot, live, rate_scale):
                        diag[D_GUARD] += 1
                    if hu < UNITS:
                        diag[D_SUBSTEPS] += 1
                    for l in range(nl):
                        fl = h * flow[l]
                        P[la[l]] += fl
                        P[lb[l]] -= fl
                        dflux[l] += fl
                    for l in range(nl):
                        if live[l]:
                            J[l] = sd[l] * (tb[l] + h * tbdot[l]) * P[dsel[l]]
                        b0[l] = b0[l] + h * m1[l]
                    left -= hu
                    last = hu
            for i in range(n):
                if P[i] < eps_p:
                    diag[D_FROZEN] += 1

            rmin = 1e300
            for l in range(nl):
                a = la[l]
                b = lb[l]
                pa = P[a] if P[a] > 0.0 else 0.0
                pb = P[b] if P[b] > 0.0 else 0.0
                hm = hmod[l]
                rad_n = 4.0 * pa * pb - (hbar * J[l] / hm) * (hbar * J[l] / hm)
                if rad_n < rmin:
                    rmin = rad_n
            if rmin < diag[D_MIN_RAD]:
                diag[D_MIN_RAD] = rmin
            if rmin < RADICAND_FLOOR:
                status = RADICAND_VIOLATION
                done = s
                break
            for l in range(nl):
                a = la[l]
                b = lb[l]
                pa = P[a] if P[a] > 0.0 else 0.0
                pb = P[b] if P[b] > 0.0 else 0.0
                hm = hmod[l]
                rad_n = 4.0 * pa * pb - (hbar * J[l] / hm) * (hbar * J[l] / hm)
                alpha = sqrt(rad_n) if rad_n > 0.0 else 0.0
                rr = sqrt(pa * pb)
                valid = P[a] >= eps_p and P[b] >= eps_p
                if not valid:
                    th_prev[l] = th_now[l]
                    th_now[l] = 0.0
                    hist[l] = 0
                    continue
                hc = hre[l] - 1j * him[l]
                sg = sgn[l]
                keep = (sg * hm * alpha + 1j * hbar * J[l]) * hc / (2.0 * rr * hm * hm)
                flip = (-sg * hm * alpha + 1j * hbar * J[l]) * hc / (2.0 * rr * hm * hm)
                new = keep
                if hist[l] >= 1 and cabs_(keep - flip) > tie_tol:
                    if hist[l] >= 2:
                        pred = 2.0 * th_now[l] - th_prev[l]
                    else:
                        pred = th_now[l]
                    if cabs_(flip - pred) < cabs_(keep - pred):
                        new = flip
                        reg[l] = -reg[l]
                        if nflips < cap:
                            fliplog[nflips, 0] = step0 + s + 1
                            fliplog[nflips, 1] = l
                        nflips += 1
                if pa * pb >= node_tol:
                    dev = fabs(cabs_(new) - 1.0)
                    if dev > diag[D_MAX_THETA_DEV]:
                        diag[D_MAX_THETA_DEV] = dev
                    if hist[l] >= 1:
                        jump = cabs_(new - th_now[l])
                        if jump > diag[D_MAX_DTHETA]:
                            diag[D_MAX_DTHETA] = jump
                th_prev[l] = th_now[l]
                th_now[l] = new
                if hist[l] < 2:
                    hist[l] += 1
            if rec_every > 0 and (s + 1) % rec_every == 0:
                r = (s + 1) // rec_every - 1
                if r < nrec:
                    for i in range(n):
                        rec_P[r, i] = P[i]
                    for l in range(nl):
                        rec_J[r, l] = J[l]
                        rec_reg[r, l] = reg[l]
    return status, nflips, done


def sample_jumps(i64[::1] x, const double[::1] u, const i64[:, ::1] tgt, const double[:, ::1] cum,
                 const i64[::1] deg, i64[::1] changed):
    cdef Py_ssize_t i, j, m
    cdef Py_ssize_t count = 0
    cdef Py_ssize_t M = x.shape[0]
    cdef double uu
    with nogil:
        for i in range(M):
            m = x[i]
            uu = u[i]
            for j in range(deg[m]):
                if uu < cum[m, j]:
                    x[i] = tgt[m, j]
                    changed[count] = i
                    count += 1
                    break
    return count


def f3_advance(double[::1] P, double[::1] v, const double[::1] V, long nsteps, double dt, double a,
               double m, double hbar, double eps_p, int flux, bint convective):
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t k, kp, km
    cdef long s, floors = 0
    cdef double c2 = -hbar * hbar / (2.0 * m * a * a)
    cdef double vmax, vk, vp
    cdef int status = OK
    cdef long done = nsteps
    cdef double[::1] sq = np.empty(n)
    cdef double[::1] W = np.empty(n)
    cdef double[::1] F = np.empty(n)
    with nogil:
        for s in range(nsteps):
            for k in range(n):
                if P[k] < eps_p:
                    floors += 1
                    sq[k] = sqrt(eps_p)
                else:
                    sq[k] = sqrt(P[k])
            for k in range(n):
                kp = k + 1 if k + 1 < n else 0
                km = k - 1 if k > 0 else n - 1
                W[k] = V[k] + c2 * (sq[kp] - 2.0 * sq[k] + sq[km]) / sq[k]
                if convective:
                    W[k] += 0.5 * m * v[k] * v[k]
            vmax = 0.0
            for k in range(n):
                kp = k + 1 if k + 1 < n else 0
                km = k - 1 if k > 0 else n - 1
                v[k] -= dt / m * (W[kp] - W[km]) / (2.0 * a)
                if fabs(v[k]) > vmax:
                    vmax = fabs(v[k])
            if vmax * dt / a > 0.5:
                status = CFL_VIOLATION
                done = s
                break
            for k in range(n):
                kp = k + 1 if k + 1 < n else 0
                if flux == UPWIND:
                    vk = v[k] if v[k] > 0.0 else 0.0
                    vp = v[kp] if v[kp] < 0.0 else 0.0
                    F[k] = P[k] * vk + P[kp] * vp
                else:
                    F[k] = 0.5 * (P[k] * v[k] + P[kp] * v[kp])
            for k in range(n):
                km = k - 1 if k > 0 else n - 1
                W[k] = F[k] - F[km]
            for k in range(n):
                P[k] -= dt / a * W[k]
    return status, done, floors
