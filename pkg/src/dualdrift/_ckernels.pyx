# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Same argument conventions, but array inputs must already be broadcast to a
common flat shape (the dispatcher in ``kernels`` does that).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, tan, sqrt, fabs, cos, sin, hypot

cnp.import_array()

NAME = "compiled"

cdef double REAR_TOL = 1e-12
cdef int REAR_MAXIT = 60
cdef double PHI_TINY = 1e-100


cdef inline void _shape(double phi, double E, double* fb, double* dfb) noexcept nogil:
    cdef double c3 = E * E + 1.0 / 12.0
    cdef double P = phi + E * phi * phi + c3 * phi * phi * phi
    cdef double dP = 1.0 + 2.0 * E * phi + 3.0 * c3 * phi * phi
    fb[0] = -expm1(-P)
    dfb[0] = dP * exp(-P)


cdef inline void _decay(double phi, const double* tp, double* fac, double* dfac) noexcept nogil:
    cdef double p0 = tp[6], c = tp[7], fl = tp[8], w = tp[9], x, g, dg, ex
    if c == 0.0 or not (phi > p0):
        fac[0] = 1.0
        dfac[0] = 0.0
        return
    x = phi - p0
    if x < w:
        g = 0.5 * x * x / w
        dg = x / w
    else:
        g = x - 0.5 * w
        dg = 1.0
    ex = exp(-(c / (1.0 - fl)) * g)
    fac[0] = fl + (1.0 - fl) * ex
    dfac[0] = -c * dg * ex


cdef inline double _ratio(double fb, double phi) noexcept nogil:
    return fb / phi if phi > PHI_TINY else 1.0


cdef inline void _forces(double alpha, double s, double fz, double mu, const double* tp,
                         double* fx, double* fy, double* fbar) noexcept nogil:
    cdef double mux = mu * tp[4], muy = mu * tp[5]
    cdef double u = tp[3] * tp[0] * s / (mux * fz)
    cdef double py = tp[1] * tan(alpha) / (muy * fz)
    cdef double phi = hypot(u, py)
    cdef double fb, dfb, fac, dfac, q
    _shape(phi, tp[2], &fb, &dfb)
    _decay(phi, tp, &fac, &dfac)
    q = _ratio(fb, phi)
    fx[0] = mux * fz * q * u
    fy[0] = -muy * fac * fz * q * py
    fbar[0] = fb


cdef inline double _lateral(double alpha, double fz, double mu, const double* tp) noexcept nogil:
    cdef double muy = mu * tp[5]
    cdef double py = tp[1] * tan(alpha) / (muy * fz)
    cdef double phi = fabs(py), fb, dfb, fac, dfac, sgn
    _shape(phi, tp[2], &fb, &dfb)
    _decay(phi, tp, &fac, &dfac)
    sgn = 1.0 if py > 0 else (-1.0 if py < 0 else 0.0)
    return -sgn * muy * fz * fac * fb


cdef inline double _lateral_slope(double alpha, double fz, double mu, const double* tp) noexcept nogil:
    cdef double muy = mu * tp[5]
    cdef double t = tan(alpha)
    cdef double phi = fabs(tp[1] * t / (muy * fz)), fb, dfb, fac, dfac
    _shape(phi, tp[2], &fb, &dfb)
    _decay(phi, tp, &fac, &dfac)
    return -tp[1] * (1.0 + t * t) * (dfb * fac + fb * dfac)


cdef inline void _fx_slope(double s, double py, double fz, double mux, const double* tp,
                           double* fx, double* dfx) noexcept nogil:
    cdef double u = tp[3] * tp[0] * s / (mux * fz)
    cdef double phi = hypot(u, py), fb, dfb, q, cu, cy, dfdu
    _shape(phi, tp[2], &fb, &dfb)
    q = _ratio(fb, phi)
    if phi > PHI_TINY:
        cu = u / phi
        cy = py / phi
        dfdu = dfb * cu * cu + q * cy * cy
    else:
        dfdu = 1.0
    fx[0] = mux * fz * q * u
    dfx[0] = mux * fz * dfdu * tp[3] * tp[0] / (mux * fz)


cdef inline void _rear(double alpha, double cmd, double fz, double mu, const double* tp,
                       double* fx, double* fy, double* s_out) noexcept nogil:
    cdef double mux = mu * tp[4], muy = mu * tp[5]
    cdef double py = tp[1] * tan(alpha) / (muy * fz)
    cdef double lo = -1.0, hi = 1.0, f_lo, f_hi, d, s, f, df, r, s_new, fb
    cdef double tol = REAR_TOL * mux * fz
    cdef int it
    _fx_slope(lo, py, fz, mux, tp, &f_lo, &d)
    _fx_slope(hi, py, fz, mux, tp, &f_hi, &d)
    if cmd >= f_hi:
        s = 1.0
    elif cmd <= f_lo:
        s = -1.0
    else:
        s = cmd / tp[0]
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        for it in range(REAR_MAXIT):
            _fx_slope(s, py, fz, mux, tp, &f, &df)
            r = f - cmd
            if fabs(r) <= tol:
                # one polishing step puts the root at round-off level, so the
                # map stays smooth under finite differencing
                if df > 0:
                    s_new = s - r / df
                    if -1.0 <= s_new <= 1.0:
                        s = s_new
                break
            if r < 0:
                lo = s
            elif r > 0:
                hi = s
            s_new = s - r / df if df > 0 else s
            if s_new <= lo or s_new >= hi or not (df > 0):
                s_new = 0.5 * (lo + hi)
            s = s_new
    _forces(alpha, s, fz, mu, tp, fx, fy, &fb)
    s_out[0] = s


cdef inline void _field_full(const double* x, const double* u, double mu, double kappa,
                             const double* cp, double* out) noexcept nogil:
    cdef const double* tp = cp + 7
    cdef double e = x[0], dpsi = x[1], vx = x[2], beta = x[3], r = x[4]
    cdef double delta = u[0], fxr = u[1], dmz = u[2]
    cdef double vxs = vx if vx > cp[17] else cp[17]
    cdef double vy = vx * tan(beta)
    cdef double af = beta + cp[2] * r / vxs - delta
    cdef double ar = beta - cp[3] * r / vxs
    cdef double ff = _lateral(af, cp[5], mu, tp)
    cdef double fx, fr, s
    _rear(ar, fxr, cp[6], mu, tp, &fx, &fr, &s)
    cdef double cd = cos(delta), sd = sin(delta)
    cdef double cpsi = cos(dpsi), spsi = sin(dpsi)
    cdef double sdot = (vx * cpsi - vy * spsi) / (1.0 - kappa * e)
    out[0] = vy * cpsi + vx * spsi
    out[1] = r - kappa * sdot
    out[2] = (fx - ff * sd) / cp[0] + r * vy
    out[3] = (fr + ff * cd) / (cp[0] * vxs) - r
    out[4] = (cp[2] * ff * cd - cp[3] * fr + dmz) / cp[1]


def tire_forces(const double[::1] alpha, const double[::1] s, const double[::1] fz, const double[::1] mu, const double[::1] tp):
    cdef Py_ssize_t n = alpha.shape[0], i
    fx = np.empty(n)
    fy = np.empty(n)
    fb = np.empty(n)
    cdef double[::1] vfx = fx, vfy = fy, vfb = fb
    with nogil:
        for i in range(n):
            _forces(alpha[i], s[i], fz[i], mu[i], &tp[0], &vfx[i], &vfy[i], &vfb[i])
    return fx, fy, fb


def lateral_force(const double[::1] alpha, const double[::1] fz, const double[::1] mu, const double[::1] tp):
    cdef Py_ssize_t n = alpha.shape[0], i
    out = np.empty(n)
    cdef double[::1] v = out
    with nogil:
        for i in range(n):
            v[i] = _lateral(alpha[i], fz[i], mu[i], &tp[0])
    return out


def lateral_slope(const double[::1] alpha, const double[::1] fz, const double[::1] mu, const double[::1] tp):
    cdef Py_ssize_t n = alpha.shape[0], i
    out = np.empty(n)
    cdef double[::1] v = out
    with nogil:
        for i in range(n):
            v[i] = _lateral_slope(alpha[i], fz[i], mu[i], &tp[0])
    return out


def rear_forces(const double[::1] alpha, const double[::1] cmd, const double[::1] fz, const double[::1] mu, const double[::1] tp):
    cdef Py_ssize_t n = alpha.shape[0], i
    fx = np.empty(n)
    fy = np.empty(n)
    s = np.empty(n)
    cdef double[::1] vfx = fx, vfy = fy, vs = s
    with nogil:
        for i in range(n):
            _rear(alpha[i], cmd[i], fz[i], mu[i], &tp[0], &vfx[i], &vfy[i], &vs[i])
    return fx, fy, s


def field_2dof(const double[::1] beta, const double[::1] r, const double[::1] vx, const double[::1] delta,
               const double[::1] mu, const double[::1] dmz, const double[::1] cp):
    cdef Py_ssize_t n = beta.shape[0], i
    bd = np.empty(n)
    rd = np.empty(n)
    cdef double[::1] vb = bd, vr = rd
    cdef const double* tp = &cp[7]
    cdef double ff, fr
    with nogil:
        for i in range(n):
            ff = _lateral(beta[i] + cp[2] * r[i] / vx[i] - delta[i], cp[5], mu[i], tp)
            fr = _lateral(beta[i] - cp[3] * r[i] / vx[i], cp[6], mu[i], tp)
            vb[i] = (ff + fr) / (cp[0] * vx[i]) - r[i]
            vr[i] = (ff * cp[2] - fr * cp[3] + dmz[i]) / cp[1]
    return bd, rd


def field_full(const double[:, ::1] x, const double[:, ::1] u, double mu, double kappa, const double[::1] cp):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty((n, 5))
    cdef double[:, ::1] v = out
    with nogil:
        for i in range(n):
            _field_full(&x[i, 0], &u[i, 0], mu, kappa, &cp[0], &v[i, 0])
    return out


def rollout(const double[:, ::1] x0, const double[:, :, ::1] U, double dt, double mu, double kappa, const double[::1] cp):
    cdef Py_ssize_t B = U.shape[0], N = U.shape[1], b, k, j
    X = np.empty((B, N + 1, 5))
    cdef double[:, :, ::1] vX = X
    cdef double x[5]
    cdef double xs[5]
    cdef double k1[5]
    cdef double k2[5]
    cdef double k3[5]
    cdef double k4[5]
    cdef double h = dt
    with nogil:
        for b in range(B):
            for j in range(5):
                x[j] = x0[b, j]
                vX[b, 0, j] = x[j]
            for k in range(N):
                _field_full(x, &U[b, k, 0], mu, kappa, &cp[0], k1)
                for j in range(5):
                    xs[j] = x[j] + 0.5 * h * k1[j]
                _field_full(xs, &U[b, k, 0], mu, kappa, &cp[0], k2)
                for j in range(5):
                    xs[j] = x[j] + 0.5 * h * k2[j]
                _field_full(xs, &U[b, k, 0], mu, kappa, &cp[0], k3)
                for j in range(5):
                    xs[j] = x[j] + h * k3[j]
                _field_full(xs, &U[b, k, 0], mu, kappa, &cp[0], k4)
                for j in range(5):
                    x[j] = x[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                    vX[b, k + 1, j] = x[j]
    return X


def polygon_sdf(const double[:, ::1] p, const double[:, ::1] poly):
    cdef Py_ssize_t n = p.shape[0], m = poly.shape[0], i, j, jn
    out = np.empty(n)
    cdef double[::1] v = out
    cdef double ax, ay, bx, by, abx, aby, apx, apy, L2, t, dx, dy, d2, best, px, py, xint
    cdef int crossings
    with nogil:
        for i in range(n):
            px = p[i, 0]
            py = p[i, 1]
            best = 1e300
            crossings = 0
            for j in range(m):
                jn = j + 1 if j + 1 < m else 0
                ax = poly[j, 0]
                ay = poly[j, 1]
                bx = poly[jn, 0]
                by = poly[jn, 1]
                abx = bx - ax
                aby = by - ay
                apx = px - ax
                apy = py - ay
                L2 = abx * abx + aby * aby
                t = (apx * abx + apy * aby) / (L2 if L2 > 0 else 1.0)
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                dx = apx - t * abx
                dy = apy - t * aby
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
                if (ay > py) != (by > py):
                    xint = ax + (py - ay) * abx / ((by - ay) if by - ay != 0 else 1.0)
                    if px < xint:
                        crossings += 1
            v[i] = sqrt(best) if crossings % 2 == 1 else -sqrt(best)
    return out
