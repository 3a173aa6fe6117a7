"""NumPy implementation of the numeric kernels.

Every function broadcasts over array arguments.  ``tp`` is the 9-entry tire
constant vector ``[Kx, Ky, E, lambda_d, mux_scale, muy_scale, phi_onset,
decay, floor, onset_width]`` and ``cp`` the full model constant vector (see
:mod:`dualdrift.params`).  No argument validation happens here; callers
check domains.
"""
import numpy as np

NAME = "python"

_REAR_TOL = 1e-12  # relative to mu*Fz
_REAR_MAXIT = 60
_PHI_TINY = 1e-100


def _shape(phi, E):
    c3 = E * E + 1.0 / 12.0
    P = phi + E * phi * phi + c3 * phi**3
    dP = 1.0 + 2.0 * E * phi + 3.0 * c3 * phi * phi
    ex = np.exp(-P)
    return -np.expm1(-P), dP * ex


def _decay(phi, tp):
    """Lateral friction multiplier past the onset slip and its phi-derivative.

    The exponent ramps in quadratically over ``onset_width`` and then grows
    linearly, so the multiplier is C1 and starts with zero slope.
    """
    p0, c, fl, w = tp[6], tp[7], tp[8], tp[9]
    if c == 0.0:
        one = np.ones_like(phi)
        return one, np.zeros_like(phi)
    k = c / (1.0 - fl)
    x = np.maximum(phi - p0, 0.0)
    if w > 0:
        g = np.where(x < w, 0.5 * x * x / w, x - 0.5 * w)
        dg = np.minimum(x / w, 1.0)
    else:
        g, dg = x, (x > 0).astype(float)
    ex = np.exp(-k * g)
    return fl + (1.0 - fl) * ex, -c * dg * ex


def _ratio(fb, phi):
    """fb/phi with its small-slip limit 1 (avoids overflow at subnormal phi)."""
    return np.divide(fb, phi, out=np.ones_like(phi), where=phi > _PHI_TINY)


def shear(phi, E):
    return _shape(np.asarray(phi, dtype=float), E)[0]


def tire_forces(alpha, s, fz, mu, tp):
    """Combined-slip (Fx, Fy, Fbar); Fy opposes positive slip angle."""
    alpha, s, fz, mu = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, s, fz, mu)))
    mux = mu * tp[4]
    muy = mu * tp[5]
    u = tp[3] * tp[0] * s / (mux * fz)
    py = tp[1] * np.tan(alpha) / (muy * fz)
    phi = np.hypot(u, py)
    fb, _ = _shape(phi, tp[2])
    fac, _ = _decay(phi, tp)
    q = _ratio(fb, phi)
    fx = mux * fz * q * u
    fy = -muy * fac * fz * q * py
    return fx, fy, fb


def lateral_force(alpha, fz, mu, tp):
    """Pure-cornering lateral force."""
    alpha = np.asarray(alpha, dtype=float)
    muy = mu * tp[5]
    py = tp[1] * np.tan(alpha) / (muy * fz)
    phi = np.abs(py)
    fb, _ = _shape(phi, tp[2])
    fac, _ = _decay(phi, tp)
    return -np.sign(py) * muy * fz * fac * fb


def lateral_slope(alpha, fz, mu, tp):
    """Analytic dFy/dalpha of the pure-cornering curve."""
    alpha = np.asarray(alpha, dtype=float)
    muy = mu * tp[5]
    phi = np.abs(tp[1] * np.tan(alpha) / (muy * fz))
    fb, dfb = _shape(phi, tp[2])
    fac, dfac = _decay(phi, tp)
    sec2 = 1.0 + np.tan(alpha) ** 2
    return -tp[1] * sec2 * (dfb * fac + fb * dfac)


def _fx_and_slope(s, py, fz, mux, tp):
    u = tp[3] * tp[0] * s / (mux * fz)
    phi = np.hypot(u, py)
    fb, dfb = _shape(phi, tp[2])
    big = phi > _PHI_TINY
    cu = np.divide(u, phi, out=np.ones_like(phi), where=big)
    cy = np.divide(py, phi, out=np.zeros_like(phi), where=big)
    q = _ratio(fb, phi)
    fx = mux * fz * q * u
    # d(fb*u/phi)/du; at phi -> 0 the limit is fb'(0) = 1
    dfdu = np.where(big, dfb * cu * cu + q * cy * cy, 1.0)
    return fx, mux * fz * dfdu * tp[3] * tp[0] / (mux * fz)


def rear_forces(alpha, fx_cmd, fz, mu, tp):
    """Rear (Fx, Fy, s) with the slip ratio chosen to deliver ``fx_cmd``.

    Safeguarded Newton on s in [-1, 1]; commands beyond what the tire can
    deliver at the bracket ends saturate there.
    """
    alpha, fx_cmd, fz, mu = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, fx_cmd, fz, mu)))
    mux = mu * tp[4]
    muy = mu * tp[5]
    py = tp[1] * np.tan(alpha) / (muy * fz)
    lo = -np.ones_like(alpha)
    hi = np.ones_like(alpha)
    f_lo, _ = _fx_and_slope(lo, py, fz, mux, tp)
    f_hi, _ = _fx_and_slope(hi, py, fz, mux, tp)
    s = np.clip(fx_cmd / tp[0], -1.0, 1.0)
    s = np.where(fx_cmd >= f_hi, 1.0, np.where(fx_cmd <= f_lo, -1.0, s))
    active = (fx_cmd < f_hi) & (fx_cmd > f_lo)
    tol = _REAR_TOL * mux * fz
    for _ in range(_REAR_MAXIT):
        if not active.any():
            break
        f, df = _fx_and_slope(s, py, fz, mux, tp)
        r = f - fx_cmd
        done = np.abs(r) <= tol
        active &= ~done
        lo = np.where(active & (r < 0), s, lo)
        hi = np.where(active & (r > 0), s, hi)
        step = np.divide(r, df, out=np.zeros_like(r), where=df > 0)
        s_new = s - step
        bad = (s_new <= lo) | (s_new >= hi) | (df <= 0)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        s = np.where(active, s_new, s)
    # one polishing step puts the root at round-off level (smooth map under finite differencing)
    inside = (fx_cmd < f_hi) & (fx_cmd > f_lo)
    f, df = _fx_and_slope(s, py, fz, mux, tp)
    step = np.divide(f - fx_cmd, df, out=np.zeros_like(f), where=df > 0)
    s_pol = s - step
    s = np.where(inside & (s_pol >= -1.0) & (s_pol <= 1.0), s_pol, s)
    fx, fy, _ = tire_forces(alpha, s, fz, mu, tp)
    return fx, fy, s


def field_2dof(beta, r, vx, delta, mu, dmz, cp):
    """Single-track (beta_dot, r_dot) with pure-cornering tires."""
    tp = cp[7:17]
    af = beta + cp[2] * r / vx - delta
    ar = beta - cp[3] * r / vx
    ff = lateral_force(af, cp[5], mu, tp)
    fr = lateral_force(ar, cp[6], mu, tp)
    bd = (ff + fr) / (cp[0] * vx) - r
    rd = (ff * cp[2] - fr * cp[3] + dmz) / cp[1]
    return bd, rd


def field_full(x, u, mu, kappa, cp):
    """Time derivative of [e, dpsi, vx, beta, r] for inputs [delta, fxr, dmz].

    ``x`` and ``u`` have shape (..., 5) and (..., 3).  Speed in denominators
    is floored at the kinematic limit so predictions stay finite.
    """
    tp = cp[7:17]
    e, dpsi, vx, beta, r = np.moveaxis(np.asarray(x, dtype=float), -1, 0)
    delta, fxr, dmz = np.moveaxis(np.asarray(u, dtype=float), -1, 0)
    vxs = np.maximum(vx, cp[17])
    vy = vx * np.tan(beta)
    af = beta + cp[2] * r / vxs - delta
    ar = beta - cp[3] * r / vxs
    ff = lateral_force(af, cp[5], mu, tp)
    fx, fr, _ = rear_forces(ar, fxr, cp[6], mu, tp)
    cd, sd = np.cos(delta), np.sin(delta)
    m = cp[0]
    out = np.empty(np.broadcast(vx, delta).shape + (5,))
    cpsi, spsi = np.cos(dpsi), np.sin(dpsi)
    sdot = (vx * cpsi - vy * spsi) / (1.0 - kappa * e)
    out[..., 0] = vy * cpsi + vx * spsi
    out[..., 1] = r - kappa * sdot
    out[..., 2] = (fx - ff * sd) / m + r * vy
    out[..., 3] = (fr + ff * cd) / (m * vxs) - r
    out[..., 4] = (cp[2] * ff * cd - cp[3] * fr + dmz) / cp[1]
    return out


def rollout(x0, U, dt, mu, kappa, cp):
    """RK4 rollouts, inputs held over each step.

    x0: (B, 5); U: (B, N, 3).  Returns X: (B, N+1, 5).
    """
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    B, N = U.shape[0], U.shape[1]
    X = np.empty((B, N + 1, 5))
    X[:, 0] = x = x0
    h = dt
    for k in range(N):
        u = U[:, k]
        k1 = field_full(x, u, mu, kappa, cp)
        k2 = field_full(x + 0.5 * h * k1, u, mu, kappa, cp)
        k3 = field_full(x + 0.5 * h * k2, u, mu, kappa, cp)
        k4 = field_full(x + h * k3, u, mu, kappa, cp)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[:, k + 1] = x
    return X


def polygon_sdf(points, poly):
    """Signed Euclidean distance from points (N, 2) to a closed polygon (M, 2).

    Positive inside (even-odd rule).
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a = np.asarray(poly, dtype=float)
    b = np.roll(a, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("nij,ij->ni", ap, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    d = ap - t[..., None] * ab[None]
    dist = np.sqrt(np.min(np.einsum("nij,nij->ni", d, d), axis=1))
    py = p[:, 1][:, None]
    px = p[:, 0][:, None]
    ya, yb = a[None, :, 1], b[None, :, 1]
    cross = (ya > py) != (yb > py)
    xint = a[None, :, 0] + (py - ya) * ab[None, :, 0] / np.where(yb - ya != 0, yb - ya, 1.0)
    inside = (np.count_nonzero(cross & (px < xint), axis=1) % 2) == 1
    return np.where(inside, dist, -dist)
