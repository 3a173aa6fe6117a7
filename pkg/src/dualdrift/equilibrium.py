"""Equilibria of the 2DOF field: root finding, stability taxonomy, handling diagram."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .params import DEFAULT_MODEL, VX_MIN, DomainError, Model
from .tire import saturation_angle, tangent_stiffness

BETA_BOX = (-0.6, 0.6)
R_BOX = (-1.2, 1.2)
N_STARTS = 25
RESID_TOL = 1e-8
STEP_TOL = 1e-10
DEDUP_TOL = 1e-4
MAX_NEWTON = 100
MAX_HALVINGS = 30
DET_TOL = 1e-10
ALPHA_BRANCH_MAX = 1.4  # rad, end of the declining branch used for inversion


class StabilityClass(str, enum.Enum):
    STABLE_NODE = "StableNode"
    STABLE_FOCUS = "StableFocus"
    SADDLE = "Saddle"
    UNSTABLE = "Unstable"
    DEGENERATE = "Degenerate"


class Case(str, enum.Enum):
    CASE1 = "Case1"  # front rising, rear rising
    CASE2 = "Case2"  # front declining, rear rising
    CASE3 = "Case3"  # front rising, rear declining
    CASE4 = "Case4"  # both declining


_CASE_OF = {(False, False): Case.CASE1, (True, False): Case.CASE2, (False, True): Case.CASE3, (True, True): Case.CASE4}


@dataclass
class Equilibrium:
    beta: float
    r: float
    delta: float
    dMz: float
    Vx: float
    mu: float
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    stability: StabilityClass
    case: Case
    C_f: float
    C_r: float
    residual: float
    critical_speed: float | None = None

    @property
    def is_saddle(self) -> bool:
        return self.stability is StabilityClass.SADDLE

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "r": self.r, "delta": self.delta, "dMz": self.dMz, "Vx": self.Vx, "mu": self.mu,
            "stability": self.stability.value, "case": self.case.value, "C_f": self.C_f, "C_r": self.C_r,
            "trace": float(np.trace(self.jacobian)), "det": float(np.linalg.det(self.jacobian)),
            "residual": self.residual,
        }


def _fz(model: Model):
    return model.loads


def slip_pair(beta, r, Vx, delta, model: Model = DEFAULT_MODEL):
    v = model.vehicle
    return beta + v.l_f * r / Vx - delta, beta - v.l_r * r / Vx


def jacobian_from_stiffness(C_f: float, C_r: float, Vx: float, model: Model = DEFAULT_MODEL) -> np.ndarray:
    v = model.vehicle
    m, Iz, lf, lr = v.m, v.Iz, v.l_f, v.l_r
    return np.array([
        [(C_f + C_r) / (m * Vx), (C_f * lf - C_r * lr) / (m * Vx**2) - 1.0],
        [(C_f * lf - C_r * lr) / Iz, (C_f * lf**2 + C_r * lr**2) / (Iz * Vx)],
    ])


def jacobian_2dof(beta, r, Vx, delta, mu, dMz=0.0, model: Model = DEFAULT_MODEL):
    """Jacobian assembled from tangent stiffnesses at the axle slip angles.

    Returns (J, C_f, C_r).  ``dMz`` does not enter the derivatives; it is
    accepted for a uniform signature.
    """
    if not Vx > VX_MIN:
        raise DomainError("Vx below the kinematic floor")
    af, ar = slip_pair(beta, r, Vx, delta, model)
    fzf, fzr = _fz(model)
    C_f = tangent_stiffness(af, fzf, mu, model.tire)
    C_r = tangent_stiffness(ar, fzr, mu, model.tire)
    return jacobian_from_stiffness(C_f, C_r, Vx, model), C_f, C_r


def numeric_jacobian(beta, r, Vx, delta, mu, dMz=0.0, model: Model = DEFAULT_MODEL, h=1e-6) -> np.ndarray:
    """Central differences of the 2DOF field (cross-check for the assembly)."""
    cp = model.consts
    b = np.array([beta + h, beta - h, beta, beta])
    rr = np.array([r, r, r + h, r - h])
    bd, rd = kernels.ACTIVE.field_2dof(b, rr, Vx, delta, mu, dMz, cp)
    return np.array([[bd[0] - bd[1], bd[2] - bd[3]], [rd[0] - rd[1], rd[2] - rd[3]]]) / (2 * h)


def critical_speed(C_f: float, C_r: float, model: Model = DEFAULT_MODEL) -> float | None:
    """Speed bound from ``C_f C_r L^2 / (m (C_r l_r - C_f l_f))``; None when the ratio is not positive."""
    v = model.vehicle
    den = v.m * (C_r * v.l_r - C_f * v.l_f)
    if den == 0:
        return None
    val = C_f * C_r * v.L**2 / den
    return math.sqrt(val) if val > 0 else None


def classify(J: np.ndarray, C_f: float, C_r: float):
    """(stability class, case) from the Jacobian and the stiffness signs."""
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian")
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if abs(det) <= DET_TOL:
        cls = StabilityClass.DEGENERATE
    elif det < 0:
        cls = StabilityClass.SADDLE
    elif tr < 0:
        cls = StabilityClass.STABLE_NODE if tr * tr - 4 * det >= 0 else StabilityClass.STABLE_FOCUS
    else:
        cls = StabilityClass.UNSTABLE
    return cls, _CASE_OF[(C_f > 0, C_r > 0)]


def _newton(beta0, r0, Vx, delta, mu, dMz, model: Model):
    """Vectorised damped Newton on the 2DOF field from many starts.

    Conditions broadcast against the starts.  Returns (beta, r, converged
    mask, residual inf-norm).
    """
    v = model.vehicle
    cp = model.consts
    tp = model.tire_consts
    fzf, fzr = _fz(model)
    m, Iz, lf, lr = v.m, v.Iz, v.l_f, v.l_r
    b, r, Vx, delta, mu, dMz = (np.array(a, dtype=float) for a in np.broadcast_arrays(beta0, r0, Vx, delta, mu, dMz))

    def resid(idx, b, r):
        with np.errstate(all="ignore"):
            vx, de = Vx[idx], delta[idx]
            bd, rd = kernels.ACTIVE.field_2dof(b, r, vx, de, mu[idx], dMz[idx], cp)
            af, ar = b + lf * r / vx - de, b - lr * r / vx
            bad = (np.abs(af) >= 1.5) | (np.abs(ar) >= 1.5) | ~np.isfinite(bd) | ~np.isfinite(rd)
        return bd, rd, np.where(bad, np.inf, np.maximum(np.abs(bd), np.abs(rd)))

    allidx = np.arange(b.size)
    bd, rd, nrm = resid(allidx, b, r)
    conv = nrm <= RESID_TOL
    act = allidx[np.isfinite(nrm)]
    for _ in range(MAX_NEWTON):
        if act.size == 0:
            break
        ba, ra, vx = b[act], r[act], Vx[act]
        af, ar = ba + lf * ra / vx - delta[act], ba - lr * ra / vx
        Cf = kernels.ACTIVE.lateral_slope(af, fzf, mu[act], tp)
        Cr = kernels.ACTIVE.lateral_slope(ar, fzr, mu[act], tp)
        j11 = (Cf + Cr) / (m * vx)
        j12 = (Cf * lf - Cr * lr) / (m * vx**2) - 1.0
        j21 = (Cf * lf - Cr * lr) / Iz
        j22 = (Cf * lf**2 + Cr * lr**2) / (Iz * vx)
        det = j11 * j22 - j12 * j21
        ok = np.abs(det) > 1e-300
        sd = np.where(ok, det, 1.0)
        db = -(j22 * bd[act] - j12 * rd[act]) / sd
        dr = -(-j21 * bd[act] + j11 * rd[act]) / sd
        step = np.maximum(np.abs(db), np.abs(dr))
        keep = np.zeros(act.size, dtype=bool)
        # backtracking on the residual norm, only over unresolved entries
        pend = np.flatnonzero(ok)
        lam = 1.0
        for _h in range(MAX_HALVINGS + 1):
            if pend.size == 0:
                break
            gi = act[pend]
            tb = b[gi] + lam * db[pend]
            tr_ = r[gi] + lam * dr[pend]
            tbd, trd, tn = resid(gi, tb, tr_)
            take = (tn < nrm[gi]) | ((tn <= RESID_TOL) & (nrm[gi] <= RESID_TOL))
            ti = gi[take]
            b[ti], r[ti], bd[ti], rd[ti], nrm[ti] = tb[take], tr_[take], tbd[take], trd[take], tn[take]
            step[pend[take]] *= lam
            keep[pend[take]] = True
            pend = pend[~take]
            lam *= 0.5
        conv[act] |= nrm[act] <= RESID_TOL
        done = keep & (step < STEP_TOL)
        act = act[keep & ~done]
    conv |= nrm <= RESID_TOL
    return b, r, conv, nrm


def _make_equilibrium(beta, r, Vx, delta, mu, dMz, model: Model, resid: float) -> Equilibrium:
    J, C_f, C_r = jacobian_2dof(beta, r, Vx, delta, mu, dMz, model)
    cls, case = classify(J, C_f, C_r)
    crit = critical_speed(C_f, C_r, model) if case in (Case.CASE1, Case.CASE2) else None
    return Equilibrium(
        beta=float(beta), r=float(r), delta=float(delta), dMz=float(dMz), Vx=float(Vx), mu=float(mu),
        jacobian=J, eigenvalues=np.linalg.eigvals(J), stability=cls, case=case, C_f=C_f, C_r=C_r,
        residual=float(resid), critical_speed=crit,
    )


def find_equilibria(Vx, mu, delta=0.0, dMz=0.0, model: Model = DEFAULT_MODEL, n_starts: int = N_STARTS) -> list[Equilibrium]:
    """All equilibria inside the search box, sorted by yaw rate.

    Multi-start damped Newton; roots closer than 1e-4 in both coordinates
    are merged.  An empty list is a valid answer (e.g. past coalescence).
    """
    return find_equilibria_batch([(Vx, mu, delta, dMz)], model, n_starts)[0]


def find_equilibria_batch(conditions, model: Model = DEFAULT_MODEL, n_starts: int = N_STARTS, chunk: int = 64):
    """:func:`find_equilibria` for many (Vx, mu, delta, dMz) cells at once."""
    conds = np.asarray(conditions, dtype=float).reshape(-1, 4)
    if np.any(conds[:, 0] <= VX_MIN):
        raise DomainError("Vx below the kinematic floor")
    if np.any((conds[:, 1] <= 0) | (conds[:, 1] > 1.2)):
        raise DomainError("mu must lie in (0, 1.2]")
    bg, rg = np.meshgrid(np.linspace(*BETA_BOX, n_starts), np.linspace(*R_BOX, n_starts), indexing="ij")
    bg, rg = bg.ravel(), rg.ravel()
    ns = bg.size
    out = []
    for c0 in range(0, len(conds), chunk):
        cc = conds[c0:c0 + chunk]
        k = len(cc)
        rep = lambda j: np.repeat(cc[:, j], ns)
        b, r, conv, nrm = _newton(np.tile(bg, k), np.tile(rg, k), rep(0), rep(2), rep(1), rep(3), model)
        inside = (b >= BETA_BOX[0]) & (b <= BETA_BOX[1]) & (r >= R_BOX[0]) & (r <= R_BOX[1])
        keep = (conv & inside & (nrm <= RESID_TOL)).reshape(k, ns)
        b, r, nrm = b.reshape(k, ns), r.reshape(k, ns), nrm.reshape(k, ns)
        for i, (Vx, mu, delta, dMz) in enumerate(cc):
            roots: list[tuple[float, float, float]] = []
            ki = keep[i]
            for bi, ri, ni in sorted(zip(b[i][ki], r[i][ki], nrm[i][ki]), key=lambda t: t[2]):
                if any(abs(bi - bj) < DEDUP_TOL and abs(ri - rj) < DEDUP_TOL for bj, rj, _ in roots):
                    continue
                roots.append((bi, ri, ni))
            roots.sort(key=lambda t: (t[1], t[0]))
            out.append([_make_equilibrium(bi, ri, Vx, delta, mu, dMz, model, ni) for bi, ri, ni in roots])
    return out


# -- handling diagram ------------------------------------------------------

@dataclass
class HandlingDiagram:
    Vx: float
    mu: float
    delta: float
    dMz: float
    branches: dict = field(default_factory=dict)  # Case -> dict(x, ay, alpha_f, alpha_r)
    intersections: list = field(default_factory=list)

    def operating_line(self, x, model: Model = DEFAULT_MODEL):
        """a_y/g on the steering line for slip-angle differences ``x``."""
        v = model.vehicle
        return self.Vx**2 * (self.delta + np.asarray(x)) / (v.g * v.L)


def _invert_branch(force, fz, mu, tp, a_sat, declining: bool, iters: int = 80):
    """Slip angle with lateral force ``force`` on one branch; NaN when unattainable.

    Bisection on |alpha| in [0, a_sat] (rising) or [a_sat, ALPHA_BRANCH_MAX]
    (declining); the sign of alpha is opposite to the force.
    """
    force = np.asarray(force, dtype=float)
    target = np.abs(force)
    if declining:
        lo = np.full_like(target, a_sat)
        hi = np.full_like(target, ALPHA_BRANCH_MAX)
    else:
        lo = np.zeros_like(target)
        hi = np.full_like(target, a_sat)
    g_lo = np.abs(kernels.ACTIVE.lateral_force(lo, fz, mu, tp))
    g_hi = np.abs(kernels.ACTIVE.lateral_force(hi, fz, mu, tp))
    gmin, gmax = np.minimum(g_lo, g_hi), np.maximum(g_lo, g_hi)
    ok = (target >= gmin) & (target <= gmax)
    if declining:
        ok &= target > 0
    inc = not declining
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = np.abs(kernels.ACTIVE.lateral_force(mid, fz, mu, tp))
        up = (g < target) if inc else (g > target)
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    a = 0.5 * (lo + hi)
    return np.where(ok, -np.sign(force) * a, np.nan)


def handling_diagram(Vx, mu, delta=0.0, dMz=0.0, model: Model = DEFAULT_MODEL, n_levels: int = 2001) -> HandlingDiagram:
    """Four case branches of the handling diagram and their crossings with the steering line."""
    if not Vx > VX_MIN:
        raise DomainError("Vx below the kinematic floor")
    v = model.vehicle
    tp = model.tire_consts
    fzf, fzr = _fz(model)
    L = v.L
    a_sat_f = saturation_angle(mu, fzf, model.tire)
    a_sat_r = saturation_angle(mu, fzr, model.tire)
    ymax = 1.0 * mu
    levels = np.linspace(-ymax, ymax, n_levels)

    def branch_fn(case: Case):
        fdecl = case in (Case.CASE2, Case.CASE4)
        rdecl = case in (Case.CASE3, Case.CASE4)

        def fn(y):
            y = np.asarray(y, dtype=float)
            af = _invert_branch(y * fzf - dMz / L, fzf, mu, tp, a_sat_f, fdecl)
            ar = _invert_branch(y * fzr + dMz / L, fzr, mu, tp, a_sat_r, rdecl)
            return af, ar

        return fn

    hd = HandlingDiagram(Vx=Vx, mu=mu, delta=delta, dMz=dMz)
    found: list[tuple[float, float, Case]] = []
    for case in Case:
        fn = branch_fn(case)
        af, ar = fn(levels)
        x = af - ar
        ok = np.isfinite(x)
        hd.branches[case] = {"ay": levels[ok], "x": x[ok], "alpha_f": af[ok], "alpha_r": ar[ok]}

        def gap(y, fn=fn):
            a, b = fn(np.array([y]))
            return float(y - Vx**2 * (delta + (a[0] - b[0])) / (v.g * L))

        G = np.where(ok, levels - Vx**2 * (delta + np.where(ok, x, 0.0)) / (v.g * L), np.nan)
        for i in range(n_levels - 1):
            g0, g1 = G[i], G[i + 1]
            if not (np.isfinite(g0) and np.isfinite(g1)):
                continue
            if g0 == 0.0:
                y = levels[i]
            elif g0 * g1 < 0:
                y = brentq(gap, levels[i], levels[i + 1], xtol=1e-14, rtol=1e-14)
            else:
                continue
            a, b = fn(np.array([y]))
            r = y * v.g / Vx
            beta = b[0] + v.l_r * r / Vx
            if any(abs(beta - bb) < DEDUP_TOL and abs(r - rr) < DEDUP_TOL for bb, rr, _ in found):
                continue
            found.append((beta, r, case))
    for beta, r, case in sorted(found, key=lambda t: t[1]):
        bd, rd = kernels.ACTIVE.field_2dof(beta, r, Vx, delta, mu, dMz, model.consts)
        eq = _make_equilibrium(beta, r, Vx, delta, mu, dMz, model, float(max(abs(bd), abs(rd))))
        hd.intersections.append(eq)
    return hd
