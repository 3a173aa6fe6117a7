"""Small dense SQP solver with a dual active-set QP subproblem.

Problems have the form::

    min f(x)  s.t.  c(x) <= 0,  h(x) = 0,  lo <= x <= hi

Constraint callbacks return ``(values, jacobian)`` blocks.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

FEAS_TOL = 1e-9  # QP constraint activity tolerance
INF = math.inf


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    LINE_SEARCH_FAIL = "LineSearchFail"


# -- QP ----------------------------------------------------------------------

@dataclass
class QPResult:
    x: np.ndarray
    lam_ineq: np.ndarray  # >= 0, for A_ineq x <= b_ineq
    lam_eq: np.ndarray  # free, for A_eq x = b_eq (sign: + lam^T (A x - b) in the Lagrangian)
    lam_lo: np.ndarray  # >= 0 for x >= lo
    lam_hi: np.ndarray  # >= 0 for x <= hi
    status: str  # "optimal" | "infeasible" | "fallback"
    iterations: int


def regularized_cholesky(H, lam0=1e-8):
    """Cholesky of H + lam I, doubling lam from ``lam0`` until it succeeds."""
    H = 0.5 * (H + H.T)
    try:
        return cho_factor(H, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    lam = lam0
    n = H.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    while lam < 1e20:
        try:
            return cho_factor(H + lam * scale * np.eye(n), lower=True), lam * scale
        except np.linalg.LinAlgError:
            lam *= 2.0
    raise np.linalg.LinAlgError("could not regularise Hessian")


def qp_solve(H, g, A_ineq=None, b_ineq=None, bounds=None, A_eq=None, b_eq=None, max_iter: int | None = None) -> QPResult:
    """Minimise ``0.5 d'Hd + g'd`` under linear constraints.

    Dual active-set method: start from the (equality-constrained)
    unconstrained minimiser and add the most violated constraint until
    primal feasible, dropping constraints whose multipliers would turn
    negative.  Ties are broken by lowest index (Bland).  ``bounds`` is a
    pair of arrays (lo, hi) that may contain infinities.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    fac, _ = regularized_cholesky(H)
    Hinv = lambda v: cho_solve(fac, v)
    # stack all inequalities as  N^T x >= b  (rows of N)
    rows, rhs, kinds = [], [], []  # kinds: (type, original index)
    if A_ineq is not None and len(A_ineq):
        A = np.atleast_2d(np.asarray(A_ineq, dtype=float))
        b = np.asarray(b_ineq, dtype=float).ravel()
        for i in range(A.shape[0]):
            rows.append(-A[i])
            rhs.append(-b[i])
            kinds.append(("ineq", i))
    lo = hi = None
    if bounds is not None:
        lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n,))
        for i in range(n):
            if np.isfinite(lo[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(lo[i])
                kinds.append(("lo", i))
            if np.isfinite(hi[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-hi[i])
                kinds.append(("hi", i))
    Nall = np.array(rows).reshape(-1, n)
    ball = np.array(rhs, dtype=float)
    m = len(ball)
    Aeq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    beq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    me = Aeq.shape[0]
    if max_iter is None:
        max_iter = 10 * (m + me + n) + 50

    active: list[int] = []  # indices into Nall
    x = -Hinv(g)
    u = np.zeros(0)  # multipliers of active inequalities (N^T x >= b form)
    ueq = np.zeros(me)
    if me:
        # equality-constrained start
        HiA = Hinv(Aeq.T)
        S = Aeq @ HiA
        ueq = np.linalg.solve(S, Aeq @ x - beq)
        x = x - HiA @ ueq  # x = -H^{-1}(g + Aeq^T ueq)

    def normals():
        return np.vstack([Aeq, Nall[active]]) if (me or active) else np.zeros((0, n))

    it = 0
    status = "optimal"
    bland = False
    while True:
        s = Nall @ x - ball if m else np.zeros(0)
        viol = np.flatnonzero(s < -FEAS_TOL * (1.0 + np.abs(ball)))
        viol = np.setdiff1d(viol, active)
        if viol.size == 0:
            break
        if it >= max_iter:
            status = "fallback"
            break
        if it > 5 * (m + n):
            bland = True
        p = int(viol[0]) if bland else int(viol[np.argmin(s[viol])])  # argmin picks lowest index on ties
        np_ = Nall[p]
        up = 0.0
        while True:
            it += 1
            Nact = normals()
            Hn = Hinv(np_)
            if Nact.shape[0]:
                HN = Hinv(Nact.T)
                M = Nact @ HN
                rvec = np.linalg.lstsq(M, Nact @ Hn, rcond=None)[0]
                z = Hn - HN @ rvec
            else:
                rvec = np.zeros(0)
                z = Hn
            r_ineq = rvec[me:]
            # dual step limit over active inequalities
            t1, k = INF, -1
            for jj, idx in enumerate(active):
                if r_ineq[jj] > 1e-14:
                    tj = u[jj] / r_ineq[jj]
                    if tj < t1 - 1e-15 or (abs(tj - t1) <= 1e-15 and idx < active[k]):
                        t1, k = tj, jj
            zn = float(z @ np_)
            t2 = INF if abs(zn) <= 1e-11 * float(np_ @ Hn) else -(float(np_ @ x) - ball[p]) / zn
            t = min(t1, t2)
            if not math.isfinite(t):
                status = "infeasible"
                break
            x = x + t * z
            ueq = ueq + t * rvec[:me]
            u = u - t * r_ineq
            up += t
            if t == t2:
                active.append(p)
                u = np.append(u, up)
                break
            # drop the blocking constraint and retry the same p
            active.pop(k)
            u = np.delete(u, k)
            if it >= max_iter:
                status = "fallback"
                break
        if status != "optimal":
            break

    if status == "fallback" and lo is not None:
        x = np.clip(x, lo, hi)
    lam_ineq = np.zeros(0 if A_ineq is None else np.atleast_2d(A_ineq).shape[0] if len(A_ineq) else 0)
    lam_lo = np.zeros(n)
    lam_hi = np.zeros(n)
    for jj, idx in enumerate(active):
        kind, i = kinds[idx]
        if kind == "ineq":
            lam_ineq[i] = u[jj]
        elif kind == "lo":
            lam_lo[i] = u[jj]
        else:
            lam_hi[i] = u[jj]
    return QPResult(x, lam_ineq, ueq, lam_lo, lam_hi, status, it)


# -- NLP -----------------------------------------------------------------------

@dataclass
class Constraint:
    """Vector constraint block; ``fun(x) -> (values, jacobian)``."""

    fun: Callable
    kind: str = "ineq"  # "ineq" means values <= 0, "eq" means values == 0


@dataclass
class NLPProblem:
    n_vars: int
    objective: Callable  # x -> (value, gradient)
    constraints: list = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    hessian: Callable | None = None  # optional x -> approximate Hessian of the Lagrangian
    values: Callable | None = None  # optional cheap x -> (f, c_ineq, c_eq) used by the line search

    def bounds(self):
        lo = np.full(self.n_vars, -INF) if self.lo is None else np.asarray(self.lo, dtype=float)
        hi = np.full(self.n_vars, INF) if self.hi is None else np.asarray(self.hi, dtype=float)
        return lo, hi

    def eval_constraints(self, x):
        ci, Ji, ce, Je = [], [], [], []
        for c in self.constraints:
            v, J = c.fun(x)
            v = np.atleast_1d(np.asarray(v, dtype=float))
            J = np.asarray(J, dtype=float).reshape(v.size, self.n_vars)
            (ci if c.kind == "ineq" else ce).append(v)
            (Ji if c.kind == "ineq" else Je).append(J)
        cat = lambda vs: np.concatenate(vs) if vs else np.zeros(0)
        catJ = lambda Js: np.vstack(Js) if Js else np.zeros((0, self.n_vars))
        return cat(ci), catJ(Ji), cat(ce), catJ(Je)


@dataclass
class SQPConfig:
    max_iter: int = 100
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-6
    hessian: str = "bfgs"  # "bfgs", "problem" (NLPProblem.hessian every iteration) or "problem-bfgs" (seed BFGS with it)
    elastic_penalty: float = 1e4
    armijo: float = 1e-4
    max_backtracks: int = 30
    trace: list | None = None  # rows appended per iteration when given


@dataclass
class NLPSolution:
    x: np.ndarray
    f: float
    violation: float
    iterations: int
    status: Status
    lam_ineq: np.ndarray
    lam_eq: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    kkt: tuple = (INF, INF, INF)  # stationarity, feasibility, complementarity
    elastic: bool = False
    merit_history: list = field(default_factory=list)


class NonFiniteError(FloatingPointError):
    pass


def _eval(problem: NLPProblem, x):
    f, g = problem.objective(x)
    g = np.asarray(g, dtype=float)
    ci, Ji, ce, Je = problem.eval_constraints(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(ci)) and np.all(np.isfinite(ce))
            and np.all(np.isfinite(Ji)) and np.all(np.isfinite(Je))):
        raise NonFiniteError("non-finite value from a problem callback")
    return float(f), g, ci, Ji, ce, Je


def _eval_values(problem: NLPProblem, x):
    if problem.values is None:
        f, _, ci, _, ce, _ = _eval(problem, x)
        return f, ci, ce
    f, ci, ce = problem.values(x)
    ci = np.atleast_1d(np.asarray(ci, dtype=float))
    ce = np.atleast_1d(np.asarray(ce, dtype=float))
    if not (np.isfinite(f) and np.all(np.isfinite(ci)) and np.all(np.isfinite(ce))):
        raise NonFiniteError("non-finite value from a problem callback")
    return float(f), ci, ce


def kkt_residuals(problem: NLPProblem, x, lam_ineq, lam_eq, lam_lo, lam_hi, ev=None):
    """(stationarity, primal feasibility, complementarity) infinity norms."""
    f, g, ci, Ji, ce, Je = ev if ev is not None else _eval(problem, x)
    lo, hi = problem.bounds()
    grad_l = g + Ji.T @ lam_ineq + Je.T @ lam_eq - lam_lo + lam_hi
    feas = max([0.0] + list(np.maximum(ci, 0.0)) + list(np.abs(ce)) + list(np.maximum(lo - x, 0.0)) + list(np.maximum(x - hi, 0.0)))
    comp = 0.0
    if ci.size:
        comp = max(comp, float(np.max(np.abs(lam_ineq * ci))))
    fl = np.isfinite(lo)
    fh = np.isfinite(hi)
    if fl.any():
        comp = max(comp, float(np.max(np.abs(lam_lo[fl] * (x[fl] - lo[fl])))))
    if fh.any():
        comp = max(comp, float(np.max(np.abs(lam_hi[fh] * (hi[fh] - x[fh])))))
    neg = min([0.0] + list(lam_ineq) + list(lam_lo) + list(lam_hi))
    return float(np.max(np.abs(grad_l))) if grad_l.size else 0.0, float(feas), float(max(comp, -neg))


def _violation(ci, ce, x, lo, hi):
    return float(np.sum(np.maximum(ci, 0.0)) + np.sum(np.abs(ce)))


def solve_sqp(problem: NLPProblem, x0, config: SQPConfig | None = None) -> NLPSolution:
    """Line-search SQP with damped BFGS (or a problem-supplied Hessian) and an L1 merit."""
    cfg = config or SQPConfig()
    n = problem.n_vars
    lo, hi = problem.bounds()
    x = np.clip(np.asarray(x0, dtype=float).copy(), lo, hi)
    ev = _eval(problem, x)
    f, g, ci, Ji, ce, Je = ev
    B = np.eye(n)
    if cfg.hessian == "problem-bfgs" and problem.hessian is not None:
        B = np.asarray(problem.hessian(x), dtype=float)
        B = 0.5 * (B + B.T)
        _, shift = regularized_cholesky(B)
        B = B + shift * np.eye(n)
    nu = 1.0
    lam_i = np.zeros(ci.size)
    lam_e = np.zeros(ce.size)
    lam_lo = np.zeros(n)
    lam_hi = np.zeros(n)
    status = Status.MAX_ITER
    elastic_any = False
    merits = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.hessian == "problem" and problem.hessian is not None:
            Hk = np.asarray(problem.hessian(x), dtype=float)
        else:
            Hk = B
        qp = qp_solve(Hk, g, Ji if ci.size else None, -ci if ci.size else None, (lo - x, hi - x),
                      Je if ce.size else None, -ce if ce.size else None)
        elastic = False
        if qp.status == "infeasible" and ci.size:
            elastic = elastic_any = True
            d, li, le, llo, lhi = _elastic_qp(Hk, g, ci, Ji, ce, Je, lo - x, hi - x, cfg.elastic_penalty)
        else:
            d, li, le, llo, lhi = qp.x, qp.lam_ineq, qp.lam_eq, qp.lam_lo, qp.lam_hi
        # KKT test at the current point with the fresh multipliers
        st, fe, co = kkt_residuals(problem, x, li, le, llo, lhi, ev)
        if cfg.trace is not None:
            cfg.trace.append({"iter": it, "f": f, "stationarity": st, "feasibility": fe, "complementarity": co,
                              "step": float(np.max(np.abs(d))) if d.size else 0.0, "elastic": elastic})
        if st <= cfg.kkt_tol and fe <= cfg.feas_tol and co <= cfg.kkt_tol and not elastic:
            lam_i, lam_e, lam_lo, lam_hi = li, le, llo, lhi
            status = Status.CONVERGED
            break
        # merit penalty
        lam_max = max([0.0] + [float(np.max(np.abs(a))) for a in (li, le) if a.size])
        if nu < 1.1 * lam_max:
            nu = 1.5 * lam_max + 1e-8
        viol = _violation(ci, ce, x, lo, hi)
        phi = f + nu * viol
        dphi = float(g @ d) - nu * viol
        if dphi >= 0:
            dphi = -abs(float(d @ Hk @ d)) - 1e-16
        merits.append(phi)
        alpha = 1.0
        accepted = False
        # when the predicted decrease is below round-off of the merit, Armijo cannot
        # discriminate; take the full step if it does not raise the merit measurably
        tiny = abs(dphi) <= 10.0 * np.finfo(float).eps * max(1.0, abs(phi))
        for _ in range(cfg.max_backtracks):
            xn = np.clip(x + alpha * d, lo, hi)
            try:
                fv, civ, cev = _eval_values(problem, xn)
            except NonFiniteError:
                alpha *= 0.5
                continue
            phin = fv + nu * _violation(civ, cev, xn, lo, hi)
            if phin <= phi + cfg.armijo * alpha * dphi or (tiny and phin <= phi + 10.0 * np.finfo(float).eps * max(1.0, abs(phi))):
                try:
                    evn = _eval(problem, xn)
                except NonFiniteError:
                    alpha *= 0.5
                    continue
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            lam_i, lam_e, lam_lo, lam_hi = li, le, llo, lhi
            status = Status.LINE_SEARCH_FAIL
            break
        fn, gn, cin, Jin, cen, Jen = evn
        # damped BFGS on the Lagrangian gradient (Powell)
        s = xn - x
        gl_old = g + Ji.T @ li + (Je.T @ le if ce.size else 0.0)
        gl_new = gn + Jin.T @ li + (Jen.T @ le if cen.size else 0.0)
        y = gl_new - gl_old
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs > 1e-300:
            sy = float(s @ y)
            if sy < 0.2 * sBs:
                th = 0.8 * sBs / (sBs - sy)
                y = th * y + (1 - th) * Bs
                sy = float(s @ y)
            if sy > 1e-12 * sBs:
                B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
            else:
                B = np.eye(n) * max(1e-8, sy / max(float(s @ s), 1e-300))
        x, ev = xn, evn
        f, g, ci, Ji, ce, Je = ev
        lam_i, lam_e, lam_lo, lam_hi = li, le, llo, lhi
    st, fe, co = kkt_residuals(problem, x, lam_i, lam_e, lam_lo, lam_hi, ev)
    ci, ce = ev[2], ev[4]
    viol = max([0.0] + list(np.maximum(ci, 0.0)) + list(np.abs(ce)))
    return NLPSolution(x=x, f=f, violation=float(viol), iterations=it, status=status, lam_ineq=lam_i, lam_eq=lam_e,
                       lam_lo=lam_lo, lam_hi=lam_hi, kkt=(st, fe, co), elastic=elastic_any, merit_history=merits)


def _elastic_qp(H, g, ci, Ji, ce, Je, dlo, dhi, penalty):
    """QP with one slack per inequality, penalised linearly (plus a tiny quadratic)."""
    n = g.size
    m = ci.size
    Hs = np.zeros((n + m, n + m))
    Hs[:n, :n] = H
    Hs[n:, n:] = np.eye(m) * 1e-6 * penalty
    gs = np.concatenate([g, np.full(m, penalty)])
    A = np.hstack([Ji, -np.eye(m)])
    lo = np.concatenate([dlo, np.zeros(m)])
    hi = np.concatenate([dhi, np.full(m, INF)])
    Aeq = np.hstack([Je, np.zeros((Je.shape[0], m))]) if ce.size else None
    res = qp_solve(Hs, gs, A, -ci, (lo, hi), Aeq, -ce if ce.size else None)
    return res.x[:n], res.lam_ineq, res.lam_eq, res.lam_lo[:n], res.lam_hi[:n]


# -- derivative checking ---------------------------------------------------

@dataclass
class DerivativeReport:
    max_rel_error: float
    objective_rel_error: np.ndarray
    constraint_rel_error: list
    flagged: list  # (block, row, col, rel error)


def check_derivatives(problem: NLPProblem, x, h: float = 1e-6, tol: float = 1e-4, floor: float = 1e-6) -> DerivativeReport:
    """Central differences against the supplied gradient and Jacobians.

    Relative error per entry is ``|fd - an| / max(|fd|, |an|, floor)``.
    """
    x = np.asarray(x, dtype=float)
    n = problem.n_vars
    _, g = problem.objective(x)
    g = np.asarray(g, dtype=float)
    blocks = [c.fun(x) for c in problem.constraints]
    fd_g = np.zeros(n)
    fd_J = [np.zeros((np.atleast_1d(v).size, n)) for v, _ in blocks]
    for j in range(n):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        fd_g[j] = (problem.objective(xp)[0] - problem.objective(xm)[0]) / (2 * step)
        for k, c in enumerate(problem.constraints):
            fd_J[k][:, j] = (np.atleast_1d(c.fun(xp)[0]) - np.atleast_1d(c.fun(xm)[0])) / (2 * step)

    def rel(fd, an):
        return np.abs(fd - an) / np.maximum(np.maximum(np.abs(fd), np.abs(an)), floor)

    eg = rel(fd_g, g)
    ec = [rel(fd_J[k], np.asarray(blocks[k][1], dtype=float).reshape(fd_J[k].shape)) for k in range(len(blocks))]
    flagged = [("objective", 0, int(j), float(eg[j])) for j in np.flatnonzero(eg > tol)]
    for k, e in enumerate(ec):
        for i, j in zip(*np.nonzero(e > tol)):
            flagged.append((f"constraint{k}", int(i), int(j), float(e[i, j])))
    mx = max([float(np.max(eg)) if eg.size else 0.0] + [float(np.max(e)) if e.size else 0.0 for e in ec])
    return DerivativeReport(mx, eg, ec, flagged)


def write_trace(rows, path):
    """Dump SQP iteration rows to CSV."""
    if not rows:
        return
    keys = list(rows[0].keys())
    if "control_step" in keys:
        keys = ["control_step"] + [k for k in keys if k != "control_step"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
