"""Drift-tracking NMPC: reference equilibrium, single-shooting transcription,
receding-horizon step and wheel-torque allocation."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import kernels
from .envelope import EnvelopeTable, InputBox, front_sat_boundary
from .equilibrium import Case, jacobian_2dof
from .nlp import Constraint, NLPProblem, NLPSolution, SQPConfig, Status, solve_sqp
from .params import DEFAULT_MODEL, DomainError, Model, VehicleParams
from .vehicle import rollout

COS_GUARD = math.pi / 2 - 0.01
FD_STEP = 1e-4  # central-difference step on scaled inputs
HESSIAN_MODES = {"gauss-newton": "problem", "gn-bfgs": "problem-bfgs", "bfgs": "bfgs"}


@dataclass
class NMPCConfig:
    Np: int = 15
    Nc: int = 10
    dt: float = 0.02  # control sampling period
    dt_pred: float = 0.05  # RK4 step of the prediction model
    Q: tuple = (2400.0, 4500.0, 300.0, 5000.0, 1600.0)
    R: tuple = (1000.0, 800.0, 600.0)
    box: InputBox = field(default_factory=InputBox)
    w_inner: float = 1e6
    mu_design: float = 0.55
    use_envelope: bool = True
    input_cost: str = "deviation"  # "deviation": ||u - u_nom||_R, "absolute": ||u||_R
    max_iter: int = 100
    kkt_tol: float = 1e-6
    hessian: str = "gn-bfgs"  # "gauss-newton", "gn-bfgs" (BFGS seeded by Gauss-Newton) or "bfgs"

    def __post_init__(self):
        if not (self.Np > self.Nc > 0):
            raise ValueError("need Np > Nc > 0")
        if not (self.dt > 0 and self.dt_pred > 0):
            raise ValueError("dt and dt_pred must be positive")
        if len(self.Q) != 5 or len(self.R) != 3:
            raise ValueError("Q needs 5 weights and R needs 3")
        if min(self.Q) < 0 or min(self.R) < 0 or self.w_inner < 0:
            raise ValueError("weights must be non-negative")
        if self.input_cost not in ("absolute", "deviation"):
            raise ValueError("input_cost must be 'absolute' or 'deviation'")
        if self.hessian not in HESSIAN_MODES:
            raise ValueError(f"hessian must be one of {sorted(HESSIAN_MODES)}")

    def fxr_limit(self, model: Model = DEFAULT_MODEL) -> float:
        return self.mu_design * model.loads[1]

    def input_bounds(self, model: Model = DEFAULT_MODEL):
        f = self.fxr_limit(model)
        lo = np.array([self.box.delta_min, -f, self.box.dmz_min])
        hi = np.array([self.box.delta_max, f, self.box.dmz_max])
        return lo, hi

    def input_scale(self, model: Model = DEFAULT_MODEL) -> np.ndarray:
        lo, hi = self.input_bounds(model)
        return np.maximum(np.abs(lo), np.abs(hi))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box"] = self.box.to_dict()
        d["Q"], d["R"] = list(self.Q), list(self.R)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NMPCConfig":
        d = dict(d)
        if "box" in d:
            d["box"] = InputBox.from_dict(d["box"])
        for k in ("Q", "R"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


@dataclass
class DriftReference:
    x_ref: np.ndarray  # [e, dpsi, Vx, beta, r]
    kappa: float
    u_nom: np.ndarray  # [delta, Fxr, dMz] holding the equilibrium
    radius: float
    speed: float
    mu: float

    def to_dict(self) -> dict:
        return {"x_ref": self.x_ref.tolist(), "kappa": self.kappa, "u_nom": self.u_nom.tolist(),
                "radius": self.radius, "speed": self.speed, "mu": self.mu}


@dataclass
class ControlCommand:
    delta: float
    Fxr: float
    dMz: float
    T_fl: float
    T_fr: float
    T_rl: float
    T_rr: float
    status: str
    iterations: int = 0
    kkt: tuple = (0.0, 0.0, 0.0)

    @property
    def u(self) -> np.ndarray:
        return np.array([self.delta, self.Fxr, self.dMz])


# -- reference ---------------------------------------------------------------

def compute_reference(radius: float, speed: float, mu: float, model: Model = DEFAULT_MODEL,
                      dmz0: float = 0.0, tol: float = 1e-10) -> DriftReference:
    """Steady drift on a circle: r = V/R, Vx = V cos(beta), heading error -beta.

    Unknowns (beta, delta, Fxr) with the yaw moment fixed at ``dmz0``; the
    root must sit on the drift branch (front rising, rear past its peak) with
    sideslip opposite to the yaw rate.
    """
    if not (radius > 0 and speed > 0 and mu > 0):
        raise ValueError("radius, speed and mu must be positive")
    r = speed / radius
    cp = model.consts

    def resid(z):
        beta, delta, fxr = z
        x = np.array([0.0, -beta, speed * math.cos(beta), beta, r])
        f = kernels.ACTIVE.field_full(x, np.array([delta, fxr, dmz0]), mu, 1.0 / radius, cp)
        scale = np.array([1.0, 1.0, 1.0])
        return f[2:] * scale

    found = []
    for b0 in np.linspace(-0.05, -0.5, 10):
        for d0 in (0.0, 0.1, -0.1, 0.2):
            sol = least_squares(resid, [b0, d0, 0.1 * model.loads[1] * mu], x_scale=[0.1, 0.1, 1000.0],
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=500)
            beta, delta, fxr = sol.x
            if np.max(np.abs(resid(sol.x))) > tol or not abs(beta) < 0.6 or not abs(delta) < 0.6:
                continue
            vx = speed * math.cos(beta)
            _, c_f, c_r = jacobian_2dof(beta, r, vx, delta, mu, dmz0, model)
            case = Case.CASE3 if (c_f < 0 and c_r > 0) else None
            if case is None or beta * r >= 0:
                continue
            if not any(abs(beta - f[0]) < 1e-6 for f in found):
                found.append((beta, delta, fxr))
    if not found:
        raise DomainError("no drift-branch steady state for this radius, speed and friction")
    beta, delta, fxr = min(found, key=lambda t: abs(t[1]))
    x_ref = np.array([0.0, -beta, speed * math.cos(beta), beta, r])
    return DriftReference(x_ref, 1.0 / radius, np.array([delta, fxr, dmz0]), float(radius), float(speed), float(mu))


# -- torque allocation ---------------------------------------------------------

def torque_allocation(u, params: VehicleParams = DEFAULT_MODEL.vehicle):
    """(T_fl, T_fr, T_rl, T_rr) from (delta, Fxr, dMz)."""
    delta, fxr, dmz = (float(v) for v in u)
    if not abs(delta) < COS_GUARD:
        raise DomainError("steer angle too close to +-pi/2 for the front yaw-moment pair")
    t_rear = fxr * params.Re / 2.0
    t_fl = dmz * params.Re / (params.d * math.cos(delta))
    return t_fl, -t_fl, t_rear, t_rear


# -- transcription -------------------------------------------------------------

class Transcription:
    """Single-shooting NLP over scaled inputs u_0..u_{Nc-1} and inner slacks s_1..s_Np."""

    def __init__(self, x_now, ref: DriftReference, config: NMPCConfig, table: EnvelopeTable | None,
                 model: Model = DEFAULT_MODEL, mu_pred: float | None = None):
        self.x0 = np.asarray(x_now, dtype=float).copy()
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("current state must be finite")
        self.ref = ref
        self.cfg = config
        self.model = model
        self.mu = config.mu_design if mu_pred is None else mu_pred
        self.table = table if config.use_envelope else None
        self.scale = config.input_scale(model)
        self.nu = 3 * config.Nc
        self.ns = config.Np if self.table is not None else 0
        self.n = self.nu + self.ns
        self.sqQ = np.sqrt(np.asarray(config.Q, dtype=float))
        self.sqR = np.sqrt(np.asarray(config.R, dtype=float))
        self.u_off = ref.u_nom / self.scale if config.input_cost == "deviation" else np.zeros(3)
        self._cache_key = None
        self._fallback = None
        if self.table is not None:
            try:
                self.table.query(self.x0[2], self.mu, 0.0, 0.0)
            except DomainError:
                warnings.warn("envelope void at this speed; using the front-saturation strip only", RuntimeWarning,
                              stacklevel=2)
                self._fallback = (front_sat_boundary(self.x0[2], self.mu, self.table.box, model, 1),
                                  front_sat_boundary(self.x0[2], self.mu, self.table.box, model, -1))

    # variable layout
    def bounds(self):
        lo, hi = self.cfg.input_bounds(self.model)
        lo = np.concatenate([np.tile(lo / self.scale, self.cfg.Nc), np.zeros(self.ns)])
        hi = np.concatenate([np.tile(hi / self.scale, self.cfg.Nc), np.full(self.ns, np.inf)])
        return lo, hi

    def inputs(self, z) -> np.ndarray:
        """Physical input sequence (Np, 3); the last move is held past Nc."""
        z = np.asarray(z, dtype=float)
        U = z[..., : self.nu].reshape(z.shape[:-1] + (self.cfg.Nc, 3)) * self.scale
        tail = np.repeat(U[..., -1:, :], self.cfg.Np - self.cfg.Nc, axis=-2)
        return np.concatenate([U, tail], axis=-2)

    def _distances(self, X):
        """(d_inner, d_outer) for predicted states X (..., 5)."""
        beta, r = X[..., 3], X[..., 4]
        if self._fallback is not None:
            fl, fr = self._fallback
            # signed horizontal distance into the strip, normalised to the line direction
            dl = (beta - (fl.slope * r + fl.intercept)) / math.hypot(1.0, fl.slope)
            dr = ((fr.slope * r + fr.intercept) - beta) / math.hypot(1.0, fr.slope)
            return np.full(beta.shape, np.inf), np.minimum(dl, dr)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            di, do, _ = self.table.query(self.x0[2], self.mu, beta, r)
        return di, do

    def simulate(self, Z):
        """Batched predictions for decision vectors Z (B, n)."""
        Z = np.atleast_2d(Z)
        U = self.inputs(Z)
        X = rollout(np.repeat(self.x0[None], Z.shape[0], axis=0), U, self.cfg.dt_pred, self.mu, self.ref.kappa, self.model)
        X = X[:, 1:]
        if self.table is not None:
            di, do = self._distances(X)
        else:
            di = do = np.zeros(X.shape[:2])
        return X, U, di, do

    def _residual_parts(self, X, Z):
        ex = (X - self.ref.x_ref) * self.sqQ  # (B, Np, 5)
        un = self.inputs(Z)[..., : self.cfg.Nc, :] / self.scale - self.u_off
        eu = un * self.sqR
        return ex, eu

    def values(self, z):
        X, U, di, do = self.simulate(z)
        ex, eu = self._residual_parts(X, np.atleast_2d(z))
        s = np.asarray(z)[self.nu:]
        f = float(np.sum(ex**2) + np.sum(eu**2) + self.cfg.w_inner * np.sum(s**2))
        ci, _ = self._ineq_from(di[0], do[0], s)
        return f, ci, np.zeros(0)

    def _ineq_from(self, di, do, s):
        if self.table is None:
            return np.zeros(0), None
        return np.concatenate([-do, -di - s]), None

    def linearize(self, z):
        """Values plus central-difference sensitivities with respect to the inputs."""
        z = np.asarray(z, dtype=float)
        key = z.tobytes()
        if key == self._cache_key:
            return self._cache
        nu = self.nu
        Z = np.repeat(z[None], 1 + 2 * nu, axis=0)
        idx = np.arange(nu)
        Z[1 + idx, idx] += FD_STEP
        Z[1 + nu + idx, idx] -= FD_STEP
        X, U, di, do = self.simulate(Z)
        ex, eu = self._residual_parts(X, Z)
        rho = np.concatenate([ex.reshape(len(Z), -1), eu.reshape(len(Z), -1)], axis=1)
        inv2h = 1.0 / (2 * FD_STEP)
        J_rho = ((rho[1 : 1 + nu] - rho[1 + nu :]) * inv2h).T  # (n_rho, nu)
        J_di = ((di[1 : 1 + nu] - di[1 + nu :]) * inv2h).T  # (Np, nu)
        J_do = ((do[1 : 1 + nu] - do[1 + nu :]) * inv2h).T
        self._cache_key = key
        self._cache = (X[0], rho[0], J_rho, di[0], do[0], J_di, J_do)
        return self._cache

    def objective(self, z):
        _, rho, J_rho, *_ = self.linearize(z)
        s = z[self.nu:]
        f = float(rho @ rho + self.cfg.w_inner * s @ s)
        g = np.concatenate([2.0 * J_rho.T @ rho, 2.0 * self.cfg.w_inner * s])
        return f, g

    def gauss_newton(self, z):
        _, _, J_rho, *_ = self.linearize(z)
        H = np.zeros((self.n, self.n))
        H[: self.nu, : self.nu] = 2.0 * J_rho.T @ J_rho
        H[self.nu :, self.nu :] = 2.0 * self.cfg.w_inner * np.eye(self.ns)
        return H

    def constraints(self, z):
        _, _, _, di, do, J_di, J_do = self.linearize(z)
        s = z[self.nu:]
        Np = self.cfg.Np
        c = np.concatenate([-do, -di - s])
        J = np.zeros((2 * Np, self.n))
        J[:Np, : self.nu] = -J_do
        J[Np:, : self.nu] = -J_di
        J[Np:, self.nu :] = -np.eye(Np)
        return c, J

    def problem(self) -> NLPProblem:
        lo, hi = self.bounds()
        cons = [Constraint(self.constraints, "ineq")] if self.table is not None else []
        return NLPProblem(self.n, self.objective, cons, lo, hi,
                          hessian=self.gauss_newton if self.cfg.hessian != "bfgs" else None,
                          values=self.values)

    def initial_guess(self, U_prev=None) -> np.ndarray:
        """Decision vector from a physical (Nc, 3) input plan; slacks set just feasible."""
        if U_prev is None:
            U_prev = np.repeat(self.ref.u_nom[None], self.cfg.Nc, axis=0)
        lo, hi = self.cfg.input_bounds(self.model)
        U = np.clip(np.asarray(U_prev, dtype=float), lo, hi) / self.scale
        z = np.concatenate([U.ravel(), np.zeros(self.ns)])
        if self.ns:
            _, _, di, _ = self.simulate(z)
            z[self.nu :] = np.maximum(0.0, -di[0])
        return z


def build_ocp(x_now, ref: DriftReference, config: NMPCConfig, table: EnvelopeTable | None,
              model: Model = DEFAULT_MODEL) -> tuple[NLPProblem, Transcription]:
    tr = Transcription(x_now, ref, config, table, model)
    return tr.problem(), tr


# -- controller ----------------------------------------------------------------

@dataclass
class StepResult:
    command: ControlCommand
    plan: np.ndarray  # (Nc, 3) physical inputs
    solution: NLPSolution | None
    predicted: np.ndarray  # (Np, 5)
    d_inner: np.ndarray
    d_outer: np.ndarray


def shift_plan(plan: np.ndarray, dt: float = 1.0, dt_pred: float = 1.0) -> np.ndarray:
    """Advance a piecewise-constant plan by one sample of length ``dt``.

    Move k of the shifted plan is the old move active at ``k*dt_pred + dt``;
    with ``dt == dt_pred`` this drops the applied move and repeats the last.
    """
    n = len(plan)
    idx = np.minimum(n - 1, np.floor((np.arange(n) * dt_pred + dt) / dt_pred + 1e-9).astype(int))
    return plan[idx]


def solve_step(x_now, ref: DriftReference, config: NMPCConfig, table: EnvelopeTable | None,
               warm_start: np.ndarray | None = None, previous: ControlCommand | None = None,
               model: Model = DEFAULT_MODEL, trace: list | None = None) -> StepResult:
    """One receding-horizon solve; ``warm_start`` is a physical (Nc, 3) plan."""
    problem, tr = build_ocp(x_now, ref, config, table, model)
    z0 = tr.initial_guess(warm_start)
    sqp = SQPConfig(max_iter=config.max_iter, kkt_tol=config.kkt_tol, feas_tol=config.kkt_tol,
                    hessian=HESSIAN_MODES[config.hessian], trace=trace)
    sol = solve_sqp(problem, z0, sqp)
    plan = tr.inputs(sol.x)[: config.Nc]
    status = sol.status.value
    if sol.status != Status.CONVERGED:
        status = "Degraded" + sol.status.value
    infeasible = sol.violation > 1e-4
    if infeasible and previous is not None:
        u = previous.u
        status = "HeldInfeasible"
        plan = np.repeat(u[None], config.Nc, axis=0)
    else:
        u = plan[0]
    lo, hi = config.input_bounds(model)
    u = np.clip(u, lo, hi)
    t = torque_allocation(u, model.vehicle)
    cmd = ControlCommand(float(u[0]), float(u[1]), float(u[2]), *t, status=status, iterations=sol.iterations,
                         kkt=sol.kkt)
    X, _, di, do = tr.simulate(sol.x)
    return StepResult(cmd, plan, sol, X[0], di[0], do[0])


class NMPCController:
    """Receding-horizon wrapper holding the shifted warm start between samples."""

    def __init__(self, ref: DriftReference, config: NMPCConfig, table: EnvelopeTable | None,
                 model: Model = DEFAULT_MODEL):
        self.ref = ref
        self.config = config
        self.table = table
        self.model = model
        self.plan = None
        self.last = None

    def step(self, x_now, trace: list | None = None) -> StepResult:
        warm = shift_plan(self.plan, self.config.dt, self.config.dt_pred) if self.plan is not None else None
        res = solve_step(x_now, self.ref, self.config, self.table, warm, self.last, self.model, trace)
        self.plan = res.plan
        self.last = res.command
        return res
