"""Single-track body model, Frenet path kinematics and RK4 stepping.

State ordering used throughout: ``x = [e, dpsi, Vx, beta, r]``; inputs
``u = [delta, Fxr, dMz]``.  Lateral velocity is closed as ``Vy = Vx tan(beta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .params import DEFAULT_MODEL, VX_MIN, DomainError, Model, VehicleParams

STATE_NAMES = ("e", "dpsi", "vx", "beta", "r")
INPUT_NAMES = ("delta", "fxr", "dmz")


@dataclass(frozen=True)
class ChassisState:
    Vx: float
    beta: float
    r: float

    def __post_init__(self):
        if not self.Vx > 0:
            raise DomainError("Vx must be positive")
        if not abs(self.beta) < math.pi / 2:
            raise DomainError("|beta| must be below pi/2")


@dataclass(frozen=True)
class PathState:
    e: float
    dpsi: float
    s: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if not abs(self.kappa * self.e) < 1:
            raise DomainError("Frenet singularity: |kappa e| >= 1")


@dataclass(frozen=True)
class ControlInput:
    delta: float = 0.0
    Fxr: float = 0.0
    dMz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.delta, self.Fxr, self.dMz)):
            raise ValueError("control input must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.Fxr, self.dMz])


@dataclass(frozen=True)
class FullState:
    e: float
    dpsi: float
    Vx: float
    beta: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e, self.dpsi, self.Vx, self.beta, self.r])

    @classmethod
    def from_array(cls, x) -> "FullState":
        return cls(*(float(v) for v in x))

    @property
    def chassis(self) -> ChassisState:
        return ChassisState(self.Vx, self.beta, self.r)


def static_loads(params: VehicleParams) -> tuple[float, float]:
    """Front and rear static axle loads (no load transfer)."""
    return params.m * params.g * params.l_r / params.L, params.m * params.g * params.l_f / params.L


def _check_vx(vx):
    if not np.all(np.asarray(vx) > VX_MIN):
        raise DomainError(f"Vx must exceed the kinematic floor {VX_MIN} m/s")


def derivatives_3dof(chassis: ChassisState, u: ControlInput, mu: float, model: Model = DEFAULT_MODEL):
    """(Vx_dot, beta_dot, r_dot) of the body model with additional yaw moment."""
    _check_vx(chassis.Vx)
    x = np.array([0.0, 0.0, chassis.Vx, chassis.beta, chassis.r])
    f = kernels.ACTIVE.field_full(x, u.as_array(), mu, 0.0, model.consts)
    return float(f[2]), float(f[3]), float(f[4])


def derivatives_path(path: PathState, chassis: ChassisState) -> tuple[float, float, float]:
    """(e_dot, dpsi_dot, s_dot) in Frenet coordinates about the reference path."""
    if not abs(path.kappa * path.e) < 1:
        raise DomainError("Frenet singularity: |kappa e| >= 1")
    vx = chassis.Vx
    vy = vx * math.tan(chassis.beta)
    c, s = math.cos(path.dpsi), math.sin(path.dpsi)
    sdot = (vx * c - vy * s) / (1.0 - path.kappa * path.e)
    return vy * c + vx * s, chassis.r - path.kappa * sdot, sdot


def derivatives_2dof(beta, r, Vx, delta, mu, dMz, model: Model = DEFAULT_MODEL):
    """(beta_dot, r_dot) of the 2DOF analysis model; broadcasts over arrays."""
    _check_vx(Vx)
    bd, rd = kernels.ACTIVE.field_2dof(beta, r, Vx, delta, mu, dMz, model.consts)
    if np.ndim(bd) == 0:
        return float(bd), float(rd)
    return bd, rd


def field(x, u, mu: float, kappa: float = 0.0, model: Model = DEFAULT_MODEL) -> np.ndarray:
    """Time derivative of the full state; arrays with trailing dims 5 and 3."""
    x = np.asarray(x, dtype=float)
    _check_vx(x[..., 2])
    if not np.all(np.abs(kappa * x[..., 0]) < 1):
        raise DomainError("Frenet singularity: |kappa e| >= 1")
    return kernels.ACTIVE.field_full(x, u, mu, kappa, model.consts)


def rk4_step(x, u, dt: float, mu: float, kappa: float = 0.0, model: Model = DEFAULT_MODEL, fn=None) -> np.ndarray:
    """One classical Runge-Kutta step with ``u`` held constant.

    ``fn(x, u)`` overrides the vector field (used for contrived tests).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f = fn if fn is not None else (lambda xx, uu: field(xx, uu, mu, kappa, model))
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rollout(x0, U, dt: float, mu: float, kappa: float = 0.0, model: Model = DEFAULT_MODEL) -> np.ndarray:
    """Batched RK4 rollouts.  x0 (B, 5), U (B, N, 3) -> (B, N+1, 5)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[None]
    return kernels.ACTIVE.rollout(x0, U, dt, mu, kappa, model.consts)
