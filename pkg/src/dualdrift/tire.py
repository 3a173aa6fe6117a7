"""Combined-slip tire forces and slip kinematics.

The shear curve is the exponential-cubic saturation ``1 - exp(-phi - E phi^2
- (E^2 + 1/12) phi^3)``.  Lateral friction is multiplied by a decay factor
past the peak combined slip so that the pure-cornering curve has a single
interior maximum and a declining branch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .params import VX_MIN, DomainError, TireParams, VehicleParams

ALPHA_LIMIT = math.pi / 2
SAT_SEARCH_HI = 1.2  # rad, upper end of the peak search
FD_STEP = 1e-5


@dataclass(frozen=True)
class TireState:
    alpha: float
    s: float
    Fz: float
    mu: float

    def __post_init__(self):
        if not self.Fz > 0:
            raise DomainError("vertical load must be positive")
        if not 0 < self.mu <= 1.2:
            raise DomainError("road mu must lie in (0, 1.2]")
        if not abs(self.alpha) < ALPHA_LIMIT:
            raise DomainError("|alpha| must be below pi/2")


@dataclass(frozen=True)
class TireForces:
    Fx: float
    Fy: float
    normalized_shear: float


def _tp(params: TireParams) -> np.ndarray:
    return np.array([params.Kx, params.Ky, params.E, params.lambda_d, params.mu_x_scale,
                     params.mu_y_scale, min(params.phi_peak, 1e300), params.decay, params.sliding_floor,
                     params.onset_width])


def normalized_shear(phi, E: float):
    """Resultant shear ratio for combined slip ``phi`` (array or scalar)."""
    phi_a = np.asarray(phi, dtype=float)
    if np.any(phi_a < 0) or np.any(np.isnan(phi_a)):
        raise DomainError("combined slip must be non-negative")
    out = kernels._kernels_py.shear(phi_a, E)
    return float(out) if np.ndim(out) == 0 else out


def combined_forces(state: TireState, params: TireParams) -> TireForces:
    fx, fy, fb = kernels.ACTIVE.tire_forces(state.alpha, state.s, state.Fz, state.mu, _tp(params))
    return TireForces(float(fx), float(fy), float(fb))


def lateral_force(alpha, Fz: float, mu: float, params: TireParams):
    """Pure-cornering lateral force; vectorised over ``alpha``."""
    a = np.asarray(alpha, dtype=float)
    if np.any(np.abs(a) >= ALPHA_LIMIT):
        raise DomainError("|alpha| must be below pi/2")
    out = kernels.ACTIVE.lateral_force(a, Fz, mu, _tp(params))
    return float(out) if np.ndim(out) == 0 else out


def slip_angles(beta: float, r: float, Vx: float, delta: float, params: VehicleParams) -> tuple[float, float]:
    """Front and rear slip angles of the single-track model."""
    if not Vx > VX_MIN:
        raise DomainError(f"Vx={Vx} below the kinematic floor {VX_MIN} m/s")
    return beta + params.l_f * r / Vx - delta, beta - params.l_r * r / Vx


def saturation_angle(mu: float, Fz: float, params: TireParams) -> float:
    """Slip angle of peak pure-cornering lateral force (bounded search)."""
    if not 0 < mu <= 1.2:
        raise DomainError("road mu must lie in (0, 1.2]")
    tp = _tp(params)
    res = minimize_scalar(
        lambda a: float(kernels.ACTIVE.lateral_force(a, Fz, mu, tp)),
        bounds=(0.0, SAT_SEARCH_HI),
        method="bounded",
        options={"xatol": 1e-8},
    )
    return float(res.x)


def tangent_stiffness(alpha: float, Fz: float, mu: float, params: TireParams, h: float = FD_STEP) -> float:
    """Central-difference slope dFy/dalpha at ``alpha``.

    Negative on the rising branch, positive on the declining one.
    """
    if abs(alpha) + h >= ALPHA_LIMIT:
        raise DomainError("alpha within one difference step of the domain edge")
    tp = _tp(params)
    f = kernels.ACTIVE.lateral_force(np.array([alpha + h, alpha - h]), Fz, mu, tp)
    return float((f[0] - f[1]) / (2 * h))


def lateral_slope(alpha, Fz: float, mu: float, params: TireParams):
    """Analytic dFy/dalpha (used by Newton iterations)."""
    out = kernels.ACTIVE.lateral_slope(np.asarray(alpha, dtype=float), Fz, mu, _tp(params))
    return float(out) if np.ndim(out) == 0 else out
