"""Static vehicle and tire parameters.

Vehicle defaults are the test-vehicle values (mass 1720 kg, wheelbase
2.703 m).  Tire defaults are placeholders for a generic passenger tire;
they are meant to be overridden from a config file.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

# Kinematic floor on longitudinal speed, m/s.
VX_MIN = 0.5


class DomainError(ValueError):
    """Raised when a model is evaluated outside the region where it is defined."""


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1720.0
    Iz: float = 1343.1
    l_f: float = 1.345
    l_r: float = 1.358
    L: float = 2.703
    d: float = 1.660
    Re: float = 0.32
    g: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"VehicleParams.{f.name} must be positive")
        if abs(self.L - (self.l_f + self.l_r)) > 1e-9:
            raise ValueError("wheelbase L must equal l_f + l_r")

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        d = dict(d)
        if "L" not in d and ("l_f" in d or "l_r" in d):
            d["L"] = d.get("l_f", cls.l_f) + d.get("l_r", cls.l_r)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TireParams:
    """Combined-slip tire shape.

    ``decay`` is the post-peak slope of the lateral friction multiplier per
    unit combined slip and ``sliding_floor`` the fraction of peak friction
    the multiplier relaxes to at full sliding.  The decay exponent ramps in
    quadratically over ``onset_width`` (combined-slip units) past
    ``phi_peak`` so the lateral curve stays C1 through its peak.
    """

    Kx: float = 1.2e5
    Ky: float = 8.0e4
    E: float = 0.1
    lambda_d: float = 1.0
    mu_x_scale: float = 1.0
    mu_y_scale: float = 1.0
    decay: float = 0.15
    sliding_floor: float = 0.5
    onset_width: float = 0.3

    def __post_init__(self):
        if not (self.Kx > 0 and self.Ky > 0 and self.lambda_d > 0):
            raise ValueError("Kx, Ky and lambda_d must be positive")
        for name in ("mu_x_scale", "mu_y_scale"):
            v = getattr(self, name)
            if not 0 < v <= 1.2:
                raise ValueError(f"{name} must lie in (0, 1.2]")
        if self.E < 0 or self.decay < 0:
            raise ValueError("E and decay must be non-negative")
        if not 0 <= self.sliding_floor < 1:
            raise ValueError("sliding_floor must lie in [0, 1)")
        if self.onset_width < 0:
            raise ValueError("onset_width must be non-negative")

    @cached_property
    def phi_peak(self) -> float:
        """Combined slip at which the lateral friction decay sets in.

        It sits where the relative growth rate of the undecayed shear curve
        drops to ``decay``.  With ``onset_width = 0`` this is exactly the peak
        of the decayed curve; with a smooth onset the peak lies slightly past
        it.  Without decay there is no interior peak (inf).
        """
        if self.decay == 0:
            return math.inf
        E = self.E
        c3 = E * E + 1.0 / 12.0

        def rel_growth(p):
            P = p + E * p * p + c3 * p**3
            dP = 1 + 2 * E * p + 3 * c3 * p * p
            return dP * math.exp(-P) / -math.expm1(-P) - self.decay

        hi = 1.0
        while rel_growth(hi) > 0:
            hi *= 2.0
        return brentq(rel_growth, 1e-9, hi, xtol=1e-15, rtol=1e-15)

    @classmethod
    def from_dict(cls, d: dict) -> "TireParams":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# Indices into the packed constant vector consumed by the numeric kernels.
M, IZ, LF, LR, G, FZF, FZR, KX, KY, E_, LAMD, MUXS, MUYS, PHIP, DECAY, FLOOR, WIDTH, VXMIN = range(18)
N_CONST = 18
TIRE_SLICE = slice(KX, WIDTH + 1)


@dataclass(frozen=True)
class Model:
    """Vehicle plus tire, with the constant vector the kernels use."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tire: TireParams = field(default_factory=TireParams)

    @cached_property
    def loads(self) -> tuple[float, float]:
        v = self.vehicle
        return (v.m * v.g * v.l_r / v.L, v.m * v.g * v.l_f / v.L)

    @cached_property
    def consts(self) -> np.ndarray:
        v, t = self.vehicle, self.tire
        fzf, fzr = self.loads
        pp = t.phi_peak
        c = np.empty(N_CONST)
        c[[M, IZ, LF, LR, G, FZF, FZR]] = v.m, v.Iz, v.l_f, v.l_r, v.g, fzf, fzr
        c[[KX, KY, E_, LAMD, MUXS, MUYS]] = t.Kx, t.Ky, t.E, t.lambda_d, t.mu_x_scale, t.mu_y_scale
        c[PHIP] = pp if math.isfinite(pp) else 1e300
        c[DECAY] = t.decay
        c[FLOOR] = t.sliding_floor
        c[WIDTH] = t.onset_width
        c[VXMIN] = VX_MIN
        c.setflags(write=False)
        return c

    @property
    def tire_consts(self) -> np.ndarray:
        return self.consts[TIRE_SLICE]


DEFAULT_MODEL = Model()
