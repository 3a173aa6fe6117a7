"""Backend selection for the numeric kernels.

The compiled extension is used when it imports; otherwise the NumPy
implementation.  Set ``DUALDRIFT_PURE_PYTHON=1`` to force the fallback.
Both backends expose the same functions through :class:`Backend`.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

from . import _kernels_py


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = None if os.environ.get("DUALDRIFT_PURE_PYTHON") else _load_compiled()


def _flat(*arrays):
    b = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in arrays))
    shape = b[0].shape
    return shape, [np.ascontiguousarray(a).ravel() for a in b]


class Backend:
    """Uniform array API over one kernel implementation."""

    def __init__(self, impl):
        self.impl = impl
        self.name = impl.NAME
        self._compiled = impl is not _kernels_py

    def tire_forces(self, alpha, s, fz, mu, tp):
        if not self._compiled:
            return self.impl.tire_forces(alpha, s, fz, mu, tp)
        shape, (a, s_, f, m) = _flat(alpha, s, fz, mu)
        out = self.impl.tire_forces(a, s_, f, m, np.ascontiguousarray(tp, dtype=float))
        return tuple(o.reshape(shape) for o in out)

    def lateral_force(self, alpha, fz, mu, tp):
        if not self._compiled:
            return self.impl.lateral_force(alpha, fz, mu, tp)
        shape, (a, f, m) = _flat(alpha, fz, mu)
        return self.impl.lateral_force(a, f, m, np.ascontiguousarray(tp, dtype=float)).reshape(shape)

    def lateral_slope(self, alpha, fz, mu, tp):
        if not self._compiled:
            return self.impl.lateral_slope(alpha, fz, mu, tp)
        shape, (a, f, m) = _flat(alpha, fz, mu)
        return self.impl.lateral_slope(a, f, m, np.ascontiguousarray(tp, dtype=float)).reshape(shape)

    def rear_forces(self, alpha, fx_cmd, fz, mu, tp):
        if not self._compiled:
            return self.impl.rear_forces(alpha, fx_cmd, fz, mu, tp)
        shape, (a, c, f, m) = _flat(alpha, fx_cmd, fz, mu)
        out = self.impl.rear_forces(a, c, f, m, np.ascontiguousarray(tp, dtype=float))
        return tuple(o.reshape(shape) for o in out)

    def field_2dof(self, beta, r, vx, delta, mu, dmz, cp):
        if not self._compiled:
            return self.impl.field_2dof(beta, r, vx, delta, mu, dmz, cp)
        shape, flat = _flat(beta, r, vx, delta, mu, dmz)
        bd, rd = self.impl.field_2dof(*flat, np.ascontiguousarray(cp, dtype=float))
        return bd.reshape(shape), rd.reshape(shape)

    def field_full(self, x, u, mu, kappa, cp):
        if not self._compiled:
            return self.impl.field_full(x, u, mu, kappa, cp)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        xb = np.ascontiguousarray(np.broadcast_to(x, lead + (5,))).reshape(-1, 5)
        ub = np.ascontiguousarray(np.broadcast_to(u, lead + (3,))).reshape(-1, 3)
        out = self.impl.field_full(xb, ub, float(mu), float(kappa), np.ascontiguousarray(cp, dtype=float))
        return out.reshape(lead + (5,))

    def rollout(self, x0, U, dt, mu, kappa, cp):
        if not self._compiled:
            return self.impl.rollout(x0, U, dt, mu, kappa, cp)
        return self.impl.rollout(
            np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(U, dtype=float),
            float(dt), float(mu), float(kappa),
            np.ascontiguousarray(cp, dtype=float),
        )

    def polygon_sdf(self, points, poly):
        if not self._compiled:
            return self.impl.polygon_sdf(points, poly)
        return self.impl.polygon_sdf(
            np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 2)),
            np.ascontiguousarray(poly, dtype=float),
        )


PYTHON = Backend(_kernels_py)
COMPILED = Backend(_compiled) if _compiled is not None else None
ACTIVE = COMPILED or PYTHON

if COMPILED is None and not os.environ.get("DUALDRIFT_PURE_PYTHON"):
    warnings.warn("dualdrift: compiled kernels unavailable, using the NumPy fallback", RuntimeWarning, stacklevel=2)


def backends() -> list[Backend]:
    return [b for b in (COMPILED, PYTHON) if b is not None]
