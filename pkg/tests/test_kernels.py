from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from dualdrift import _kernels_py, kernels
from dualdrift.params import DEFAULT_MODEL

needs_compiled = pytest.mark.skipif(kernels.COMPILED is None, reason="compiled kernels not built")
CP = DEFAULT_MODEL.consts
TP = DEFAULT_MODEL.tire_consts


def _close(a, b, rtol=1e-12, atol=1e-9):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=rtol, atol=atol)


def test_active_is_compiled_when_built():
    if kernels.COMPILED is not None:
        assert kernels.ACTIVE is kernels.COMPILED
    assert kernels.PYTHON.impl is _kernels_py


def test_pure_python_switch():
    code = "from dualdrift import kernels; print(kernels.ACTIVE.name, kernels.COMPILED is None)"
    env = dict(os.environ, DUALDRIFT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == [_kernels_py.NAME, "True"]


@needs_compiled
class TestParity:
    def test_tire(self, rng):
        a = rng.uniform(-1.5, 1.5, 3000)
        s = rng.uniform(-1, 1, 3000)
        fz = rng.uniform(500, 12000, 3000)
        mu = rng.uniform(0.05, 1.2, 3000)
        _close(kernels.COMPILED.tire_forces(a, s, fz, mu, TP), kernels.PYTHON.tire_forces(a, s, fz, mu, TP))
        _close(kernels.COMPILED.lateral_force(a, fz, mu, TP), kernels.PYTHON.lateral_force(a, fz, mu, TP))
        _close(kernels.COMPILED.lateral_slope(a, fz, mu, TP), kernels.PYTHON.lateral_slope(a, fz, mu, TP),
               rtol=1e-10)

    def test_rear_inversion(self, rng):
        a = rng.uniform(-0.6, 0.6, 3000)
        cmd = rng.uniform(-8000, 8000, 3000)
        mu = rng.uniform(0.3, 1.0, 3000)
        c = kernels.COMPILED.rear_forces(a, cmd, 8396.0, mu, TP)
        p = kernels.PYTHON.rear_forces(a, cmd, 8396.0, mu, TP)
        _close(c[0], p[0], atol=1e-7)
        _close(c[1], p[1], atol=1e-7)

    def test_fields_and_rollout(self, rng):
        n = 500
        b, r = rng.uniform(-0.5, 0.5, n), rng.uniform(-1, 1, n)
        vx, d, dmz = rng.uniform(3, 25, n), rng.uniform(-0.5, 0.5, n), rng.uniform(-3500, 3500, n)
        _close(kernels.COMPILED.field_2dof(b, r, vx, d, 0.8, dmz, CP), kernels.PYTHON.field_2dof(b, r, vx, d, 0.8, dmz, CP))
        X = np.column_stack([rng.normal(0, 0.2, n), rng.normal(0, 0.1, n), vx, b, r])
        U = np.column_stack([d, rng.uniform(-3000, 3000, n), dmz])
        _close(kernels.COMPILED.field_full(X, U, 0.6, 0.05, CP), kernels.PYTHON.field_full(X, U, 0.6, 0.05, CP),
               atol=1e-8)
        x0 = np.tile([0.0, 0.0, 8.0, -0.1, 0.5], (3, 1))
        Useq = rng.uniform([-0.1, 0, -1000], [0.1, 1500, 1000], (3, 12, 3))
        _close(kernels.COMPILED.rollout(x0, Useq, 0.05, 0.55, 1 / 14.4, CP),
               kernels.PYTHON.rollout(x0, Useq, 0.05, 0.55, 1 / 14.4, CP), atol=1e-9)

    def test_polygon_sdf(self, rng):
        th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        poly = np.column_stack([np.cos(th), 0.5 * np.sin(th)])
        pts = rng.uniform(-1.5, 1.5, (400, 2))
        _close(kernels.COMPILED.polygon_sdf(pts, poly), kernels.PYTHON.polygon_sdf(pts, poly), atol=1e-14)


@pytest.mark.parametrize("backend", kernels.backends(), ids=lambda b: b.name)
def test_polygon_sdf_square_oracle(backend):
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    pts = np.array([[0.5, 0.5], [0.5, 0.9], [2.0, 0.5], [1.0 + 3.0, 1.0 + 4.0]])
    _close(backend.polygon_sdf(pts, sq), [0.5, 0.1, -1.0, -5.0], atol=1e-15)


@pytest.mark.parametrize("backend", kernels.backends(), ids=lambda b: b.name)
def test_subnormal_slip_finite(backend):
    a = np.array([0.0, 5e-324, 2.2e-313, 1e-200, -1e-300])
    fx, fy, fb = backend.tire_forces(a, np.zeros_like(a), 8396.0, 0.9, TP)
    assert np.all(np.isfinite(fy)) and np.all(fx == 0)
    fx, fy, fb = backend.tire_forces(np.zeros_like(a), a, 8396.0, 0.9, TP)
    assert np.all(np.isfinite(fx)) and np.all(fy == 0)
