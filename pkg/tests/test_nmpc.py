from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualdrift.nlp import Status, check_derivatives
from dualdrift.nmpc import (COS_GUARD, DriftReference, NMPCConfig, NMPCController, Transcription, build_ocp, compute_reference,
                            shift_plan, solve_step, torque_allocation)
from dualdrift.params import DEFAULT_MODEL, DomainError
from dualdrift.sim import Scenario, build_table
from dualdrift import kernels
from dualdrift.vehicle import rk4_step

VP = DEFAULT_MODEL.vehicle


@pytest.fixture(scope="module")
def ref():
    return compute_reference(14.4, 8.0, 0.55)


@pytest.fixture(scope="module")
def table(fit):
    cfg = NMPCConfig()
    return build_table(Scenario(), cfg.box, fit)


@pytest.fixture(scope="module")
def start():
    return np.array([0.0, 0.0, 8.0, -0.02, 0.45])


class TestTorque:
    def test_rear_pair(self):
        t = torque_allocation([0.0, 2000.0, 0.0], VP)
        assert t[2] == pytest.approx(320.0) and t[3] == pytest.approx(320.0)

    def test_front_pair(self):
        t = torque_allocation([0.0, 0.0, 1000.0], VP)
        assert t[0] == pytest.approx(192.77, abs=5e-3)
        assert t[1] == -t[0]

    def test_reconstruction_random(self):
        rng = np.random.default_rng(8)
        U = np.column_stack([rng.uniform(-1.2, 1.2, 1000), rng.uniform(-5000, 5000, 1000), rng.uniform(-3500, 3500, 1000)])
        for d, f, m in U:
            tfl, tfr, trl, trr = torque_allocation((d, f, m), VP)
            assert (trl + trr) / VP.Re == pytest.approx(f, rel=4 * np.finfo(float).eps, abs=1e-12)
            assert (tfl - tfr) / VP.Re * math.cos(d) * (VP.d / 2) == pytest.approx(m, rel=8 * np.finfo(float).eps, abs=1e-12)

    def test_cos_guard(self):
        with pytest.raises(DomainError):
            torque_allocation([COS_GUARD, 0.0, 100.0], VP)


class TestReference:
    def test_yaw_rate(self, ref):
        assert ref.x_ref[4] == pytest.approx(8.0 / 14.4, abs=1e-4)
        assert ref.x_ref[4] == pytest.approx(0.5556, abs=1e-4)

    def test_drift_branch(self, ref):
        assert ref.x_ref[3] * ref.x_ref[4] < 0
        assert ref.x_ref[0] == 0.0

    def test_zeroes_field(self, ref):
        f = kernels.ACTIVE.field_full(ref.x_ref, ref.u_nom, 0.55, ref.kappa, DEFAULT_MODEL.consts)
        assert np.max(np.abs(f)) <= 1e-6

    def test_infeasible(self):
        with pytest.raises(DomainError):
            compute_reference(5.0, 20.0, 0.3)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            compute_reference(-1.0, 8.0, 0.55)


class TestConfig:
    def test_defaults(self):
        c = NMPCConfig()
        assert (c.Np, c.Nc, c.dt) == (15, 10, 0.02)
        assert c.Q == (2400.0, 4500.0, 300.0, 5000.0, 1600.0) and c.R == (1000.0, 800.0, 600.0)

    @pytest.mark.parametrize("kw", [{"Np": 5, "Nc": 5}, {"dt": 0.0}, {"Q": (1.0,)}, {"R": (-1.0, 0.0, 0.0)},
                                    {"input_cost": "x"}, {"hessian": "newton"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NMPCConfig(**kw)

    def test_dict_round_trip(self):
        c = NMPCConfig(Np=12, Nc=6, w_inner=5.0)
        assert NMPCConfig.from_dict(c.to_dict()) == c


class TestTranscription:
    def test_zero_state_error_absolute(self, ref):
        cfg = NMPCConfig(input_cost="absolute", use_envelope=False)
        tr = Transcription(ref.x_ref, ref, cfg, None)
        z = tr.initial_guess()
        f, _ = tr.objective(z)
        un = ref.u_nom / tr.scale
        assert f == pytest.approx(cfg.Nc * float(np.sum(np.asarray(cfg.R) * un ** 2)), rel=1e-9)

    def test_zero_state_error_deviation(self, ref):
        tr = Transcription(ref.x_ref, ref, NMPCConfig(use_envelope=False), None)
        assert tr.objective(tr.initial_guess())[0] <= 1e-12

    def test_origin_zero_cost(self, ref):
        zref = DriftReference(np.array([0.0, 0.0, 10.0, 0.0, 0.0]), 0.0, np.zeros(3), 1.0, 10.0, 0.55)
        cfg = NMPCConfig(input_cost="absolute", use_envelope=False)
        tr = Transcription(zref.x_ref, zref, cfg, None)
        assert tr.objective(np.zeros(tr.n))[0] == pytest.approx(0.0, abs=1e-20)

    def test_layout(self, ref, table, start):
        cfg = NMPCConfig()
        problem, tr = build_ocp(start, ref, cfg, table)
        assert problem.n_vars == 3 * cfg.Nc + cfg.Np
        U = tr.inputs(tr.initial_guess())
        assert U.shape == (cfg.Np, 3)
        np.testing.assert_array_equal(U[cfg.Nc:], np.repeat(U[cfg.Nc - 1:cfg.Nc], cfg.Np - cfg.Nc, axis=0))
        lo, hi = problem.bounds()
        assert np.all(lo[tr.nu:] == 0) and np.all(np.isinf(hi[tr.nu:]))

    def test_derivative_check(self, ref, table, start):
        problem, tr = build_ocp(start, ref, NMPCConfig(), table)
        rng = np.random.default_rng(4)
        z = tr.initial_guess()
        z[: tr.nu] += rng.uniform(-0.02, 0.02, tr.nu)
        rep = check_derivatives(problem, z, h=1e-5)
        assert rep.max_rel_error <= 1e-4

    def test_no_envelope_has_no_constraints(self, ref, start):
        problem, _ = build_ocp(start, ref, NMPCConfig(use_envelope=False), None)
        assert problem.constraints == [] and problem.n_vars == 30


class TestShift:
    def test_same_rate(self):
        p = np.arange(12.0).reshape(4, 3)
        s = shift_plan(p)
        np.testing.assert_array_equal(s, p[[1, 2, 3, 3]])

    def test_finer_sample(self):
        p = np.arange(4.0)[:, None]
        np.testing.assert_array_equal(shift_plan(p, 0.02, 0.05)[:, 0], [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(shift_plan(p, 0.05, 0.05)[:, 0], [1.0, 2.0, 3.0, 3.0])


class TestSolveStep:
    def test_at_reference(self, ref, table):
        res = solve_step(ref.x_ref, ref, NMPCConfig(), table)
        assert res.command.status == "Converged"
        scale = NMPCConfig().input_scale()
        assert np.max(np.abs(res.command.u - ref.u_nom) / scale) <= 0.02

    def test_outer_constraint_on_converged(self, ref, table, start):
        res = solve_step(start, ref, NMPCConfig(), table)
        assert res.solution.status == Status.CONVERGED
        assert np.min(res.d_outer) >= -1e-6
        assert max(res.solution.kkt) <= 1e-6

    def test_resolve_same_first_input(self, ref, table, start):
        cfg = NMPCConfig()
        a = solve_step(start, ref, cfg, table)
        b = solve_step(start, ref, cfg, table, warm_start=a.plan)
        np.testing.assert_allclose(b.command.u / cfg.input_scale(), a.command.u / cfg.input_scale(), atol=1e-8)

    def test_deterministic(self, ref, table, start):
        a = solve_step(start, ref, NMPCConfig(), table)
        b = solve_step(start, ref, NMPCConfig(), table)
        assert a.command == b.command

    def test_box_clamped(self, ref, table):
        cfg = NMPCConfig()
        lo, hi = cfg.input_bounds()
        x = np.array([0.5, 0.3, 8.0, -0.45, 0.9])
        u = solve_step(x, ref, cfg, table).command.u
        assert np.all(u >= lo) and np.all(u <= hi)

    def test_warm_faster_than_cold(self, ref, table, start):
        """Median over a closed-loop stretch of 50 samples."""
        cfg = NMPCConfig()
        ctrl = NMPCController(ref, cfg, table)
        x = start.copy()
        warm, cold = [], []
        for _ in range(50):
            c = solve_step(x, ref, cfg, table)
            w = ctrl.step(x)
            cold.append(c.command.iterations)
            warm.append(w.command.iterations)
            x = rk4_step(x, w.command.u, cfg.dt, 0.55, ref.kappa)
        assert np.median(warm) < np.median(cold)

    def test_inner_weight_pushes_out(self, ref, table):
        """A state inside the inner region is planned out of it when the inner weight is large."""
        cfg = NMPCConfig(w_inner=1e8)
        x = np.array([0.0, 0.0, 8.0, -0.02, 0.45])
        di0, _, _ = table.query(8.0, 0.55, x[3], x[4])
        assert di0 < 0
        res = solve_step(x, ref, cfg, table)
        assert np.min(res.d_outer) >= -1e-6
        assert res.d_inner[-1] >= -1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1e4, 1e4), st.floats(-5e3, 5e3))
def test_torque_identity_property(d, f, m):
    tfl, tfr, trl, trr = torque_allocation((d, f, m), VP)
    assert math.isclose((trl + trr) / VP.Re, f, rel_tol=1e-15, abs_tol=1e-12)
    assert math.isclose((tfl - tfr) / VP.Re * math.cos(d) * VP.d / 2, m, rel_tol=1e-14, abs_tol=1e-11)
