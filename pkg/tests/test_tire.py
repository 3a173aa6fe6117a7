from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dualdrift.params import DomainError, TireParams, VehicleParams
from dualdrift.tire import (TireState, combined_forces, lateral_force, normalized_shear, saturation_angle,
                            slip_angles, tangent_stiffness)

TP = TireParams()
FZR = 8396.0
FZF = 8477.0


def shear_oracle(phi, E):
    return 1.0 - math.exp(-phi - E * phi**2 - (E**2 + 1 / 12) * phi**3)


class TestNormalizedShear:
    def test_zero(self):
        assert normalized_shear(0.0, 0.1) == 0.0

    def test_saturates(self):
        assert abs(normalized_shear(10.0, 0.1) - 1.0) < 1e-4

    def test_unit_slip_no_curvature(self):
        assert normalized_shear(1.0, 0.0) == pytest.approx(1 - math.exp(-1 - 1 / 12), abs=1e-12)
        assert normalized_shear(1.0, 0.0) == pytest.approx(0.6616, abs=1e-4)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            normalized_shear(-0.1, 0.1)

    @given(st.floats(0, 8), st.floats(0, 1))
    def test_matches_direct_formula(self, phi, E):
        assert normalized_shear(phi, E) == pytest.approx(shear_oracle(phi, E), abs=1e-14)

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 2))
    def test_range_and_monotone(self, a, b, E):
        lo, hi = sorted((a, b))
        fl, fh = normalized_shear(lo, E), normalized_shear(hi, E)
        assert 0 <= fl <= 1 and 0 <= fh <= 1
        assert fl <= fh


class TestCombinedForces:
    def test_zero_slip(self):
        f = combined_forces(TireState(0.0, 0.0, FZR, 0.9), TP)
        assert (f.Fx, f.Fy, f.normalized_shear) == (0.0, 0.0, 0.0)

    def test_pure_cornering_sign(self):
        f = combined_forces(TireState(0.05, 0.0, FZR, 0.9), TP)
        assert f.Fx == 0.0
        assert f.Fy < 0

    def test_alpha_domain(self):
        with pytest.raises(DomainError):
            TireState(math.pi / 2, 0.0, FZR, 0.9)
        with pytest.raises(DomainError):
            TireState(0.1, 0.0, -1.0, 0.9)
        with pytest.raises(DomainError):
            TireState(0.1, 0.0, FZR, 1.3)

    def test_single_interior_peak(self):
        a = np.linspace(0, 0.3, 30001)
        fy = np.abs(lateral_force(a, FZR, 0.9, TP))
        k = int(np.argmax(fy))
        assert 0 < k < len(a) - 1
        assert np.all(np.diff(fy[:k + 1]) > 0)
        assert np.all(np.diff(fy[k:]) < 0)
        assert abs(a[k] - saturation_angle(0.9, FZR, TP)) < 2e-5

    @settings(max_examples=200)
    @given(st.floats(-1.5, 1.5), st.floats(-1, 1), st.floats(500, 12000), st.floats(0.05, 1.2))
    def test_friction_circle(self, alpha, s, fz, mu):
        f = combined_forces(TireState(alpha, s, fz, mu), TP)
        assert math.hypot(f.Fx, f.Fy) <= max(TP.mu_x_scale, TP.mu_y_scale) * mu * fz * (1 + 1e-9)
        # 1 - exp(-P) rounds to 1.0 in double precision once P exceeds ~37
        assert 0 <= f.normalized_shear <= 1

    @given(st.floats(0, 5), st.floats(0, 2))
    def test_shear_strictly_below_one(self, phi, E):
        # strictness is representable only while exp(-P) exceeds half an ulp of 1
        assume(phi + E * phi**2 + (E**2 + 1 / 12) * phi**3 < 30)
        assert normalized_shear(phi, E) < 1

    @given(st.floats(-1.5, 1.5), st.floats(500, 12000), st.floats(0.05, 1.2))
    def test_pure_slip_consistency(self, alpha, fz, mu):
        assert combined_forces(TireState(alpha, 0.0, fz, mu), TP).Fx == 0.0
        assert combined_forces(TireState(0.0, alpha / 2, fz, mu), TP).Fy == 0.0

    @given(st.floats(0, 1.5), st.floats(500, 12000), st.floats(0.05, 1.2))
    def test_odd_symmetry(self, alpha, fz, mu):
        assert lateral_force(-alpha, fz, mu, TP) == -lateral_force(alpha, fz, mu, TP)

    def test_friction_scale_bounds(self):
        with pytest.raises(ValueError):
            TireParams(mu_y_scale=1.3)
        with pytest.raises(ValueError):
            TireParams(Kx=0)


class TestSlipAngles:
    def test_zero(self):
        assert slip_angles(0.0, 0.0, 10.0, 0.0, VehicleParams()) == (0.0, 0.0)

    def test_table_values(self):
        af, ar = slip_angles(0.1, 0.5, 16.67, 0.2, VehicleParams())
        assert af == pytest.approx(0.1 + 1.345 * 0.5 / 16.67 - 0.2, abs=1e-15)
        assert af == pytest.approx(-0.0597, abs=1e-4)
        assert ar == pytest.approx(0.0593, abs=1e-4)

    def test_cancellation(self):
        assert slip_angles(0.2, 0.0, 8.0, 0.2, VehicleParams())[0] == 0.0

    def test_speed_floor(self):
        with pytest.raises(DomainError):
            slip_angles(0.0, 0.0, 0.4, 0.0, VehicleParams())


class TestSaturation:
    def test_deterministic(self):
        assert saturation_angle(0.7, FZF, TP) == saturation_angle(0.7, FZF, TP)

    def test_increases_with_mu(self):
        mus = np.linspace(0.3, 1.0, 15)
        a = [saturation_angle(m, FZF, TP) for m in mus]
        assert np.all(np.diff(a) >= 0)

    def test_dense_grid_oracle(self):
        grid = np.arange(0, 0.6, 1e-4)
        brute = grid[np.argmax(np.abs(lateral_force(grid, FZF, 0.9, TP)))]
        assert abs(saturation_angle(0.9, FZF, TP) - brute) < 1e-3

    @pytest.mark.parametrize("mu", np.linspace(0.3, 1.0, 8))
    def test_unique_argmax_scan(self, mu):
        a = np.linspace(1e-4, 1.2, 12000)
        fy = np.abs(lateral_force(a, FZF, mu, TP))
        d = np.sign(np.diff(fy))
        assert np.count_nonzero(np.diff(d) != 0) == 1  # exactly one sign change: a single interior peak

    def test_peak_force_scale(self):
        # peak lateral force sits near mu*Fz at mu = 0.9
        a = saturation_angle(0.9, FZF, TP)
        assert abs(lateral_force(a, FZF, 0.9, TP)) == pytest.approx(0.9 * FZF, rel=0.05)


class TestTangentStiffness:
    def test_rising_at_origin(self):
        assert tangent_stiffness(0.0, FZR, 0.9, TP) < 0

    def test_flat_at_peak(self):
        a = saturation_angle(0.9, FZR, TP)
        assert abs(tangent_stiffness(a, FZR, 0.9, TP)) <= 0.01 * abs(tangent_stiffness(0.0, FZR, 0.9, TP))

    def test_declining_past_peak(self):
        a = saturation_angle(0.9, FZR, TP)
        assert tangent_stiffness(a + 0.05, FZR, 0.9, TP) > 0

    def test_domain_edge(self):
        with pytest.raises(DomainError):
            tangent_stiffness(math.pi / 2 - 5e-6, FZR, 0.9, TP)

    @given(st.floats(-1.2, 1.2))
    def test_matches_difference_quotient(self, a):
        h = 1e-5
        fd = (lateral_force(a + h, FZR, 0.9, TP) - lateral_force(a - h, FZR, 0.9, TP)) / (2 * h)
        assert tangent_stiffness(a, FZR, 0.9, TP) == pytest.approx(fd, rel=1e-12, abs=1e-9)
