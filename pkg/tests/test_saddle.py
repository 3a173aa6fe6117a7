from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import round_trip_truth

from dualdrift.equilibrium import handling_diagram
from dualdrift.params import DomainError
from dualdrift.saddle import (SaddleDataset, SaddleFit, default_grid, eval_saddle_model, fit_saddle_model,
                              locate_saddles_grid, model_terms, saddle_formula, synthetic_dataset)

V60 = 60 / 3.6


class TestModel:
    def test_zero_input_reduction(self, fit):
        _, f1, _, f3, f4 = model_terms(fit.p, 0.8, V60, 0.0, 0.0)
        assert (f1, f3, f4) == (0.0, 1.0, 1.0)
        b1, r1, b2, r2, ok1, ok2 = eval_saddle_model(fit, 0.8, V60, 0.0, 0.0)
        assert r1 == pytest.approx(0.8 * 9.81 / V60, rel=1e-15)
        assert r1 == pytest.approx(0.4708, abs=1e-4)
        assert (b2, r2) == pytest.approx((-b1, -r1), rel=1e-15)
        assert ok1 and ok2

    def test_domain_error(self, fit):
        with pytest.raises(DomainError):
            eval_saddle_model(fit, 0.2, V60, 0.0, 0.0)
        with pytest.raises(DomainError):
            eval_saddle_model(fit, 0.8, V60, 0.0, 4000.0)

    def test_coalescence_flag(self):
        p = np.array([0.2, 0.0, 0.3, 1.0, 0.0, 0.0, 1000.0, 0.0, 0.0, 4000.0, 0.0, 0.0])
        fit = SaddleFit(p=p, fit_domain={"mu": (0.3, 1), "Vx": (5, 25), "delta": (-0.5, 0.5), "dMz": (-3500, 3500)},
                        rms_error=(0.0, 0.0))
        # f3 = 1 - (dMz / (mu p7))^2 turns negative once |dMz| > mu p7
        assert eval_saddle_model(fit, 0.5, V60, 0.0, 400.0)[4]
        assert not eval_saddle_model(fit, 0.5, V60, 0.0, 600.0)[4]

    def test_json_round_trip(self, fit, tmp_path):
        fit.save(tmp_path / "f.json")
        back = SaddleFit.load(tmp_path / "f.json")
        assert np.array_equal(back.p, fit.p) and back.rms_error == fit.rms_error

    @settings(max_examples=50)
    @given(st.floats(0.3, 1.0), st.floats(6, 25), st.floats(-0.5, 0.5), st.floats(-3500, 3500))
    def test_formula_broadcast_matches_scalar(self, mu, vx, de, dm):
        p = np.array([0.2, 0.01, 0.3, 1.0, 0.1, 0.01, 6000.0, 0.02, 0.0, 4000.0, 0.015, 0.0])
        b, r = saddle_formula(p, np.array([mu]), vx, de, dm, 1.0, 1.345, 9.81)
        a_sat = p[0] * mu + p[1]
        r0 = (mu * 9.81 / vx + p[2] * de / mu) * (1 - (dm / (mu * p[6] * (1 - p[7] * vx))) ** 2)
        f2 = p[3] + p[4] * de * mu + p[5] * vx
        b0 = (-1.345 * r0 / vx + (-abs(a_sat) + de) * f2) * (1 - (dm / (mu * p[9] * (1 - p[10] * vx))) ** 2)
        assert r[0] == pytest.approx(r0, rel=1e-12, abs=1e-12)
        assert b[0] == pytest.approx(b0, rel=1e-12, abs=1e-12)


class TestFit:
    def test_synthetic_round_trip(self, fit):
        p = round_trip_truth(fit)
        data = synthetic_dataset(p, default_grid(3, 3, 4, 4, fit.fit_domain), domain=fit.fit_domain)
        got = fit_saddle_model(data)
        np.testing.assert_allclose(got.p, p, rtol=1e-3, atol=1e-12)

    def test_argmin_over_seeds(self, fit):
        p = round_trip_truth(fit)
        p[5] *= 1.5  # a second dataset so the seeds do not all start at the answer
        data = synthetic_dataset(p, default_grid(3, 3, 3, 3, fit.fit_domain), domain=fit.fit_domain)
        data.rows[:, 5] += 0.01 * np.sin(np.arange(len(data.rows)))
        got = fit_saddle_model(data, seeds=4)
        mu, vx, de, dm, side, b, r = data.rows.T
        bm, rm = saddle_formula(got.p, mu, vx, de, dm, side, data.l_f, data.g)
        cost = 0.5 * (np.sum(((bm - b) / np.std(b)) ** 2) + np.sum(((rm - r) / np.std(r)) ** 2))
        assert len(got.seed_costs) == 4
        assert cost <= min(got.seed_costs) * (1 + 1e-9)

    def test_too_small(self):
        d = SaddleDataset(rows=np.zeros((3, 7)), sat_table=np.array([[0.5, 0.1], [0.9, 0.2]]))
        with pytest.raises(ValueError):
            fit_saddle_model(d)

    def test_shipped_fit_quality(self, fit):
        assert fit.converged
        assert fit.rms_error[0] <= 0.1 * fit.coord_range[0]
        assert fit.rms_error[1] <= 0.1 * fit.coord_range[1]

    def test_model_vs_numeric_saddles(self, fit):
        rng = np.random.default_rng(7)
        d = fit.fit_domain
        pts = np.column_stack([rng.uniform(*d[k], 20) for k in ("mu", "Vx", "delta", "dMz")])
        ds = locate_saddles_grid(pts, domain=d)
        err = []
        for mu, vx, de, dm, side, b, r in ds.rows:
            b1, r1, b2, r2, ok, _ = eval_saddle_model(fit, mu, vx, de, dm)
            if ok:
                err.append(((b1 if side > 0 else b2) - b, (r1 if side > 0 else r2) - r))
        err = np.array(err)
        assert len(err) >= 10
        rms = np.sqrt(np.mean(err**2, axis=0))
        assert rms[0] <= 0.1 * fit.coord_range[0] and rms[1] <= 0.1 * fit.coord_range[1]


class TestDataset:
    def test_counts_per_cell(self, fit):
        grid = default_grid(2, 2, 3, 3, fit.fit_domain)
        ds = locate_saddles_grid(grid, domain=fit.fit_domain)
        keys = [tuple(r[:4]) for r in ds.rows]
        counts = {k: keys.count(k) for k in set(keys)}
        assert all(c in (1, 2) for c in counts.values())
        assert ds.n_cells == len(grid)
        assert set(ds.rows[:, 4]) <= {1.0, -1.0}

    def test_yaw_rate_grows_with_mu(self, fit):
        grid = np.array([[m, V60, 0.0, 0.0] for m in (0.4, 0.6, 0.8, 1.0)])
        rows = locate_saddles_grid(grid, domain=fit.fit_domain).rows
        r = rows[rows[:, 4] > 0][:, 6]
        assert len(r) == 4 and np.all(np.diff(r) > 0)

    def test_row_matches_handling_diagram(self, fit):
        rows = locate_saddles_grid(np.array([[0.9, V60, 0.0, 0.0]]), domain=fit.fit_domain).rows
        hd = [e for e in handling_diagram(V60, 0.9).intersections if e.is_saddle]
        for _, _, _, _, side, b, r in rows:
            h = [e for e in hd if np.sign(e.r) == side][0]
            assert abs(h.beta - b) <= 1e-3 and abs(h.r - r) <= 1e-3

    def test_json_units(self, fit):
        ds = locate_saddles_grid(np.array([[0.9, V60, 0.0, 0.0]]), domain=fit.fit_domain)
        d = json.loads(json.dumps(ds.to_json()))
        assert d["units"]["r_s"] == "rad/s"
        assert np.array_equal(SaddleDataset.from_json(d).rows, ds.rows)
