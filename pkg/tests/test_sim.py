from __future__ import annotations

import json
import math

import numpy as np
import pytest

from dualdrift.nmpc import NMPCConfig
from dualdrift.sim import (LOG_COLUMNS, Scenario, SimLog, build_table, compute_metrics, export_log, export_phase,
                           export_polylines, read_csv, reference_for, run_closed_loop, write_csv)
from dualdrift.vehicle import STATE_NAMES

START = [0.0, 0.0, 8.0, -0.02, 0.45]


@pytest.fixture(scope="module")
def table(fit):
    return build_table(Scenario(), NMPCConfig().box, fit)


@pytest.fixture(scope="module")
def short_log(table):
    return run_closed_loop(Scenario(duration=0.4, initial=START), table=table)


def reference_log(ref, n=50, dt=0.02):
    rows = []
    for k in range(n + 1):
        row = {"t": k * dt, **{c: float(v) for c, v in zip(STATE_NAMES, ref.x_ref)}}
        row.update({c: 0.0 for c in ("delta", "fxr", "dmz", "tfl", "tfr", "trl", "trr")})
        row.update({"d_inner": 0.1, "d_outer": 0.2, "status": "Converged"})
        rows.append(row)
    return SimLog(rows=rows, reference=ref)


class TestScenario:
    @pytest.mark.parametrize("kw", [{"duration": -1.0}, {"dt": 0.0}, {"radius": -2.0}, {"initial": [0.0, 1.0]}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Scenario(**kw)

    def test_dict_round_trip(self):
        sc = Scenario(plant_mu=0.6, initial=START)
        assert Scenario.from_dict(json.loads(json.dumps(sc.to_dict()))) == sc

    def test_dt_mismatch(self, table):
        with pytest.raises(ValueError):
            run_closed_loop(Scenario(duration=0.1, dt=0.01), table=table)

    def test_straight_path_has_no_drift_reference(self):
        with pytest.raises(Exception):
            reference_for(Scenario(radius=None))


class TestClosedLoop:
    def test_zero_duration(self, table):
        log = run_closed_loop(Scenario(duration=0.0, initial=START), table=table)
        assert len(log.rows) == 1 and log.rows[0]["status"] == "initial"
        assert [log.rows[0][c] for c in STATE_NAMES] == START

    def test_uniform_grid(self, short_log):
        t = short_log.array("t")
        assert len(t) == 21
        np.testing.assert_allclose(np.diff(t), 0.02, atol=1e-12)

    def test_schema(self, short_log):
        for row in short_log.rows:
            assert tuple(row) == LOG_COLUMNS
            if row["status"] == "Converged":
                assert all(math.isfinite(row[c]) for c in LOG_COLUMNS if c != "status")

    def test_deterministic(self, table, short_log):
        again = run_closed_loop(Scenario(duration=0.4, initial=START), table=table)
        assert again.rows == short_log.rows

    def test_commands_in_box(self, short_log):
        lo, hi = NMPCConfig().input_bounds()
        U = np.column_stack([short_log.array(c) for c in ("delta", "fxr", "dmz")])
        assert np.all(U >= lo) and np.all(U <= hi)

    def test_no_envelope_variant(self, table):
        log = run_closed_loop(Scenario(duration=0.1, initial=START, use_envelope=False), table=table)
        assert log.complete and len(log.rows) == 6

    def test_plant_failure_truncates(self, table):
        log = run_closed_loop(Scenario(duration=0.2, initial=[0.0, 0.0, 0.3, 0.0, 0.0]), table=table)
        assert not log.complete and log.status.startswith("failed")
        assert compute_metrics(log).partial


class TestMetrics:
    def test_reference_log_zero(self):
        ref = reference_for(Scenario())
        m = compute_metrics(reference_log(ref))
        assert (m.speed_error, m.sideslip_error, m.yaw_rate_error, m.peak_lateral_error) == (0.0, 0.0, 0.0, 0.0)
        assert m.outer_violations == 0 and m.settling_time == 0.0 and not m.partial

    def test_window_and_peak(self):
        ref = reference_for(Scenario())
        log = reference_log(ref, n=99)
        for k, row in enumerate(log.rows):
            row["e"] = 0.3 if k == 10 else 0.0
            row["vx"] = ref.x_ref[2] + (0.1 if k >= 80 else 1.0)
        m = compute_metrics(log)
        assert m.peak_lateral_error == pytest.approx(0.3)
        assert m.speed_error == pytest.approx(0.1)
        assert m.settling_time == pytest.approx(80 * 0.02)

    def test_outer_violation_counted(self):
        ref = reference_for(Scenario())
        log = reference_log(ref)
        log.rows[3]["d_outer"] = -1e-3
        log.rows[4]["d_outer"] = -1e-9
        assert compute_metrics(log).outer_violations == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics(SimLog(reference=reference_for(Scenario())))


class TestExport:
    def test_log_round_trip(self, short_log, tmp_path):
        export_log(short_log, tmp_path / "log.csv")
        head, rows = read_csv(tmp_path / "log.csv")
        assert tuple(head) == LOG_COLUMNS
        assert rows == short_log.rows

    def test_header_units(self, short_log, tmp_path):
        export_log(short_log, tmp_path / "log.csv")
        first = (tmp_path / "log.csv").read_text().splitlines()[0]
        assert first.startswith("t [s],e [m],dpsi [rad],vx [m/s],beta [rad],r [rad/s]")
        assert first.endswith(",status")

    def test_phase(self, short_log, tmp_path):
        export_phase(short_log, tmp_path / "p.csv")
        head, rows = read_csv(tmp_path / "p.csv")
        assert head == ["beta", "r"] and [r["beta"] for r in rows] == list(short_log.array("beta"))

    def test_polylines(self, tmp_path):
        rings = {"inner": [np.array([[0.0, 0.1], [0.2, 0.3]])], "outer": [np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])]}
        export_polylines(rings, tmp_path / "e.csv")
        _, rows = read_csv(tmp_path / "e.csv")
        assert [(r["curve"], r["ring"]) for r in rows] == [("inner", 0.0), ("inner", 0.0), ("outer", 0.0), ("outer", 1.0)]

    def test_bit_exact_floats(self, tmp_path):
        vals = np.random.default_rng(3).normal(size=50) * 10.0 ** np.arange(-25, 25)
        write_csv(tmp_path / "v.csv", ("v",), [{"v": v} for v in vals])
        _, rows = read_csv(tmp_path / "v.csv")
        assert np.array_equal([r["v"] for r in rows], vals)

    def test_unwritable(self, short_log, tmp_path):
        with pytest.raises(OSError):
            export_log(short_log, tmp_path / "missing" / "log.csv")
