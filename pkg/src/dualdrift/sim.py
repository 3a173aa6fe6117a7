"""Closed-loop drift simulation, logging, metrics and CSV/JSON export."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .envelope import EnvelopeTable, InputBox
from .nmpc import DriftReference, NMPCConfig, NMPCController, compute_reference
from .params import DEFAULT_MODEL, DomainError, Model, TireParams, VehicleParams
from .saddle import SaddleFit
from .vehicle import STATE_NAMES, rk4_step

LOG_COLUMNS = ("t", "e", "dpsi", "vx", "beta", "r", "delta", "fxr", "dmz", "tfl", "tfr", "trl", "trr",
               "d_inner", "d_outer", "status")
LOG_UNITS = ("s", "m", "rad", "m/s", "rad", "rad/s", "rad", "N", "N*m", "N*m", "N*m", "N*m", "N*m",
             "rad", "rad", "")
STEADY_WINDOW = 0.2  # trailing fraction of the run used for steady-state errors
# steady-state error ceilings (speed m/s, sideslip rad, yaw rate rad/s) used for settling time
CEILINGS = (0.2938, 0.0302, 0.0156)
OUTER_TOL = 1e-6


def default_fit() -> SaddleFit:
    """Saddle-location fit shipped with the package (default grid, default model)."""
    with resources.files("dualdrift").joinpath("data", "saddle_fit.json").open() as fh:
        return SaddleFit.from_json(json.load(fh))


@dataclass
class Scenario:
    plant_mu: float = 0.55
    design_mu: float = 0.55
    radius: float | None = 14.4  # None means a straight path
    speed: float = 8.0
    duration: float = 20.0
    dt: float = 0.02
    initial: list | None = None  # [e, dpsi, Vx, beta, r]; None starts on the reference
    use_envelope: bool = True
    seed: int | None = None
    table_vx: list | None = None  # envelope table speed axis; None picks a band around ``speed``

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError("duration must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.initial is not None and len(self.initial) != 5:
            raise ValueError("initial state needs 5 entries")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(**d)


@dataclass
class SimLog:
    rows: list = field(default_factory=list)
    reference: DriftReference | None = None
    status: str = "ok"  # "ok" or "failed: <reason>"
    solver: list = field(default_factory=list)  # per-step (iterations, stationarity)

    def array(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    @property
    def complete(self) -> bool:
        return self.status == "ok"


@dataclass
class Metrics:
    speed_error: float
    sideslip_error: float
    yaw_rate_error: float
    peak_lateral_error: float
    outer_violations: int
    settling_time: float | None
    partial: bool = False
    converged_fraction: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def reference_for(scenario: Scenario, model: Model = DEFAULT_MODEL) -> DriftReference:
    if scenario.radius is None:
        raise DomainError("a drift reference needs a circular path")
    return compute_reference(scenario.radius, scenario.speed, scenario.design_mu, model)


def build_table(scenario: Scenario, box: InputBox, fit: SaddleFit, model: Model = DEFAULT_MODEL) -> EnvelopeTable:
    vx = scenario.table_vx
    if vx is None:
        vx = [round(scenario.speed * f, 6) for f in (0.7, 0.85, 1.0, 1.15, 1.3)]
    return EnvelopeTable.build(vx, [scenario.design_mu], box, fit, model)


def run_closed_loop(scenario: Scenario, nmpc: NMPCConfig | None = None, model: Model = DEFAULT_MODEL,
                    table: EnvelopeTable | None = None, fit: SaddleFit | None = None,
                    trace: list | None = None) -> SimLog:
    """Perfect-state-feedback loop: solve, allocate, advance the plant one RK4 step."""
    cfg = nmpc or NMPCConfig()
    cfg = NMPCConfig.from_dict({**cfg.to_dict(), "mu_design": scenario.design_mu, "use_envelope": scenario.use_envelope})
    if abs(cfg.dt - scenario.dt) > 1e-12:
        raise ValueError("scenario dt must match the controller dt")
    ref = reference_for(scenario, model)
    if table is None:
        table = build_table(scenario, cfg.box, fit or default_fit(), model)
    ctrl = NMPCController(ref, cfg, table if scenario.use_envelope else None, model)
    x = np.array(scenario.initial if scenario.initial is not None else ref.x_ref, dtype=float)
    kappa = ref.kappa
    n = int(round(scenario.duration / scenario.dt))
    log = SimLog(reference=ref)

    def distances(state):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                di, do, _ = table.query(state[2], scenario.design_mu, state[3], state[4])
            except DomainError:
                return math.nan, math.nan
        return di, do

    def record(k, state, cmd):
        di, do = distances(state)
        row = {"t": k * scenario.dt}
        row.update({name: float(v) for name, v in zip(STATE_NAMES, state)})
        if cmd is None:
            row.update({"delta": 0.0, "fxr": 0.0, "dmz": 0.0, "tfl": 0.0, "tfr": 0.0, "trl": 0.0, "trr": 0.0,
                        "status": "initial"})
        else:
            row.update({"delta": cmd.delta, "fxr": cmd.Fxr, "dmz": cmd.dMz, "tfl": cmd.T_fl, "tfr": cmd.T_fr,
                        "trl": cmd.T_rl, "trr": cmd.T_rr, "status": cmd.status})
        row["d_inner"], row["d_outer"] = float(di), float(do)
        log.rows.append({c: row[c] for c in LOG_COLUMNS})

    # row k holds the state at t_k and the command applied over [t_k, t_k+1)
    for k in range(n):
        n_trace = len(trace) if trace is not None else 0
        try:
            res = ctrl.step(x, trace)
        except (DomainError, FloatingPointError) as exc:
            record(k, x, None)
            log.status = f"failed: {exc}"
            return log
        if trace is not None:
            for row in trace[n_trace:]:
                row["control_step"] = k
        record(k, x, res.command)
        log.solver.append((res.command.iterations, float(res.command.kkt[0])))
        try:
            x = rk4_step(x, res.command.u, scenario.dt, scenario.plant_mu, kappa, model)
        except DomainError as exc:
            log.status = f"failed: {exc}"
            return log
        if not np.all(np.isfinite(x)):
            log.status = "failed: non-finite plant state"
            return log
    record(n, x, None)
    return log


def compute_metrics(log: SimLog, ref: DriftReference | None = None, dt: float | None = None) -> Metrics:
    ref = ref or log.reference
    rows = log.rows
    if not rows:
        raise ValueError("empty log")
    t = np.array([r["t"] for r in rows])
    X = np.array([[r[c] for c in STATE_NAMES] for r in rows])
    err = X - ref.x_ref
    n = len(rows)
    w = max(1, int(math.ceil(STEADY_WINDOW * n)))
    tail = err[-w:]
    within = (np.abs(err[:, 2]) <= CEILINGS[0]) & (np.abs(err[:, 3]) <= CEILINGS[1]) & (np.abs(err[:, 4]) <= CEILINGS[2])
    settle = None
    if within[-1]:
        outside = np.flatnonzero(~within)
        settle = float(t[0] if outside.size == 0 else t[outside[-1] + 1])
    do = np.array([r["d_outer"] for r in rows])
    status = [r["status"] for r in rows if r["status"] != "initial"]
    conv = sum(s == "Converged" for s in status) / max(1, len(status))
    return Metrics(
        speed_error=float(np.mean(tail[:, 2])),
        sideslip_error=float(np.mean(tail[:, 3])),
        yaw_rate_error=float(np.mean(tail[:, 4])),
        peak_lateral_error=float(np.max(np.abs(err[:, 0]))),
        outer_violations=int(np.sum(do < -OUTER_TOL)),
        settling_time=settle,
        partial=not log.complete,
        converged_fraction=float(conv),
    )


# -- export -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, columns, rows, units=None):
    """CSV with one header line ``name [unit]``; floats with 17 significant digits."""
    path = Path(path)
    head = [f"{c} [{u}]" if u else c for c, u in zip(columns, units)] if units else list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for row in rows:
            w.writerow([_fmt(row[c] if isinstance(row, dict) else row[i]) for i, c in enumerate(columns)])


def read_csv(path) -> tuple[list, list]:
    """(column names without units, rows as dicts of floats or strings)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = [h.split(" [")[0] for h in next(rd)]
        rows = []
        for rec in rd:
            row = {}
            for k, v in zip(head, rec):
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
            rows.append(row)
    return head, rows


def export_log(log: SimLog, path):
    write_csv(path, LOG_COLUMNS, log.rows, LOG_UNITS)


def export_phase(log: SimLog, path):
    rows = [{"beta": r["beta"], "r": r["r"]} for r in log.rows]
    write_csv(path, ("beta", "r"), rows, ("rad", "rad/s"))


def export_polylines(rings_by_name: dict, path):
    """Envelope polylines as (name, ring, beta, r) rows."""
    rows = []
    for name, rings in rings_by_name.items():
        for i, ring in enumerate(rings):
            for b, r in ring:
                rows.append({"curve": name, "ring": i, "beta": b, "r": r})
    write_csv(path, ("curve", "ring", "beta", "r"), rows, ("", "", "rad", "rad/s"))


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(cfg: dict) -> Model:
    return Model(VehicleParams.from_dict(cfg.get("vehicle", {})), TireParams.from_dict(cfg.get("tire", {})))
