"""Command-line entry point: ``dualdrift <command> [--config FILE] [--out DIR] [--trace]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .envelope import EnvelopeTable, InputBox, build_dual_envelope, eta_max
from .equilibrium import find_equilibria, handling_diagram
from .nlp import write_trace
from .nmpc import NMPCConfig
from .params import DomainError, Model
from .saddle import SaddleFit, default_grid, fit_saddle_model, load_dataset, locate_saddles_grid, save_dataset
from .sim import (Scenario, SimLog, compute_metrics, default_fit, export_log, export_phase, export_polylines, load_model,
                  read_csv, reference_for, run_closed_loop, write_csv, write_json)

log = logging.getLogger("dualdrift")

ANALYSIS_DEFAULTS = {"Vx": 60 / 3.6, "mu": 0.9, "delta": 0.0, "dMz": 0.0}


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"vehicle", "tire", "nmpc", "scenario", "analysis", "envelope", "saddle"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _analysis(cfg: dict, args) -> dict:
    a = {**ANALYSIS_DEFAULTS, **cfg.get("analysis", {})}
    for key, flag in (("Vx", "vx"), ("mu", "mu"), ("delta", "delta"), ("dMz", "dmz")):
        v = getattr(args, flag, None)
        if v is not None:
            a[key] = v
    return a


def _fit(cfg: dict) -> SaddleFit:
    path = cfg.get("envelope", {}).get("fit")
    return SaddleFit.load(path) if path else default_fit()


def _box(cfg: dict) -> InputBox:
    return NMPCConfig.from_dict(cfg.get("nmpc", {})).box


def cmd_equilibria(args, cfg, model: Model, out: Path):
    a = _analysis(cfg, args)
    eqs = find_equilibria(a["Vx"], a["mu"], a["delta"], a["dMz"], model)
    rows = [e.to_dict() for e in eqs]
    cols = ("beta", "r", "delta", "dMz", "Vx", "mu", "stability", "case", "C_f", "C_r", "trace", "det", "residual")
    write_csv(out / "equilibria.csv", cols, rows,
              ("rad", "rad/s", "rad", "N*m", "m/s", "", "", "", "N/rad", "N/rad", "1/s", "1/s^2", ""))
    write_json({"conditions": a, "equilibria": rows}, out / "equilibria.json")
    for e in eqs:
        log.info("beta=%+.4f r=%+.4f %s %s", e.beta, e.r, e.stability.value, e.case.value)


def cmd_handling_diagram(args, cfg, model: Model, out: Path):
    a = _analysis(cfg, args)
    hd = handling_diagram(a["Vx"], a["mu"], a["delta"], a["dMz"], model)
    rows = []
    for case, br in sorted(hd.branches.items(), key=lambda kv: kv[0].value):
        for x, ay, af, ar in zip(br["x"], br["ay"], br["alpha_f"], br["alpha_r"]):
            if np.isfinite(x):
                rows.append({"case": case.value, "ay_g": ay, "x": x, "alpha_f": af, "alpha_r": ar})
    write_csv(out / "handling_diagram.csv", ("case", "ay_g", "x", "alpha_f", "alpha_r"), rows,
              ("", "", "rad", "rad", "rad"))
    write_json({"conditions": a, "intersections": [e.to_dict() for e in hd.intersections]},
               out / "handling_intersections.json")


def cmd_fit_saddle(args, cfg, model: Model, out: Path):
    sc = cfg.get("saddle", {})
    if args.dataset:
        data = load_dataset(args.dataset)
    else:
        grid = default_grid(*sc.get("grid", (5, 5, 10, 8)))
        data = locate_saddles_grid(grid, model)
        save_dataset(data, out / "saddle_dataset.json")
    fit = fit_saddle_model(data, seeds=sc.get("seeds", 10), rng_seed=sc.get("rng_seed", 0))
    fit.save(out / "saddle_fit.json")
    log.info("rms beta=%.4f rad, r=%.4f rad/s", fit.rms_error[0], fit.rms_error[1])


def cmd_envelope(args, cfg, model: Model, out: Path):
    a = _analysis(cfg, args)
    ec = cfg.get("envelope", {})
    fit = _fit(cfg)
    box = _box(cfg)
    if args.table:
        vx_axis = ec.get("vx_axis") or [round(a["Vx"] * f, 6) for f in (0.85, 1.0, 1.15)]
        mu_axis = ec.get("mu_axis") or [a["mu"]]
        EnvelopeTable.build(vx_axis, mu_axis, box, fit, model).save(out / args.table)
    env = build_dual_envelope(a["Vx"], a["mu"], box, fit, model)
    write_json(env.to_json(), out / "envelope.json")
    export_polylines({"inner": env.inner, "outer": env.outer}, out / "envelope_polylines.csv")
    if args.trace and not env.void:
        # eta_max at a coarse sweep around the left saddle, for debugging the recoverability field
        sb, sr = env.saddles[1]  # left saddle
        rows = []
        for db in np.linspace(-0.2, 0.2, 5):
            for dr in np.linspace(-0.4, 0.4, 5):
                eta, d_star, m_star = eta_max((sb + db, sr + dr), a["Vx"], a["mu"], box, model)
                rows.append({"beta": sb + db, "r": sr + dr, "eta_max": eta, "delta": d_star, "dmz": m_star})
        write_csv(out / "eta_trace.csv", ("beta", "r", "eta_max", "delta", "dmz"), rows,
                  ("rad", "rad/s", "rad", "rad", "N*m"))


def _scenario_and_nmpc(cfg: dict, args):
    sc = Scenario.from_dict(cfg.get("scenario", {}))
    if getattr(args, "no_envelope", False):
        sc = Scenario.from_dict({**sc.to_dict(), "use_envelope": False})
    return sc, NMPCConfig.from_dict(cfg.get("nmpc", {}))


def cmd_simulate(args, cfg, model: Model, out: Path):
    sc, nmpc = _scenario_and_nmpc(cfg, args)
    trace = [] if args.trace else None
    simlog = run_closed_loop(sc, nmpc, model, fit=_fit(cfg), trace=trace)
    export_log(simlog, out / "log.csv")
    export_phase(simlog, out / "phase.csv")
    write_json(simlog.reference.to_dict(), out / "reference.json")
    m = compute_metrics(simlog)
    write_json({"status": simlog.status, **m.to_dict()}, out / "metrics.json")
    if trace:
        write_trace(trace, out / "sqp_trace.csv")
    log.info("%s: |e|max=%.4f m, steady errors V=%.4f beta=%.4f r=%.4f", simlog.status, m.peak_lateral_error,
             m.speed_error, m.sideslip_error, m.yaw_rate_error)
    return 0 if simlog.complete else 1


def cmd_metrics(args, cfg, model: Model, out: Path):
    sc, _ = _scenario_and_nmpc(cfg, args)
    ref = reference_for(sc, model)
    path = Path(args.log) if args.log else out / "log.csv"
    _, rows = read_csv(path)
    simlog = SimLog(rows=rows, reference=ref)
    expected = int(round(sc.duration / sc.dt)) + 1
    if len(rows) < expected:
        simlog.status = "failed: truncated log"
    m = compute_metrics(simlog, ref)
    write_json({"status": simlog.status, **m.to_dict()}, out / "metrics.json")


COMMANDS = {
    "equilibria": cmd_equilibria,
    "handling-diagram": cmd_handling_diagram,
    "fit-saddle": cmd_fit_saddle,
    "envelope": cmd_envelope,
    "simulate": cmd_simulate,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with vehicle/tire/nmpc/scenario sections")
    common.add_argument("--out", default="out", help="output directory (created if missing)")
    common.add_argument("--trace", action="store_true", help="write solver/debug traces next to the outputs")
    point = argparse.ArgumentParser(add_help=False)
    point.add_argument("--vx", type=float, help="longitudinal speed, m/s")
    point.add_argument("--mu", type=float, help="road adhesion coefficient")
    point.add_argument("--delta", type=float, help="front steer angle, rad")
    point.add_argument("--dmz", type=float, help="additional yaw moment, N*m")

    p = argparse.ArgumentParser(prog="dualdrift", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("equilibria", parents=[common, point], help="2DOF equilibria and their classification")
    sub.add_parser("handling-diagram", parents=[common, point], help="handling-diagram branches and intersections")
    fs = sub.add_parser("fit-saddle", parents=[common], help="locate saddles on a grid and fit the location model")
    fs.add_argument("--dataset", help="reuse a saved saddle dataset instead of recomputing it")
    ev = sub.add_parser("envelope", parents=[common, point], help="dual envelope at one condition (and optional table)")
    ev.add_argument("--table", metavar="FILE", help="also build the lookup table (axes from the envelope config "
                    "section) and write it to OUT/FILE")
    sm = sub.add_parser("simulate", parents=[common], help="closed-loop drift simulation")
    sm.add_argument("--no-envelope", action="store_true", help="drop both envelope constraint sets")
    mt = sub.add_parser("metrics", parents=[common], help="metrics from a saved time-history CSV")
    mt.add_argument("--log", help="time-history CSV (default: OUT/log.csv)")
    mt.add_argument("--no-envelope", action="store_true", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        model = load_model(cfg)
    except (OSError, ValueError, TypeError) as exc:
        print(f"dualdrift: bad config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            rc = COMMANDS[args.command](args, cfg, model, out)
        except DomainError as exc:
            print(f"dualdrift: {exc}", file=sys.stderr)
            return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
