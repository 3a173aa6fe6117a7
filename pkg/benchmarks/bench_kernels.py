"""Compiled vs NumPy kernel timings, with a parity check on every case.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--out bench.json]
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from dualdrift import kernels
from dualdrift.params import DEFAULT_MODEL


def cases(rng):
    cp = np.array(DEFAULT_MODEL.consts)
    tp = np.array(DEFAULT_MODEL.tire_consts)
    n = 20000
    alpha = rng.uniform(-0.6, 0.6, n)
    fz = rng.uniform(3000, 6000, n)
    mu = rng.uniform(0.3, 1.0, n)
    cmd = rng.uniform(-3000, 3000, n)
    beta = rng.uniform(-0.4, 0.4, n)
    r = rng.uniform(-1, 1, n)
    vx = rng.uniform(6, 20, n)
    delta = rng.uniform(-0.3, 0.3, n)
    dmz = rng.uniform(-3000, 3000, n)
    X = np.column_stack([rng.normal(0, 0.1, 2000), rng.normal(0, 0.1, 2000), rng.uniform(6, 10, 2000),
                         rng.uniform(-0.3, 0.1, 2000), rng.uniform(0.2, 0.8, 2000)])
    U = np.column_stack([rng.uniform(-0.2, 0.2, 2000), rng.uniform(0, 2000, 2000), rng.uniform(-2000, 2000, 2000)])
    x0 = np.tile([0.0, 0.0, 8.0, -0.08, 0.55], (7, 1))
    Useq = np.broadcast_to(U[:15], (7, 15, 3)).copy()
    theta = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    poly = np.column_stack([0.3 * np.cos(theta), 0.8 * np.sin(theta)])
    pts = np.column_stack([beta[:5000], r[:5000]])
    return {
        "lateral_force": lambda b: b.lateral_force(alpha, fz, mu, tp),
        "rear_forces": lambda b: b.rear_forces(alpha, cmd, fz, mu, tp),
        "field_2dof": lambda b: b.field_2dof(beta, r, vx, delta, mu, dmz, cp),
        "field_full": lambda b: b.field_full(X, U, 0.55, 0.07, cp),
        "rollout_7x15": lambda b: b.rollout(x0, Useq, 0.05, 0.55, 0.07, cp),
        "polygon_sdf": lambda b: b.polygon_sdf(pts, poly),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args(argv)
    if kernels.COMPILED is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    results = []
    print(f"{'kernel':<16}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}{'max rel diff':>15}")
    for name, fn in cases(np.random.default_rng(0)).items():
        ref = _flatten(fn(kernels.PYTHON))
        got = _flatten(fn(kernels.COMPILED))
        diff = float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))
        t = {}
        for label, b in (("numpy", kernels.PYTHON), ("compiled", kernels.COMPILED)):
            number = 5
            t[label] = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat)) / number * 1e3
        results.append({"kernel": name, "numpy_ms": t["numpy"], "compiled_ms": t["compiled"],
                        "speedup": t["numpy"] / t["compiled"], "max_rel_diff": diff})
        print(f"{name:<16}{t['numpy']:>12.3f}{t['compiled']:>14.3f}{t['numpy'] / t['compiled']:>10.1f}{diff:>15.2e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
