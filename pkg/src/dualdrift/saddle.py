"""Saddle-point dataset over an operating grid and the parametric location model.

Model (left saddle s1 has r > 0, right saddle s2 has r < 0)::

    r_s1,2    = (+-mu g / Vx + f1) f3
    beta_s1,2 = (-l_f r_s / Vx + (-+|a_sat| + delta) f2) f4
    a_sat     = p1 mu + p2
    f1 = p3 delta / mu
    f2 = p4 + p5 delta mu + p6 Vx
    f3 = 1 - (dMz / (mu p7 (1 - (p8 Vx + p9))))^2
    f4 = 1 - (dMz / (mu p10 (1 - (p11 Vx + p12))))^2

(p7, p8, p9) only enter through ``p7 (1 - p9)`` and ``p7 p8``; the fit
holds p9 and p12 at fixed gauge values (default 0) and reports p7, p10 > 0.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .equilibrium import Case, find_equilibria_batch
from .params import DEFAULT_MODEL, DomainError, Model
from .tire import saturation_angle

KMH = 1 / 3.6
DEFAULT_DOMAIN = {"mu": (0.3, 1.0), "Vx": (20 * KMH, 90 * KMH), "delta": (-0.5, 0.5), "dMz": (-3500.0, 3500.0)}
# typical magnitudes, used to scale the LM variables
P_SCALE = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.01, 1e4, 0.01, 1.0, 1e4, 0.01, 1.0])
P_GUESS = np.array([0.2, 0.0, 0.3, 1.0, 0.0, 0.0, 4000.0, 0.0, 0.0, 4000.0, 0.0, 0.0])
GAUGE = (8, 11)  # zero-based indices of p9, p12
N_SEEDS = 10
MAX_ITER = 200
DOMAIN_SLACK = 1e-9

COLUMNS = ("mu", "Vx", "delta", "dMz", "side", "beta_s", "r_s")


@dataclass
class SaddleDataset:
    """Rows of located saddles plus the (mu, alpha_f_sat) calibration table.

    ``side`` is +1 for the left saddle (r > 0) and -1 for the right one.
    """

    rows: np.ndarray  # (n, 7) with COLUMNS
    sat_table: np.ndarray  # (k, 2): mu, alpha_f_sat
    l_f: float = DEFAULT_MODEL.vehicle.l_f
    g: float = DEFAULT_MODEL.vehicle.g
    domain: dict = field(default_factory=lambda: dict(DEFAULT_DOMAIN))
    n_cells: int = 0

    def __len__(self):
        return len(self.rows)

    def to_json(self) -> dict:
        return {
            "units": {"mu": "-", "Vx": "m/s", "delta": "rad", "dMz": "N m", "beta_s": "rad", "r_s": "rad/s", "side": "+1 left (r>0), -1 right"},
            "columns": list(COLUMNS),
            "rows": self.rows.tolist(),
            "sat_table": self.sat_table.tolist(),
            "l_f": self.l_f,
            "g": self.g,
            "domain": {k: list(v) for k, v in self.domain.items()},
            "n_cells": self.n_cells,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SaddleDataset":
        return cls(
            rows=np.asarray(d["rows"], dtype=float).reshape(-1, len(COLUMNS)),
            sat_table=np.asarray(d["sat_table"], dtype=float).reshape(-1, 2),
            l_f=d["l_f"], g=d["g"],
            domain={k: tuple(v) for k, v in d["domain"].items()},
            n_cells=d.get("n_cells", 0),
        )


@dataclass
class SaddleFit:
    p: np.ndarray
    fit_domain: dict
    rms_error: tuple  # (beta rad, r rad/s)
    coord_range: tuple = (math.nan, math.nan)
    l_f: float = DEFAULT_MODEL.vehicle.l_f
    g: float = DEFAULT_MODEL.vehicle.g
    seed_costs: list = field(default_factory=list)
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "p": [float(x) for x in self.p],
            "fit_domain": {k: list(v) for k, v in self.fit_domain.items()},
            "rms_error": {"beta_rad": self.rms_error[0], "r_rad_s": self.rms_error[1]},
            "coord_range": {"beta_rad": self.coord_range[0], "r_rad_s": self.coord_range[1]},
            "l_f": self.l_f,
            "g": self.g,
            "seed_costs": [float(c) for c in self.seed_costs],
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SaddleFit":
        return cls(
            p=np.asarray(d["p"], dtype=float),
            fit_domain={k: tuple(v) for k, v in d["fit_domain"].items()},
            rms_error=(d["rms_error"]["beta_rad"], d["rms_error"]["r_rad_s"]),
            coord_range=(d["coord_range"]["beta_rad"], d["coord_range"]["r_rad_s"]),
            l_f=d["l_f"], g=d["g"],
            seed_costs=list(d.get("seed_costs", [])),
            converged=d.get("converged", True),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SaddleFit":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- model -------------------------------------------------------------------

def model_terms(p, mu, Vx, delta, dMz):
    """(a_sat, f1, f2, f3, f4) of the location model; broadcasts."""
    p = np.asarray(p, dtype=float)
    a_sat = p[0] * mu + p[1]
    f1 = p[2] * delta / mu
    f2 = p[3] + p[4] * delta * mu + p[5] * Vx
    f3 = 1.0 - (dMz / (mu * p[6] * (1.0 - (p[7] * Vx + p[8])))) ** 2
    f4 = 1.0 - (dMz / (mu * p[9] * (1.0 - (p[10] * Vx + p[11])))) ** 2
    return a_sat, f1, f2, f3, f4


def saddle_formula(p, mu, Vx, delta, dMz, side, l_f, g):
    """(beta_s, r_s) for ``side`` = +1 (left) or -1 (right); broadcasts."""
    a_sat, f1, f2, f3, f4 = model_terms(p, mu, Vx, delta, dMz)
    r = (side * mu * g / Vx + f1) * f3
    beta = (-l_f * r / Vx + (-side * np.abs(a_sat) + delta) * f2) * f4
    return beta, r


def _in_domain(domain, **vals):
    for k, v in vals.items():
        lo, hi = domain[k]
        if not (lo - DOMAIN_SLACK * max(1.0, abs(lo)) <= v <= hi + DOMAIN_SLACK * max(1.0, abs(hi))):
            return False
    return True


def eval_saddle_model(fit: SaddleFit, mu, Vx, delta, dMz):
    """(beta_s1, r_s1, beta_s2, r_s2, exists_s1, exists_s2) at one operating point."""
    if not _in_domain(fit.fit_domain, mu=mu, Vx=Vx, delta=delta, dMz=dMz):
        raise DomainError(f"query (mu={mu}, Vx={Vx}, delta={delta}, dMz={dMz}) outside the fit domain")
    _, _, _, f3, f4 = model_terms(fit.p, mu, Vx, delta, dMz)
    exists = bool(f3 > 0 and f4 > 0)
    b1, r1 = saddle_formula(fit.p, mu, Vx, delta, dMz, 1.0, fit.l_f, fit.g)
    b2, r2 = saddle_formula(fit.p, mu, Vx, delta, dMz, -1.0, fit.l_f, fit.g)
    return float(b1), float(r1), float(b2), float(r2), exists, exists


# -- dataset -----------------------------------------------------------------

def default_grid(n_mu=5, n_vx=5, n_delta=10, n_dmz=8, domain=None):
    d = domain or DEFAULT_DOMAIN
    axes = [np.linspace(*d["mu"], n_mu), np.linspace(*d["Vx"], n_vx), np.linspace(*d["delta"], n_delta), np.linspace(*d["dMz"], n_dmz)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in g])


def extract_saddles(eqs) -> dict:
    """Left/right Case-3 roots of one cell keyed by side (+1, -1)."""
    out = {}
    for e in eqs:
        if e.case is not Case.CASE3:
            continue
        side = 1.0 if e.r > 0 else -1.0
        # keep the one furthest from the origin if a side repeats
        if side not in out or abs(e.r) > abs(out[side].r):
            out[side] = e
    return out


def locate_saddles_grid(grid=None, model: Model = DEFAULT_MODEL, domain=None, n_sat: int = 15) -> SaddleDataset:
    """Numerically locate saddles on every (mu, Vx, delta, dMz) cell."""
    domain = dict(domain or DEFAULT_DOMAIN)
    grid = default_grid(domain=domain) if grid is None else np.asarray(grid, dtype=float).reshape(-1, 4)
    conds = grid[:, [1, 0, 2, 3]]  # find_equilibria_batch wants (Vx, mu, delta, dMz)
    results = find_equilibria_batch(conds, model)
    rows = []
    for (mu, vx, de, dm), eqs in zip(grid, results):
        for side, e in sorted(extract_saddles(eqs).items(), reverse=True):
            rows.append((mu, vx, de, dm, side, e.beta, e.r))
    mus = np.linspace(*domain["mu"], n_sat)
    fzf = model.loads[0]
    sat = np.array([(m, saturation_angle(m, fzf, model.tire)) for m in mus])
    return SaddleDataset(
        rows=np.array(rows, dtype=float).reshape(-1, len(COLUMNS)), sat_table=sat,
        l_f=model.vehicle.l_f, g=model.vehicle.g, domain=domain, n_cells=len(grid),
    )


# -- fitting -----------------------------------------------------------------

def _lm(fun, q0, max_iter=MAX_ITER, h=1e-7):
    """Levenberg-Marquardt with a central-difference Jacobian.

    Returns (q, cost, converged).
    """
    q = np.array(q0, dtype=float)
    res = fun(q)
    cost = 0.5 * float(res @ res)
    lam = 1e-3
    n = q.size
    for _ in range(max_iter):
        J = np.empty((res.size, n))
        for j in range(n):
            dq = np.zeros(n)
            dq[j] = h * max(1.0, abs(q[j]))
            J[:, j] = (fun(q + dq) - fun(q - dq)) / (2 * dq[j])
        gvec = J.T @ res
        if np.max(np.abs(gvec)) <= 1e-12 * max(1.0, cost):
            return q, cost, True
        A = J.T @ J
        dA = np.diag(np.diag(A)).copy()
        dA[dA == 0] = 1.0
        improved = False
        for _t in range(30):
            try:
                step = np.linalg.solve(A + lam * dA, -gvec)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            qn = q + step
            rn = fun(qn)
            cn = 0.5 * float(rn @ rn) if np.all(np.isfinite(rn)) else np.inf
            if cn < cost:
                rel = (cost - cn) / max(cost, 1e-300)
                q, res, cost = qn, rn, cn
                lam = max(lam / 3, 1e-12)
                improved = True
                if rel < 1e-15 or np.max(np.abs(step)) < 1e-13 * (1 + np.max(np.abs(q))):
                    return q, cost, True
                break
            lam *= 4
        if not improved:
            return q, cost, True
    return q, cost, False


def fit_saddle_model(data: SaddleDataset, seeds: int = N_SEEDS, rng_seed: int = 0, gauge=(0.0, 0.0)) -> SaddleFit:
    """Fit p1..p12 to a saddle dataset.

    p1, p2 by linear least squares on the saturation table; p3..p8, p10, p11
    by multi-start Levenberg-Marquardt on residuals normalised by the
    dataset's standard deviation of each coordinate.  p9, p12 are held at
    ``gauge``.
    """
    rows = data.rows
    if len(rows) < 12:
        raise ValueError("dataset too small to fit")
    mu, vx, de, dm, side, b_obs, r_obs = rows.T
    A = np.column_stack([data.sat_table[:, 0], np.ones(len(data.sat_table))])
    p12, *_ = np.linalg.lstsq(A, data.sat_table[:, 1], rcond=None)
    sb = float(np.std(b_obs)) or 1.0
    sr = float(np.std(r_obs)) or 1.0
    free = [i for i in range(2, 12) if i not in GAUGE]

    def full(q):
        p = np.empty(12)
        p[:2] = p12
        p[GAUGE[0]], p[GAUGE[1]] = gauge
        p[free] = q * P_SCALE[free]
        return p

    def resid(q):
        bm, rm = saddle_formula(full(q), mu, vx, de, dm, side, data.l_f, data.g)
        return np.concatenate([(bm - b_obs) / sb, (rm - r_obs) / sr])

    rng = np.random.default_rng(rng_seed)
    base = P_GUESS[free] / P_SCALE[free]
    best = None
    costs = []
    all_conv = True
    for k in range(seeds):
        q0 = base if k == 0 else base + rng.normal(0.0, 0.5, base.size)
        # keep the f3/f4 scales away from the singular zero
        q0[free.index(6)] = abs(q0[free.index(6)]) + 0.05
        q0[free.index(9)] = abs(q0[free.index(9)]) + 0.05
        q, cost, ok = _lm(resid, q0)
        costs.append(cost)
        if best is None or cost < best[1]:
            best = (q, cost, ok)
    q, cost, ok = best
    if not ok:
        warnings.warn("saddle fit hit the iteration cap; returning best-so-far", RuntimeWarning, stacklevel=2)
    p = full(q)
    p[6], p[9] = abs(p[6]), abs(p[9])
    bm, rm = saddle_formula(p, mu, vx, de, dm, side, data.l_f, data.g)
    rms = (float(np.sqrt(np.mean((bm - b_obs) ** 2))), float(np.sqrt(np.mean((rm - r_obs) ** 2))))
    rng_ = (float(np.ptp(b_obs)), float(np.ptp(r_obs)))
    return SaddleFit(p=p, fit_domain=dict(data.domain), rms_error=rms, coord_range=rng_, l_f=data.l_f, g=data.g,
                     seed_costs=costs, converged=ok)


def synthetic_dataset(p, grid=None, l_f=DEFAULT_MODEL.vehicle.l_f, g=DEFAULT_MODEL.vehicle.g, domain=None) -> SaddleDataset:
    """Dataset generated from the model itself (for round-trip checks)."""
    domain = dict(domain or DEFAULT_DOMAIN)
    grid = default_grid(domain=domain) if grid is None else np.asarray(grid, dtype=float)
    rows = []
    for side in (1.0, -1.0):
        b, r = saddle_formula(p, grid[:, 0], grid[:, 1], grid[:, 2], grid[:, 3], side, l_f, g)
        rows.append(np.column_stack([grid, np.full(len(grid), side), b, r]))
    mus = np.linspace(*domain["mu"], 15)
    sat = np.column_stack([mus, p[0] * mus + p[1]])
    return SaddleDataset(rows=np.vstack(rows), sat_table=sat, l_f=l_f, g=g, domain=domain, n_cells=len(grid))


def save_dataset(data: SaddleDataset, path):
    with open(path, "w") as fh:
        json.dump(data.to_json(), fh, indent=1, sort_keys=True)


def load_dataset(path) -> SaddleDataset:
    with open(path) as fh:
        return SaddleDataset.from_json(json.load(fh))
