"""Dual drift envelope in the (beta, r) plane under bounded inputs.

The left branch (drift with r > 0) is built directly; the right branch is
its point reflection computed on the mirrored input box, which is exact
because the 2DOF field is odd in (beta, r, delta, dMz).

Outer region: front tyre unsaturated, and either below the maximum
steady-state yaw rate or in a recoverable extension around a saddle.
Inner region: outer's front strip, rear tyre unsaturated and below the
yaw-rate boundary.
"""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon, box as shp_box
from skimage.measure import find_contours

from . import kernels
from .params import DEFAULT_MODEL, VX_MIN, DomainError, Model
from .saddle import SaddleFit, eval_saddle_model, model_terms
from .tire import saturation_angle

WINDOW = (0.25, 0.5)  # half-widths (rad, rad/s) of the scan window around a saddle
GRID_N = 120
DELTA_GRID = 201
GOLDEN_ITERS = 40
SIMPLIFY = 0.25  # fraction of a grid cell
INVPHI = (math.sqrt(5) - 1) / 2
ETA_WINDOW = np.pi


@dataclass(frozen=True)
class InputBox:
    delta_min: float = -0.5
    delta_max: float = 0.5
    dmz_min: float = -3500.0
    dmz_max: float = 3500.0

    def __post_init__(self):
        if not (self.delta_min < self.delta_max and self.dmz_min < self.dmz_max):
            raise ValueError("input box needs min < max on both axes")

    def mirrored(self) -> "InputBox":
        return InputBox(-self.delta_max, -self.delta_min, -self.dmz_max, -self.dmz_min)

    def contains(self, other: "InputBox") -> bool:
        return (self.delta_min <= other.delta_min and other.delta_max <= self.delta_max
                and self.dmz_min <= other.dmz_min and other.dmz_max <= self.dmz_max)

    def to_dict(self) -> dict:
        return {"delta_min": self.delta_min, "delta_max": self.delta_max, "dmz_min": self.dmz_min, "dmz_max": self.dmz_max}

    @classmethod
    def from_dict(cls, d) -> "InputBox":
        return cls(**d)


class BoundaryKind(str, enum.Enum):
    FRONT_SAT = "FrontSat"
    REAR_SAT = "RearSat"
    YAW_RATE_MAX = "YawRateMax"
    RECOVERABLE = "Recoverable"


@dataclass
class EnvelopeBoundary:
    """A boundary curve.

    Lines are stored as ``beta = slope * r + intercept`` (front/rear) or
    ``r = value`` (yaw rate).  ``sense`` names the admissible side:
    "ge"/"le" compare beta (or r for the yaw line) against the curve.
    ``side`` is +1 for the left-saddle branch and -1 for its mirror.
    """

    kind: BoundaryKind
    polyline: np.ndarray
    sense: str
    side: int = 1
    slope: float = math.nan
    intercept: float = math.nan
    value: float = math.nan
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "sense": self.sense, "side": self.side, "polyline": np.asarray(self.polyline).tolist(),
                "slope": _num(self.slope), "intercept": _num(self.intercept), "value": _num(self.value)}


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _check(Vx, mu):
    if not Vx > VX_MIN:
        raise DomainError("Vx below the kinematic floor")
    if not 0 < mu <= 1.2:
        raise DomainError("mu must lie in (0, 1.2]")


# -- straight-line boundaries ------------------------------------------------

def front_sat_boundary(Vx, mu, box: InputBox = InputBox(), model: Model = DEFAULT_MODEL, side: int = 1,
                       r_span=(-2.0, 2.0)) -> EnvelopeBoundary:
    """Front-tyre saturation line for the left branch (mirrored for ``side=-1``).

    Left: ``beta >= -(l_f/Vx) r + delta_min - a_sat``.
    Right: ``beta <= -(l_f/Vx) r + delta_max + a_sat``.
    """
    _check(Vx, mu)
    a_sat = saturation_angle(mu, model.loads[0], model.tire)
    slope = -model.vehicle.l_f / Vx
    if side == 1:
        icpt, sense = box.delta_min - a_sat, "ge"
    else:
        icpt, sense = box.delta_max + a_sat, "le"
    rs = np.array(r_span, dtype=float)
    return EnvelopeBoundary(BoundaryKind.FRONT_SAT, np.column_stack([slope * rs + icpt, rs]), sense, side, slope, icpt,
                            extra={"alpha_sat": a_sat})


def rear_sat_boundary(Vx, mu, model: Model = DEFAULT_MODEL, side: int = 1, r_span=(-2.0, 2.0)) -> EnvelopeBoundary:
    """Rear-tyre saturation line; the unsaturated side is admissible for the inner region.

    Left: ``beta >= (l_r/Vx) r - a_sat`` (crossing it saturates the rear in a left drift).
    Right: ``beta <= (l_r/Vx) r + a_sat``.
    """
    _check(Vx, mu)
    a_sat = saturation_angle(mu, model.loads[1], model.tire)
    slope = model.vehicle.l_r / Vx
    icpt, sense = (-a_sat, "ge") if side == 1 else (a_sat, "le")
    rs = np.array(r_span, dtype=float)
    return EnvelopeBoundary(BoundaryKind.REAR_SAT, np.column_stack([slope * rs + icpt, rs]), sense, side, slope, icpt,
                            extra={"alpha_sat": a_sat})


def _yaw_argmax(Vx, mu, box: InputBox, fit: SaddleFit):
    """Inputs in ``box`` maximising the fitted left-saddle yaw rate, and that rate.

    The expression is linear in delta (via f1) and f3 peaks where dMz is
    closest to zero, so the maximiser is an end of the delta range paired
    with the dMz value of smallest magnitude.
    """
    dmz = min(max(0.0, box.dmz_min), box.dmz_max)
    best = None
    for d in (box.delta_min, box.delta_max):
        _, f1, _, f3, _ = model_terms(fit.p, mu, Vx, d, dmz)
        r = (mu * fit.g / Vx + f1) * f3
        if best is None or r > best[0]:
            best = (float(r), d, dmz, float(f3))
    return best


def yaw_rate_boundary(Vx, mu, box: InputBox, fit: SaddleFit, side: int = 1, beta_span=(-1.0, 1.0)) -> EnvelopeBoundary:
    """Maximum steady-state yaw rate over the input box (``r <= value`` on the left branch).

    A non-positive f3 at the maximiser means no saddle exists; the boundary
    is returned with ``extra['void'] = True``.
    """
    _check(Vx, mu)
    b = box if side == 1 else box.mirrored()
    r, d, m, f3 = _yaw_argmax(Vx, mu, b, fit)
    value = r if side == 1 else -r
    bs = np.array(beta_span, dtype=float)
    return EnvelopeBoundary(BoundaryKind.YAW_RATE_MAX, np.column_stack([bs, np.full(2, value)]), "le" if side == 1 else "ge",
                            side, value=value, extra={"delta": d * side, "dMz": m * side, "void": not (f3 > 0 and r > 0)})


# -- recoverability index --------------------------------------------------

def eta_a(state, saddle):
    """Angle of the ray from the saddle to the state, in (-pi, pi]."""
    b, r = np.asarray(state, dtype=float)[..., 0], np.asarray(state, dtype=float)[..., 1]
    db, dr = b - saddle[0], r - saddle[1]
    if np.any((db == 0) & (dr == 0)):
        raise DomainError("state coincides with the saddle")
    out = np.arctan2(dr, db)
    return float(out) if np.ndim(out) == 0 else out


def _rdot_extreme(beta, r, Vx, mu, box: InputBox, model: Model, sense: int = 1):
    """Minimum (``sense=1``) or maximum (``sense=-1``) of r_dot over the box per state.

    dMz enters linearly, so it sits at the matching bound; delta is located
    on a uniform grid and refined by golden-section search in the bracketing
    cell.  Returns (r_dot, beta_dot at the optimiser, delta*, dMz*).
    """
    v = model.vehicle
    tp = model.tire_consts
    fzf, fzr = model.loads
    beta = np.asarray(beta, dtype=float)
    r = np.asarray(r, dtype=float)
    shape = np.broadcast(beta, r).shape
    b = np.broadcast_to(beta, shape).ravel()
    rr = np.broadcast_to(r, shape).ravel()
    base = b + v.l_f * rr / Vx

    def G(delta):
        return sense * kernels.ACTIVE.lateral_force(base[..., None] - delta if np.ndim(delta) == 2 else base - delta,
                                                    fzf, mu, tp)

    grid = np.linspace(box.delta_min, box.delta_max, DELTA_GRID)
    k = np.argmin(G(grid[None, :]), axis=1)
    h = grid[1] - grid[0]
    lo = np.maximum(grid[k] - h, box.delta_min)
    hi = np.minimum(grid[k] + h, box.delta_max)
    # golden-section on sense * F_yf(delta) inside [lo, hi]
    x1 = hi - INVPHI * (hi - lo)
    x2 = lo + INVPHI * (hi - lo)
    f1, f2 = G(x1), G(x2)
    for _ in range(GOLDEN_ITERS):
        left = f1 < f2  # minimum lies in [lo, x2]
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1n = np.where(left, hi - INVPHI * (hi - lo), x2)
        x2n = np.where(left, x1, lo + INVPHI * (hi - lo))
        fe = G(np.where(left, x1n, x2n))
        f1, f2 = np.where(left, fe, f2), np.where(left, f1, fe)
        x1, x2 = x1n, x2n
    cand = np.column_stack([0.5 * (lo + hi), grid[k]])
    Gc = G(cand)
    j = np.argmin(Gc, axis=1)
    idx = np.arange(len(b))
    dstar = cand[idx, j]
    ff = sense * Gc[idx, j]
    fr = kernels.ACTIVE.lateral_force(b - v.l_r * rr / Vx, fzr, mu, tp)
    dmz = box.dmz_min if sense == 1 else box.dmz_max
    rdot = (v.l_f * ff - v.l_r * fr + dmz) / v.Iz
    bdot = (ff + fr) / (v.m * Vx) - rr
    return rdot.reshape(shape), bdot.reshape(shape), dstar.reshape(shape), np.full(shape, dmz)


def eta_max(state, Vx, mu, box: InputBox = InputBox(), model: Model = DEFAULT_MODEL, side: int = 1):
    """Largest attainable angle of the reversed state derivative.

    For the left branch r_dot is minimised over the box and the angle is
    ``atan2(-r_dot_min, -beta_dot)``, which equals ``arctan(r_dot_min/beta_dot)``
    in the quadrant where both derivatives are negative.  The right branch
    uses the point reflection.  Returns (eta, delta*, dMz*).
    """
    _check(Vx, mu)
    s = np.asarray(state, dtype=float)
    b, r = s[..., 0], s[..., 1]
    if side == 1:
        rd, bd, d, m = _rdot_extreme(b, r, Vx, mu, box, model)
        eta = np.arctan2(-rd, -bd)
    else:
        rd, bd, d, m = _rdot_extreme(-b, -r, Vx, mu, box.mirrored(), model)
        eta = np.arctan2(rd, bd)
        d, m = -d, -m
    if np.ndim(eta) == 0:
        return float(eta), float(d), float(m)
    return eta, d, m


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def recoverability_margin(state, saddle, Vx, mu, box: InputBox, model: Model = DEFAULT_MODEL, side: int = 1):
    """Continuous margin, >= 0 exactly when the state counts as recoverable.

    With ``w = wrap(eta_max - eta_a)`` the test is ``0 <= w < ETA_WINDOW`` and
    the margin ``min(w, ETA_WINDOW - w)``.  The saddle itself gets margin pi/4.
    """
    s = np.asarray(state, dtype=float)
    b, r = s[..., 0], s[..., 1]
    db, dr = b - saddle[0], r - saddle[1]
    at = (db == 0) & (dr == 0)
    ea = np.arctan2(dr, db)
    em, _, _ = eta_max(s, Vx, mu, box, model, side)
    w = _wrap(np.asarray(em) - ea)
    return np.where(at, np.pi / 4, np.minimum(w, ETA_WINDOW - w))


def is_recoverable(state, saddle, Vx, mu, box: InputBox = InputBox(), model: Model = DEFAULT_MODEL, side: int = 1):
    return recoverability_margin(state, saddle, Vx, mu, box, model, side) >= 0


# -- region extraction -----------------------------------------------------

def _contour_polygons(field_, b_axis, r_axis):
    """Even-odd union of the closed 0-level contours of ``field_[i_r, j_beta]``."""
    pad = np.pad(field_, 1, constant_values=-1.0)
    db = b_axis[1] - b_axis[0]
    dr = r_axis[1] - r_axis[0]
    geom = None
    for c in find_contours(pad, 0.0):
        if len(c) < 4:
            continue
        rr = r_axis[0] + (c[:, 0] - 1) * dr
        bb = b_axis[0] + (c[:, 1] - 1) * db
        poly = Polygon(np.column_stack([bb, rr])).buffer(0)
        if poly.is_empty:
            continue
        geom = poly if geom is None else geom.symmetric_difference(poly)
    return geom


def recoverable_region(Vx, mu, box: InputBox, saddle, model: Model = DEFAULT_MODEL, side: int = 1,
                       r_limit: float | None = None, n: int = GRID_N, window=WINDOW):
    """Recoverable set around ``saddle`` as an :class:`EnvelopeBoundary`.

    States on the admissible side of the yaw-rate line ``r_limit`` count as
    recoverable (they are already inside the steady-state region); the scan
    then keeps only what the angle test certifies beyond it.  Returns the
    boundary (polyline = exterior ring of the largest piece) and the shapely
    geometry in ``extra['geometry']``.
    """
    _check(Vx, mu)
    b_axis = np.linspace(saddle[0] - window[0], saddle[0] + window[0], n)
    r_axis = np.linspace(saddle[1] - window[1], saddle[1] + window[1], n)
    B, R = np.meshgrid(b_axis, r_axis)
    m = recoverability_margin(np.stack([B, R], axis=-1), saddle, Vx, mu, box, model, side)
    if r_limit is not None:
        below = (R <= r_limit) if side == 1 else (R >= r_limit)
        m = np.where(below, np.maximum(m, 1.0), m)
    geom = _contour_polygons(m, b_axis, r_axis)
    cell = max(b_axis[1] - b_axis[0], r_axis[1] - r_axis[0])
    if geom is None or geom.is_empty:
        return EnvelopeBoundary(BoundaryKind.RECOVERABLE, np.empty((0, 2)), "inside", side,
                                extra={"geometry": None, "empty": True, "cell": cell, "margin": m, "axes": (b_axis, r_axis)})
    geom = geom.simplify(SIMPLIFY * cell)
    parts = list(getattr(geom, "geoms", [geom]))
    biggest = max(parts, key=lambda g: g.area)
    return EnvelopeBoundary(BoundaryKind.RECOVERABLE, np.asarray(biggest.exterior.coords), "inside", side,
                            extra={"geometry": geom, "empty": False, "cell": cell, "margin": m, "axes": (b_axis, r_axis)})


# -- assembly ----------------------------------------------------------------

def _rings(geom) -> list[np.ndarray]:
    if geom is None or geom.is_empty:
        return []
    out = []
    for g in getattr(geom, "geoms", [geom]):
        if g.geom_type != "Polygon" or g.is_empty:
            continue
        out.append(np.asarray(g.exterior.coords)[:-1])
        out.extend(np.asarray(i.coords)[:-1] for i in g.interiors)
    return out


def rings_sdf(points, rings) -> np.ndarray:
    """Signed distance to a set of rings (positive inside, even-odd)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if not rings:
        return np.full(len(p), -np.inf)
    dist = np.full(len(p), np.inf)
    inside = np.zeros(len(p), dtype=bool)
    for ring in rings:
        d = kernels.ACTIVE.polygon_sdf(p, ring)
        inside ^= d > 0
        dist = np.minimum(dist, np.abs(d))
    return np.where(inside, dist, -dist)


@dataclass
class DualEnvelope:
    Vx: float
    mu: float
    box: InputBox
    inner: list  # rings
    outer: list  # rings
    saddles: dict  # side -> (beta, r)
    boundaries: list = field(default_factory=list)
    void: bool = False

    def distances(self, beta, r):
        """(d_inner, d_outer): positive outside inner, positive inside outer."""
        pts = np.column_stack([np.ravel(beta), np.ravel(r)])
        shape = np.broadcast(beta, r).shape
        di = -rings_sdf(pts, self.inner)
        do = rings_sdf(pts, self.outer)
        if shape == ():
            return float(di[0]), float(do[0])
        return di.reshape(shape), do.reshape(shape)

    def polygon(self, which: str):
        rings = self.outer if which == "outer" else self.inner
        geom = None
        for ring in rings:
            p = Polygon(ring)
            geom = p if geom is None else geom.symmetric_difference(p)
        return geom

    def area(self, which: str = "outer") -> float:
        g = self.polygon(which)
        return 0.0 if g is None else float(g.area)

    def to_json(self) -> dict:
        return {
            "Vx": self.Vx, "mu": self.mu, "box": self.box.to_dict(), "void": self.void,
            "inner": [r.tolist() for r in self.inner], "outer": [r.tolist() for r in self.outer],
            "saddles": {str(k): list(v) for k, v in self.saddles.items()},
            "boundaries": [b.to_json() for b in self.boundaries],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DualEnvelope":
        return cls(
            Vx=d["Vx"], mu=d["mu"], box=InputBox.from_dict(d["box"]), void=d["void"],
            inner=[np.asarray(r, dtype=float) for r in d["inner"]], outer=[np.asarray(r, dtype=float) for r in d["outer"]],
            saddles={int(k): tuple(v) for k, v in d["saddles"].items()},
        )


def anchor_saddle(Vx, mu, box: InputBox, fit: SaddleFit):
    """Left saddle from the location model with no steer or yaw moment.

    This is the open-loop drift equilibrium the recoverability test steers
    towards; zero inputs are clipped into ``box`` when it excludes them.
    """
    d = min(max(0.0, box.delta_min), box.delta_max)
    m = min(max(0.0, box.dmz_min), box.dmz_max)
    b1, r1, _, _, ok, _ = eval_saddle_model(fit, mu, Vx, d, m)
    return (b1, r1), ok


def _half_plane(slope, icpt, sense, span):
    """Polygon of ``beta >= / <= slope*r + icpt`` clipped to ``span``=(bmin, bmax, rmin, rmax)."""
    bmin, bmax, rmin, rmax = span
    l0, l1 = slope * rmin + icpt, slope * rmax + icpt
    if sense == "ge":
        pts = [(l0, rmin), (bmax, rmin), (bmax, rmax), (l1, rmax)]
    else:
        pts = [(bmin, rmin), (l0, rmin), (l1, rmax), (bmin, rmax)]
    return Polygon(pts).buffer(0)


def build_dual_envelope(Vx, mu, box: InputBox = InputBox(), fit: SaddleFit | None = None, model: Model = DEFAULT_MODEL,
                        n: int = GRID_N) -> DualEnvelope:
    Vx, mu = float(Vx), float(mu)
    _check(Vx, mu)
    if fit is None:
        raise ValueError("a saddle fit is required")
    yl = yaw_rate_boundary(Vx, mu, box, fit, 1)
    yr = yaw_rate_boundary(Vx, mu, box, fit, -1)
    fl = front_sat_boundary(Vx, mu, box, model, 1)
    fr = front_sat_boundary(Vx, mu, box, model, -1)
    rl = rear_sat_boundary(Vx, mu, model, 1)
    rr_ = rear_sat_boundary(Vx, mu, model, -1)
    bounds = [fl, fr, rl, rr_, yl, yr]
    if yl.extra["void"] or yr.extra["void"]:
        return DualEnvelope(Vx, mu, box, [], [], {}, bounds, void=True)
    sl, _ = anchor_saddle(Vx, mu, box, fit)
    sr_m, _ = anchor_saddle(Vx, mu, box.mirrored(), fit)
    sr = (-sr_m[0], -sr_m[1])
    rtop, rbot = yl.value, yr.value
    span = (-3.0, 3.0, min(rbot, sr[1]) - WINDOW[1] - 0.1, max(rtop, sl[1]) + WINDOW[1] + 0.1)
    strip = _half_plane(fl.slope, fl.intercept, "ge", span).intersection(_half_plane(fr.slope, fr.intercept, "le", span))
    band = shp_box(span[0], rbot, span[1], rtop)
    ext_l = recoverable_region(Vx, mu, box, sl, model, 1, rtop, n)
    ext_r = recoverable_region(Vx, mu, box, sr, model, -1, rbot, n)
    bounds += [ext_l, ext_r]
    reach = band
    for e in (ext_l, ext_r):
        g = e.extra.get("geometry")
        if g is not None:
            reach = reach.union(g)
    outer = strip.intersection(reach)
    rear = _half_plane(rl.slope, rl.intercept, "ge", span).intersection(_half_plane(rr_.slope, rr_.intercept, "le", span))
    inner = strip.intersection(rear).intersection(band)
    outer = shapely.make_valid(outer)
    inner = shapely.make_valid(inner)
    for e in (ext_l, ext_r):
        e.extra.pop("margin", None)
    return DualEnvelope(Vx, mu, box, _rings(inner), _rings(outer), {1: tuple(sl), -1: tuple(sr)}, bounds)


# -- lookup table ------------------------------------------------------------

@dataclass
class EnvelopeTable:
    """Envelopes on a (Vx, mu) grid; queries blend neighbouring cells bilinearly.

    Blending acts on the signed distances, so a query at a node reproduces
    that node's envelope exactly and the result is continuous across cells.
    """

    vx_axis: np.ndarray
    mu_axis: np.ndarray
    box: InputBox
    cells: list  # row-major [i_vx][i_mu] -> DualEnvelope
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vx_axis = np.asarray(self.vx_axis, dtype=float)
        self.mu_axis = np.asarray(self.mu_axis, dtype=float)
        for ax in (self.vx_axis, self.mu_axis):
            if ax.ndim != 1 or len(ax) < 1 or np.any(np.diff(ax) <= 0):
                raise ValueError("table axes must be strictly increasing")

    @classmethod
    def build(cls, vx_axis, mu_axis, box: InputBox, fit: SaddleFit, model: Model = DEFAULT_MODEL, n: int = GRID_N):
        cells = [[build_dual_envelope(v, m, box, fit, model, n) for m in mu_axis] for v in vx_axis]
        return cls(np.asarray(vx_axis, float), np.asarray(mu_axis, float), box, cells,
                   {"grid_n": n, "fit_p": [float(x) for x in fit.p]})

    def _locate(self, x, axis):
        if len(axis) == 1:
            return 0, 0, 0.0, x != axis[0]
        clamped = x < axis[0] or x > axis[-1]
        xc = min(max(x, axis[0]), axis[-1])
        i = int(np.clip(np.searchsorted(axis, xc) - 1, 0, len(axis) - 2))
        w = (xc - axis[i]) / (axis[i + 1] - axis[i])
        return i, i + 1, float(w), clamped

    def query(self, Vx, mu, beta, r):
        """(d_inner, d_outer, clamped) at the given conditions; broadcasts over beta, r."""
        i0, i1, wv, cv = self._locate(Vx, self.vx_axis)
        j0, j1, wm, cm = self._locate(mu, self.mu_axis)
        beta = np.asarray(beta, dtype=float)
        r = np.asarray(r, dtype=float)
        shape = np.broadcast(beta, r).shape
        di = np.zeros(shape)
        do = np.zeros(shape)
        wsum = 0.0
        for ii, a in ((i0, 1 - wv), (i1, wv)):
            for jj, b in ((j0, 1 - wm), (j1, wm)):
                w = a * b
                if w == 0.0:
                    continue
                env = self.cells[ii][jj]
                if env.void:
                    continue
                d1, d2 = env.distances(beta, r)
                di = di + w * d1
                do = do + w * d2
                wsum += w
        if wsum == 0.0:
            raise DomainError("all neighbouring envelope cells are void")
        clamped = bool(cv or cm)
        if clamped:
            warnings.warn("envelope query outside the table grid; clamped to the edge", RuntimeWarning, stacklevel=2)
        di, do = di / wsum, do / wsum
        if shape == ():
            return float(di), float(do), clamped
        return di, do, clamped

    def to_json(self) -> dict:
        return {
            "vx_axis": self.vx_axis.tolist(), "mu_axis": self.mu_axis.tolist(), "box": self.box.to_dict(),
            "units": {"Vx": "m/s", "beta": "rad", "r": "rad/s"},
            "meta": self.meta,
            "cells": [[c.to_json() for c in row] for row in self.cells],
        }

    @classmethod
    def from_json(cls, d: dict) -> "EnvelopeTable":
        cells = [[DualEnvelope.from_json(c) for c in row] for row in d["cells"]]
        return cls(np.asarray(d["vx_axis"]), np.asarray(d["mu_axis"]), InputBox.from_dict(d["box"]), cells, d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EnvelopeTable":
        with open(path) as fh:
            return cls.from_json(json.load(fh))
