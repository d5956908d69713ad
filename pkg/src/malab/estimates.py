"""Level-set estimates and modulus-of-continuity measurement.

The level sets ``E_s = {u <= -2 delta + (1 - r) u_delta - s}`` are encoded
through the gap field ``X = -u + (1 - r) u_delta - 2 delta``: node x lies
in ``E_s`` iff ``X(x) >= s``.  Energies, De Giorgi constants and Trudinger
moments are quadratures of functions of X against ``e^F`` and the volume
weights.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .fields import ScalarField
from .geometry import (FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG, SPHERE_RADIUS,
                       background_distance)
from .transforms import smoothing_family


class EstimateError(RuntimeError):
    """Inconsistent inputs to an estimate (e.g. A_s = 0 on a nonempty set)."""


# --- exponents ------------------------------------------------------------------

def predicted_alpha(n: int, p: float) -> float:
    """Logarithmic exponent min{(p - n)/n, p/(n + 1)}."""
    return min((p - n) / n, p / (n + 1))


def predicted_holder(n: int, q: float) -> float:
    """Hoelder exponent 2 / (1 + (n + 1) q*) with q* = q / (q - 1)."""
    if q <= 1:
        raise ValueError("q must exceed 1")
    return 2.0 / (1.0 + (n + 1) * q / (q - 1))


def trace_parameters(delta: float, p: float, n: int = 1) -> dict:
    """r, c, alpha and a0 for the logarithmic pipeline at radius delta."""
    L = abs(math.log(delta))
    alpha = predicted_alpha(n, p)
    return {"r": L ** (-p / (n + 1)), "c": L ** (-alpha), "alpha": alpha,
            "a0": (p - n) / (p * n)}


def holder_parameters(delta: float, q: float, n: int = 1) -> dict:
    """Threshold gap and r for the Hoelder pipeline."""
    a0 = predicted_holder(n, q)
    qs = q / (q - 1)
    return {"gap": 2 * delta ** a0, "r": delta ** ((2 - a0) / ((n + 1) * qs)), "alpha0": a0}


# --- level sets -----------------------------------------------------------------

def gap_field(u, u_delta, delta: float, r: float, gap: float | None = None) -> np.ndarray:
    """X = -u + (1 - r) u_delta - gap with the default gap 2 delta."""
    gap = 2.0 * delta if gap is None else gap
    return -np.asarray(u, dtype=float) + (1.0 - r) * np.asarray(u_delta, dtype=float) - gap


def sublevel_mask(u, u_delta, delta: float, r: float, s: float, mode: str = "log",
                  alpha0: float | None = None) -> np.ndarray:
    """Nodes of E_s.  ``mode="holder"`` uses the threshold -2 delta^alpha0."""
    if mode == "log":
        gap = 2.0 * delta
    elif mode == "holder":
        if alpha0 is None:
            raise ValueError("holder mode needs alpha0")
        gap = 2.0 * delta ** alpha0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return gap_field(u, u_delta, delta, r, gap) >= s


def energy_phi(u, u_delta, delta: float, r: float, s: float, eF: ScalarField,
               gap: float | None = None) -> float:
    """phi(s): integral over E_s of (X - s) e^F."""
    X = gap_field(u, u_delta, delta, r, gap) - s
    return float(np.sum(np.where(X > 0, X, 0.0) * eF.values * eF.grid.weights))


@dataclass(frozen=True, eq=False)
class LevelSetTrace:
    delta: float
    r: float
    c: float
    p: float
    n: int
    s_grid: np.ndarray
    mass: np.ndarray
    phi: np.ndarray
    a0: float
    gap_sup: float
    X: np.ndarray = field(repr=False)
    C3_fit: float = math.nan
    S_inf_bound: float = math.nan

    def mask(self, s: float) -> np.ndarray:
        return self.X >= s

    def rows(self, scenario: str = ""):
        return [{"scenario": scenario, "delta": self.delta, "s": float(s), "mass": float(m),
                 "phi": float(f)} for s, m, f in zip(self.s_grid, self.mass, self.phi)]


def default_s_grid(scale: float, levels: int = 32, floor: float = 1e-8) -> np.ndarray:
    """0 followed by a geometric ladder from ``floor`` up to ``scale``."""
    if not scale > floor:
        return np.array([0.0])
    return np.concatenate([[0.0], np.geomspace(floor, scale, levels)])


def build_trace(u: ScalarField, u_delta: ScalarField, eF: ScalarField, delta: float,
                p: float, r: float | None = None, c: float | None = None,
                s_grid=None, gap: float | None = None, a0: float | None = None,
                levels: int = 32) -> LevelSetTrace:
    """Sample mass(s) and phi(s) of the level sets and run the De Giorgi analysis."""
    n = u.grid.background.n
    pars = trace_parameters(delta, p, n)
    r = pars["r"] if r is None else r
    c = pars["c"] if c is None else c
    a0 = pars["a0"] if a0 is None else a0
    X = gap_field(u.values, u_delta.values, delta, r, gap)
    scale = float(max(np.max(X), 0.0))
    s = default_s_grid(scale, levels) if s_grid is None else np.asarray(s_grid, dtype=float)
    w = eF.values * eF.grid.weights
    mass = np.array([np.sum(w[X >= si]) for si in s])
    phi = np.array([np.sum(np.where(X > si, X - si, 0.0) * w) for si in s])
    tr = LevelSetTrace(delta, r, c, p, n, s, mass, phi, a0, scale, X)
    C3, S_inf, _ = degiorgi_analyze(tr)
    object.__setattr__(tr, "C3_fit", C3)
    object.__setattr__(tr, "S_inf_bound", S_inf)
    return tr


def degiorgi_analyze(trace: LevelSetTrace):
    """C3_fit, the S_inf bound and whether E_s is empty for every sampled s beyond it."""
    s = np.asarray(trace.s_grid)
    phi = np.asarray(trace.phi)
    a0 = trace.a0
    if phi.size == 0 or phi[0] <= 0:
        return 0.0, 0.0, True
    C3 = 0.0
    for i in range(len(s)):
        if phi[i] <= 0:
            continue
        sp = s[i + 1:] - s[i]
        ratio = sp * phi[i + 1:] / phi[i] ** (1 + a0)
        if ratio.size:
            C3 = max(C3, float(np.max(ratio)))
    S_inf = 2 * C3 / (1 - 2 ** (-a0)) * phi[0] ** a0
    mass = np.asarray(trace.mass)
    beyond = s > S_inf
    verdict = bool(np.all(mass[beyond] == 0)) if np.any(beyond) else True
    if trace.X is not None and np.any(beyond):
        verdict = verdict and not np.any(trace.X >= s[beyond].min())
    return C3, float(S_inf), verdict


def tail_bound_violation(trace: LevelSetTrace) -> float:
    """max over sampled s < s + s' of s' mass(s + s') - phi(s); never positive."""
    s, m, f = trace.s_grid, trace.mass, trace.phi
    worst = -math.inf
    for i in range(len(s)):
        v = (s[i + 1:] - s[i]) * m[i + 1:] - f[i]
        if v.size:
            worst = max(worst, float(np.max(v)))
    return worst


def comparison_test(u, u_delta, aux, r: float, delta: float, s: float,
                    gap: float | None = None) -> float:
    """max over nodes of Psi = -eps (-psi + Lambda)^{n/(n+1)} + (X - s)."""
    X = gap_field(np.asarray(u), np.asarray(u_delta), delta, r, gap) - s
    if aux.empty:
        return float(np.max(X))
    n = aux.psi.grid.background.n
    psi = aux.psi.values
    Psi = -aux.epsilon * (-psi + aux.Lambda) ** (n / (n + 1)) + X
    return float(np.max(Psi))


def trudinger_moment(u, u_delta, delta: float, r: float, s: float, A_s: float,
                     grid, beta0: float = 0.1, gap: float | None = None) -> float:
    """Integral over E_s of exp(beta0 (X - s)^{(n+1)/n} / A_s^{1/n})."""
    n = grid.background.n
    X = gap_field(np.asarray(u), np.asarray(u_delta), delta, r, gap) - s
    mask = X >= 0
    if not np.any(mask):
        return 0.0
    if not A_s > 0:
        raise EstimateError("A_s = 0 on a nonempty level set")
    expo = beta0 * X[mask] ** ((n + 1) / n) / A_s ** (1.0 / n)
    return float(np.sum(np.exp(expo) * grid.weights[mask]))


# --- modulus of continuity --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModulusProfile:
    radii: np.ndarray
    omega: np.ndarray
    h: float
    mode: str = "global"
    fit_log: tuple = (math.nan, math.nan)
    fit_holder: tuple = (math.nan, math.nan)
    predicted_alpha: float = math.nan
    predicted_holder: float = math.nan

    def rows(self):
        return [{"r": float(r), "omega": float(o)} for r, o in zip(self.radii, self.omega)]


def _pairs_cummax(dist: np.ndarray, diff: np.ndarray, radii: np.ndarray) -> np.ndarray:
    order = np.argsort(dist, kind="stable")
    d = dist[order]
    cm = np.maximum.accumulate(diff[order]) if d.size else d
    idx = np.searchsorted(d, radii, side="right")
    return np.where(idx > 0, cm[np.maximum(idx - 1, 0)] if d.size else 0.0, 0.0)


def _torus_modulus(u: np.ndarray, h: float, radii: np.ndarray, period: float) -> np.ndarray:
    m = int(math.floor(radii.max() / h + 1e-12))
    m = min(m, u.shape[0] // 2)
    dists, diffs = [], []
    for di in range(0, m + 1):
        for dj in range(-m, m + 1):
            if di == 0 and dj <= 0:
                continue
            d = h * math.hypot(di, dj)
            if d > radii.max() * (1 + 1e-12):
                continue
            diffs.append(float(np.max(np.abs(u - np.roll(u, (-di, -dj), axis=(0, 1))))))
            dists.append(d)
    return _pairs_cummax(np.array(dists), np.array(diffs), radii)


def _range_extrema(f: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """max and min of f[lo:hi+1] for each pair (sparse-table range queries)."""
    tmax, tmin = [f], [f]
    k = 1
    while 2 * k <= len(f):
        tmax.append(np.maximum(tmax[-1][:-k], tmax[-1][k:]))
        tmin.append(np.minimum(tmin[-1][:-k], tmin[-1][k:]))
        k *= 2
    length = hi - lo + 1
    lev = np.floor(np.log2(length)).astype(int)
    mx = np.empty(len(lo))
    mn = np.empty(len(lo))
    for L in np.unique(lev):
        sel = lev == L
        a, b = lo[sel], hi[sel] - (1 << L) + 1
        mx[sel] = np.maximum(tmax[L][a], tmax[L][b])
        mn[sel] = np.minimum(tmin[L][a], tmin[L][b])
    return mx, mn


def _radial_modulus(f: np.ndarray, rho: np.ndarray, radii: np.ndarray) -> np.ndarray:
    # same-ray pairs realize the smallest distance between the spheres |z| = rho_i, rho_j
    out = np.zeros(len(radii))
    i = np.arange(len(rho))
    for k, r in enumerate(radii):
        j = np.searchsorted(rho, rho + r * (1 + 1e-12), side="right") - 1
        mx, mn = _range_extrema(f, i, j)
        out[k] = float(max(np.max(mx - f), np.max(f - mn)))
    return out


def _sphere_modulus(u: np.ndarray, th: np.ndarray, ph: np.ndarray, radii: np.ndarray) -> np.ndarray:
    R = SPHERE_RADIUS
    xyz = R * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
    rmax = radii.max()
    chord = 2 * R * math.sin(min(rmax / (2 * R), math.pi / 2))
    tree = cKDTree(xyz)
    pairs = tree.query_pairs(chord * (1 + 1e-12), output_type="ndarray")
    if pairs.size == 0:
        return np.zeros(len(radii))
    c = np.linalg.norm(xyz[pairs[:, 0]] - xyz[pairs[:, 1]], axis=1)
    geo = 2 * R * np.arcsin(np.clip(c / (2 * R), 0, 1))
    return _pairs_cummax(geo, np.abs(u[pairs[:, 0]] - u[pairs[:, 1]]), radii)


def modulus_of_continuity(u: ScalarField, radii, anchor=None, stride: int = 1,
                          n: int | None = None, p: float | None = None,
                          q: float | None = None) -> ModulusProfile:
    """Omega(r) = sup |u(x) - u(y)| over node pairs with d(x, y) <= r.

    ``anchor`` (a node index tuple, or "origin" on radial grids) switches to
    the local modulus sup_{d(x, x0) <= r} |u(x) - u(x0)|.  ``stride``
    subsamples nodes on two-dimensional grids; the result is exact on the
    sampled set.
    """
    grid = u.grid
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise ValueError("radii must be positive and increasing")
    v = u.values
    mode = "global"
    if anchor is not None:
        mode = "anchored"
        if grid.kind == RADIAL_LOG:
            i0 = 0
            d = grid.radii - grid.radii[0]
            diff = np.abs(v - v[i0])
        else:
            pts = grid.points()
            idx = np.ravel_multi_index(tuple(anchor), grid.shape)
            d = background_distance(grid.background, pts[idx][None, :], pts)
            diff = np.abs(v.ravel() - v.ravel()[idx])
        omega = _pairs_cummax(d, diff, radii)
    elif grid.kind == FLAT_TORUS:
        vs = v[::stride, ::stride]
        omega = _torus_modulus(vs, grid.spacing[0] * stride, radii, grid.background.period)
    elif grid.kind == FUBINI_STUDY and np.max(np.abs(v - v[:, :1])) <= 1e-13 * (1 + np.max(np.abs(v))):
        # zonal field: the closest pair between two rings shares a meridian
        omega = _radial_modulus(v[:, 0], SPHERE_RADIUS * grid.coords[0], radii)
    elif grid.kind == FUBINI_STUDY:
        th, ph = grid.mesh()
        sl = (slice(None, None, stride), slice(None, None, stride))
        omega = _sphere_modulus(v[sl].ravel(), th[sl].ravel(), ph[sl].ravel(), radii)
    else:
        omega = _radial_modulus(v, grid.radii, radii)
    n = grid.background.n if n is None else n
    return ModulusProfile(radii, omega, grid.h * stride, mode,
                          predicted_alpha=predicted_alpha(n, p) if p else math.nan,
                          predicted_holder=predicted_holder(n, q) if q else math.nan)


def _fit_select(profile: ModulusProfile, r_min, r_max):
    r = np.asarray(profile.radii)
    o = np.asarray(profile.omega)
    lo = 4 * profile.h if r_min is None else r_min
    hi = np.inf if r_max is None else r_max
    keep = (r >= lo * (1 - 1e-12)) & (r <= hi * (1 + 1e-12)) & (o > 0)
    if keep.sum() < 3:
        raise ValueError("fewer than 3 usable radii for the fit")
    return r[keep], o[keep]


def fit_log_modulus(profile: ModulusProfile, r_min=None, r_max=None):
    """(C, alpha) from least squares of log Omega against log |log r|."""
    r, o = _fit_select(profile, r_min, r_max)
    if np.any(r >= 1):
        raise ValueError("logarithmic fit needs radii below 1")
    slope, icpt = np.polyfit(np.log(-np.log(r)), np.log(o), 1)
    return float(math.exp(icpt)), float(-slope)


def fit_holder(profile: ModulusProfile, r_min=None, r_max=None):
    """(C, a) from least squares of log Omega against log r."""
    r, o = _fit_select(profile, r_min, r_max)
    slope, icpt = np.polyfit(np.log(r), np.log(o), 1)
    return float(math.exp(icpt)), float(slope)


def with_fits(profile: ModulusProfile, r_min=None, r_max=None) -> ModulusProfile:
    """Copy of the profile with both fits filled in where possible."""
    fl = fh = (math.nan, math.nan)
    try:
        fl = fit_log_modulus(profile, r_min, r_max)
    except ValueError:
        pass
    try:
        fh = fit_holder(profile, r_min, r_max)
    except ValueError:
        pass
    return ModulusProfile(profile.radii, profile.omega, profile.h, profile.mode, fl, fh,
                          profile.predicted_alpha, profile.predicted_holder)


# --- final smoothing estimate ----------------------------------------------------

def final_smoothing_check(u: ScalarField, delta_list, alpha: float, kernel=None,
                          c_rule: str = "log") -> dict:
    """sup(rho_delta u - u) per delta against c = |log delta|^{-alpha} (or delta^alpha).

    ``decay_exponent`` is the log-log slope of the sup against 1/|log delta|
    (against delta with the Hoelder rule).
    """
    d = np.asarray(delta_list, dtype=float)
    fam = smoothing_family(u, d, kernel)
    sup = np.array([float(np.max(f - u.values)) for f in fam])
    x = d if c_rule == "holder" else 1 / np.abs(np.log(d))
    c = x ** alpha
    rows = [{"delta": float(di), "c": float(ci), "sup_gap": float(si), "scaled": float(si / ci)}
            for di, ci, si in zip(d, c, sup)]
    pos = sup > 0
    slope = math.nan
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(x[pos]), np.log(sup[pos]), 1)[0])
    return {"rows": rows, "decay_exponent": slope, "alpha": alpha, "c_rule": c_rule}


# --- output ---------------------------------------------------------------------

def rows_to_csv(rows) -> str:
    """Tidy CSV with columns in first-row order."""
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
