"""Geometry of the solved metric omega_u.

At n = 1 the solved metric is conformal to the background,
``omega_u = e^F omega_0``, so lengths scale by ``sqrt(e^F)``.  Distances
come from shortest paths on a 16-neighbour grid graph whose edge lengths
are exact background distances times the mean endpoint ``sqrt(factor)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .geometry import (FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG, SPHERE_RADIUS, Grid,
                       background_distance, volume_density)

# axis, diagonal and knight moves; the opposite moves are added by symmetry
STENCIL16 = ((1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1))
# adds the (1, 3) and (2, 3) families; worst-case metrication error drops to 1.3%
STENCIL32 = STENCIL16 + ((1, 3), (3, 1), (1, -3), (3, -1), (2, 3), (3, 2), (2, -3), (3, -2))
STENCILS = {16: STENCIL16, 32: STENCIL32}


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MetricField:
    """Conformal factor per node, or radial eigenvalue profiles on radial grids."""

    grid: Grid
    factor: np.ndarray
    radial_eig: np.ndarray | None = None
    tangential_eig: np.ndarray | None = None
    stencil: int = 16

    def __post_init__(self):
        f = np.asarray(self.factor, dtype=float)
        if f.shape != tuple(self.grid.shape):
            raise MetricError("factor shape does not match the grid")
        if not np.all(f > 0):
            raise MetricError("metric factor must be strictly positive")
        if self.stencil not in STENCILS:
            raise MetricError("stencil must be 16 or 32")
        object.__setattr__(self, "factor", f)

    def scaled(self, c2: float) -> "MetricField":
        """Metric multiplied by c2 (distances scale by sqrt(c2))."""
        return MetricField(self.grid, self.factor * c2,
                           None if self.radial_eig is None else self.radial_eig * c2,
                           None if self.tangential_eig is None else self.tangential_eig * c2,
                           self.stencil)


def metric_from_solution(sol) -> MetricField:
    """omega_u = omega_0 + i ddbar u, read off the discrete equation at n = 1."""
    from .fields import laplacian_values
    return MetricField(sol.u.grid, 1.0 + laplacian_values(sol.u.values, sol.u.grid))


def metric_from_radial(profile, grid: Grid) -> MetricField:
    """Radial potential f(t): eigenvalues f'' e^{-t} (radial) and f' e^{-t} (tangential)."""
    lam_r, lam_t = profile.eigenvalues()
    return MetricField(grid, lam_r, lam_r, lam_t)


# --- graph ------------------------------------------------------------------------

def _edges(grid: Grid, stencil: int = 16):
    shape = grid.shape
    I, J = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    I = I.ravel()
    J = J.ravel()
    src, dst = [], []
    for di, dj in STENCILS[stencil]:
        if grid.kind == FLAT_TORUS:
            i2 = (I + di) % shape[0]
            j2 = (J + dj) % shape[1]
            ok = np.ones(I.size, dtype=bool)
        elif grid.kind == FUBINI_STUDY:
            i2 = I + di
            j2 = J + dj
            # crossing a pole lands on the ring itself at phi + pi
            over = i2 >= shape[0]
            under = i2 < 0
            i2 = np.where(over, 2 * shape[0] - 1 - i2, np.where(under, -1 - i2, i2))
            j2 = np.where(over | under, j2 + shape[1] // 2, j2) % shape[1]
            ok = ~((i2 == I) & (j2 == J))
        else:
            raise MetricError("graph distances need a two-dimensional grid")
        src.append(np.ravel_multi_index((I[ok], J[ok]), shape))
        dst.append(np.ravel_multi_index((i2[ok], j2[ok]), shape))
    return np.concatenate(src), np.concatenate(dst)


def distance_graph(metric: MetricField):
    """Sparse symmetric adjacency with metric edge lengths."""
    grid = metric.grid
    src, dst = _edges(grid, metric.stencil)
    pts = grid.points()
    base = background_distance(grid.background, pts[src], pts[dst])
    sq = np.sqrt(metric.factor.ravel())
    w = base * 0.5 * (sq[src] + sq[dst])
    n = grid.size
    A = coo_matrix((w, (src, dst)), shape=(n, n)).tocsr()
    return A


def distance_field(metric: MetricField, sources, graph=None) -> np.ndarray:
    """Distances from node indices ``sources`` (flat or tuple) to every node."""
    G = distance_graph(metric) if graph is None else graph
    idx = np.atleast_1d(_flat_index(metric.grid, sources))
    D = dijkstra(G, directed=False, indices=idx)
    if not np.all(np.isfinite(D)):
        raise MetricError("grid graph is disconnected")
    return D.reshape((len(idx),) + tuple(metric.grid.shape))


def _flat_index(grid, node):
    if isinstance(node, tuple):
        return int(np.ravel_multi_index(node, grid.shape))
    arr = np.asarray(node)
    if arr.ndim == 2:
        return np.ravel_multi_index(tuple(arr.T), grid.shape)
    return arr


def geodesic_distance(metric: MetricField, x, y) -> float:
    """Graph distance between two grid nodes (index tuples)."""
    if metric.grid.kind == RADIAL_LOG:
        rho = radial_distance(metric)
        return float(abs(rho[x] - rho[y]))
    D = distance_field(metric, [_flat_index(metric.grid, x)])[0]
    return float(D.ravel()[_flat_index(metric.grid, y)])


def radial_distance(metric: MetricField) -> np.ndarray:
    """Exact radial integral of sqrt(radial eigenvalue) d|z| from the inner radius."""
    grid = metric.grid
    if grid.kind != RADIAL_LOG:
        raise MetricError("radial distances need a radial grid")
    lam = metric.factor if metric.radial_eig is None else metric.radial_eig
    rho = grid.radii
    # d|z| = |z|/2 dt on the uniform t-grid
    return cumulative_trapezoid(np.sqrt(lam) * rho / 2.0, grid.t, initial=0.0)


def meridian_distance(metric: MetricField, j: int = 0) -> np.ndarray:
    """Length of the meridian phi = phi_j from the first ring to each ring.

    This is the exact distance for zonal factors, by symmetry.
    """
    grid = metric.grid
    if grid.kind != FUBINI_STUDY:
        raise MetricError("meridians live on the sphere")
    sq = np.sqrt(metric.factor[:, j])
    seg = 0.5 * (sq[1:] + sq[:-1]) * SPHERE_RADIUS * grid.spacing[0]
    return np.concatenate([[0.0], np.cumsum(seg)])


# --- diameter -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiameterReport:
    diameter: float
    sources: list
    h: float
    dini_integral: float = math.nan
    dini: dict = field(default_factory=dict)
    morrey_table: list = field(default_factory=list)

    def to_dict(self):
        return {"diameter": self.diameter, "source_count": len(self.sources),
                "sources": [int(s) for s in self.sources], "h": self.h,
                "dini_integral": self.dini_integral, "dini": self.dini,
                "morrey_table": self.morrey_table}


def diameter(metric: MetricField, sources: int = 16, start: int = 0) -> DiameterReport:
    """Farthest-point sweep; the result is a certified lower bound."""
    if metric.grid.kind == RADIAL_LOG:
        rho = radial_distance(metric)
        return DiameterReport(float(2 * rho[-1]), [0], metric.grid.h)
    G = distance_graph(metric)
    chosen = [int(start)]
    nearest = None
    best = 0.0
    for _ in range(max(1, sources)):
        D = dijkstra(G, directed=False, indices=chosen[-1])
        if not np.all(np.isfinite(D)):
            raise MetricError("grid graph is disconnected")
        best = max(best, float(D.max()))
        nearest = D if nearest is None else np.minimum(nearest, D)
        nxt = int(np.argmax(nearest))
        if len(chosen) < sources:
            chosen.append(nxt)
    return DiameterReport(best, chosen, metric.grid.h)


# --- Dini integral -------------------------------------------------------------------

def dini_integral(profile, upper: float = 0.5, C: float | None = None,
                  alpha: float | None = None) -> dict:
    """Integral of sqrt(Omega(r))/r over (0, upper].

    The sampled part runs from the smallest radius to ``upper`` (log-linear
    interpolation, Omega held constant past the largest radius); below the
    smallest radius the model C / |log r|^alpha supplies the tail.
    """
    r = np.asarray(profile.radii, dtype=float)
    o = np.asarray(profile.omega, dtype=float)
    if np.all(o == 0):
        return {"numeric": 0.0, "tail": 0.0, "total": 0.0, "divergent": False,
                "alpha": alpha, "C": C}
    if C is None or alpha is None:
        C, alpha = profile.fit_log
    keep = r <= upper
    rr = np.concatenate([r[keep], [upper]]) if r[keep].size and r[keep][-1] < upper else r[keep]
    oo = np.interp(np.log(rr), np.log(r), o)
    numeric = float(np.trapezoid(np.sqrt(oo), np.log(rr))) if rr.size > 1 else 0.0
    r0 = float(rr[0]) if rr.size else upper
    L0 = -math.log(r0)
    if not np.isfinite(alpha) or alpha <= 2:
        tail, div = math.inf, True
    else:
        tail, div = math.sqrt(C) * L0 ** (1 - alpha / 2) / (alpha / 2 - 1), False
    return {"numeric": numeric, "tail": tail, "total": numeric + tail, "divergent": div,
            "alpha": float(alpha), "C": float(C), "r_min": r0}


# --- Morrey chain ----------------------------------------------------------------------

def morrey_check(metric: MetricField, base, p_samples, r_list, omega=None) -> dict:
    """Chart-ball averages of rho = d(., base) and their dyadic deviations.

    ``omega`` is a callable r -> Omega(r) (default 0).  ``r_list`` should be
    dyadic, decreasing by factors of two.
    """
    grid = metric.grid
    if grid.kind == RADIAL_LOG:
        raise MetricError("Morrey checks need a two-dimensional grid")
    rho = distance_field(metric, [_flat_index(grid, base)])[0].ravel()
    z = grid.chart_coordinates()
    if grid.kind == FUBINI_STUDY:
        chart_w = grid.weights.ravel() / volume_density(grid.background, grid.points())
    else:
        chart_w = grid.weights.ravel()
    r_list = sorted((float(r) for r in r_list), reverse=True)
    omega = (lambda r: 0.0) if omega is None else omega
    rows, skipped, tele = [], [], []
    C_fit = 0.0
    period = grid.background.period if grid.kind == FLAT_TORUS else None
    for p in p_samples:
        pi = int(_flat_index(grid, p))
        dz = z - z[pi]
        if period is not None:
            dz = (dz + period / 2) % period - period / 2
        dist = np.hypot(dz[:, 0], dz[:, 1])
        avgs = []
        for r in r_list:
            if period is not None and r >= period / 2:
                skipped.append({"p": pi, "r": r, "reason": "ball exits chart"})
                avgs.append(None)
                continue
            m = dist <= r
            m[pi] = True
            avgs.append(float(np.sum(rho[m] * chart_w[m]) / np.sum(chart_w[m])))
        for k in range(len(r_list) - 1):
            a, b = avgs[k], avgs[k + 1]
            if a is None or b is None:
                continue
            dev = abs(a - b)
            r = r_list[k]
            bound_unit = r + math.sqrt(max(omega(r), 0.0))
            C_fit = max(C_fit, dev / bound_unit)
            rows.append({"p": pi, "r": r, "avg_r": a, "avg_half": b, "deviation": dev})
        valid = [a for a in avgs if a is not None]
        if valid:
            # the finest ball holds the node alone once r < h (Lebesgue point limit)
            chain = valid + [float(rho[pi])]
            abs_sum = float(np.sum(np.abs(np.diff(chain))))
            tele.append({"p": pi, "rho_p": float(rho[pi]), "outer_avg": valid[0],
                         "difference": float(rho[pi] - valid[0]), "abs_chain_sum": abs_sum})
    return {"rows": rows, "C_fit": C_fit, "telescoping": tele, "skipped": skipped}
