"""Regularization of quasi-plurisubharmonic functions.

``demailly_smooth`` averages a field over geodesic balls with a radial
kernel; ``kiselman_legendre`` takes the penalized infimum of the smoothing
family over the radius.  Smoothing families are streamed radius by radius
and share one Fourier transform of the field on the torus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .fields import ScalarField, laplacian_values
from .geometry import FLAT_TORUS, FUBINI_STUDY, GeometryError, Grid, exp_map


class KCertificationError(RuntimeError):
    """No monotonicity constant below the cap works on the sampled radii."""


def _smooth_step(y):
    """C-infinity step from 0 (y <= 0) to 1 (y >= 1)."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        b = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SmoothingKernel:
    """Radial profile rho(x), x = |zeta|^2 / delta^2.

    Constant on [0, 3/4], zero on [1, inf), with a C-infinity transition.
    ``normalization`` makes the induced 2n-dimensional mass equal one.
    """

    n: int = 1
    n_radial: int = 12
    n_angular: int = 24

    def profile(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 1.0, 0.0, 1.0 - _smooth_step((x - 0.75) / 0.25))

    def _radial_rule(self):
        """Gauss rule in s = |zeta| / delta, split where the profile stops being flat."""
        s0 = math.sqrt(0.75)
        x, w = roots_legendre(self.n_radial)
        s1 = 0.5 * s0 * (x + 1)
        w1 = 0.5 * s0 * w
        s2 = s0 + 0.5 * (1 - s0) * (x + 1)
        w2 = 0.5 * (1 - s0) * w
        return np.concatenate([s1, s2]), np.concatenate([w1, w2])

    @property
    def normalization(self) -> float:
        s, w = self._radial_rule()
        n = self.n
        sphere_area = 2 * math.pi ** n / math.factorial(n - 1)
        return 1.0 / (sphere_area * np.sum(w * self.profile(s * s) * s ** (2 * n - 1)))

    @property
    def second_moment(self) -> float:
        """Mean of |zeta|^2 / delta^2 under the normalized kernel."""
        s, w = self._radial_rule()
        n = self.n
        m = self.profile(s * s) * s ** (2 * n - 1) * w
        return float(np.sum(m * s * s) / np.sum(m))

    def tangent_rule(self):
        """Quadrature points (s, cos-angle) and weights summing to one."""
        s, ws = self._radial_rule()
        n = self.n
        radial = ws * self.profile(s * s) * s ** (2 * n - 1)
        if n == 1:
            ang = 2 * np.pi * (np.arange(self.n_angular) + 0.5) / self.n_angular
            c = np.cos(ang)
            sn = np.sin(ang)
            wa = np.full(self.n_angular, 1.0 / self.n_angular)
        else:
            a = (2 * n - 3) / 2.0
            c, wa = roots_jacobi(self.n_angular, a, a)
            sn = np.sqrt(1 - c * c)
            wa = wa / wa.sum()
        S = np.repeat(s, len(c))
        C = np.tile(c, len(s))
        SN = np.tile(sn, len(s))
        W = np.outer(radial, wa).ravel()
        keep = W > 0
        W = W[keep] / W[keep].sum()
        return S[keep], C[keep], SN[keep], W


DEFAULT_KERNEL = SmoothingKernel()


# --- torus -----------------------------------------------------------------------

def torus_stencil(grid: Grid, delta: float, kernel: SmoothingKernel = DEFAULT_KERNEL):
    """Lattice offsets inside the delta-ball and their normalized weights."""
    h = grid.spacing[0]
    m = int(math.floor(delta / h))
    i = np.arange(-m, m + 1)
    I, J = np.meshgrid(i, i, indexing="ij")
    x = (I * I + J * J) * (h / delta) ** 2
    w = kernel.profile(x)
    keep = w > 0
    w = w[keep]
    return I[keep], J[keep], w / w.sum()


def _torus_iter(u: np.ndarray, grid: Grid, deltas, kernel):
    N = grid.shape[0]
    uh = None
    for d in deltas:
        I, J, w = torus_stencil(grid, d, kernel)
        if len(w) <= 48:
            acc = np.zeros_like(u)
            for di, dj, wk in zip(I, J, w):
                acc += wk * np.roll(u, (-di, -dj), axis=(0, 1))
            yield acc
        else:
            if uh is None:
                uh = np.fft.rfft2(u)
            ker = np.zeros((N, N))
            # correlation: result(x) = sum w u(x + offset)
            np.add.at(ker, ((-I) % N, (-J) % N), w)
            yield np.fft.irfft2(uh * np.fft.rfft2(ker), s=u.shape)


# --- sphere ----------------------------------------------------------------------

def _sphere_interp(u: np.ndarray, grid: Grid, th, ph) -> np.ndarray:
    nth, nph = grid.shape
    dth, dph = grid.spacing
    half = nph // 2
    ext = np.empty((nth + 2, nph))
    ext[1:-1] = u
    ext[0] = np.roll(u[0], -half)
    ext[-1] = np.roll(u[-1], -half)
    row = th / dth + 0.5
    i0 = np.clip(np.floor(row).astype(int), 0, nth)
    fr = np.clip(row - i0, 0.0, 1.0)
    col = np.mod(ph / dph, nph)
    j0 = np.floor(col).astype(int) % nph
    fc = col - np.floor(col)
    j1 = (j0 + 1) % nph
    return ((1 - fr) * ((1 - fc) * ext[i0, j0] + fc * ext[i0, j1])
            + fr * ((1 - fc) * ext[i0 + 1, j0] + fc * ext[i0 + 1, j1]))


def _sphere_iter(u, grid, deltas, kernel):
    S, C, SN, W = kernel.tangent_rule()
    pts = grid.points()
    for d in deltas:
        acc = np.zeros(grid.size)
        for s, c, sn, w in zip(S, C, SN, W):
            zeta = np.empty_like(pts)
            zeta[:, 0] = d * s * c
            zeta[:, 1] = d * s * sn
            q = exp_map(grid.background, pts, zeta)
            acc += w * _sphere_interp(u, grid, q[:, 0], q[:, 1])
        yield acc.reshape(u.shape)


# --- radial ----------------------------------------------------------------------

def _radial_iter(u, grid, deltas, kernel):
    S, C, SN, W = kernel.tangent_rule()
    rho = grid.radii
    t = grid.t
    for d in deltas:
        r2 = (rho[:, None] ** 2 + (d * S[None, :]) ** 2
              + 2 * rho[:, None] * d * S[None, :] * C[None, :])
        tq = np.log(np.maximum(r2, 1e-300))
        vals = np.interp(tq, t, u)  # clamps outside [t_min, t_max]
        yield vals @ W


def iter_family(u: ScalarField, deltas, kernel: SmoothingKernel | None = None):
    """Yield rho_delta u for each radius in ``deltas`` without storing the stack."""
    grid = u.grid
    kernel = kernel or SmoothingKernel(grid.background.n)
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if np.any(deltas <= 0):
        raise GeometryError("smoothing radius must be positive")
    if np.any(deltas >= grid.background.injectivity_radius):
        raise GeometryError("smoothing radius must stay below the injectivity radius")
    if grid.kind == FLAT_TORUS:
        return _torus_iter(u.values, grid, deltas, kernel)
    if grid.kind == FUBINI_STUDY:
        return _sphere_iter(u.values, grid, deltas, kernel)
    return _radial_iter(u.values, grid, deltas, kernel)


def smoothing_family(u: ScalarField, deltas, kernel: SmoothingKernel | None = None) -> np.ndarray:
    """Stack of rho_delta u for every radius in ``deltas``."""
    return np.stack(list(iter_family(u, deltas, kernel)))


def demailly_smooth(u: ScalarField, delta: float, kernel: SmoothingKernel | None = None) -> ScalarField:
    """Kernel average of u over the geodesic delta-ball (mass-1 kernel)."""
    return u.with_values(smoothing_family(u, [delta], kernel)[0], "rho_delta_u")


def default_t_grid(delta: float, points: int = 64, ratio: float = 256.0) -> np.ndarray:
    return np.geomspace(delta / ratio, delta, points)


def interior_nodes(grid: Grid, delta: float):
    """Nodes whose delta-ball lies inside the domain; None when every node qualifies.

    Only the punctured ball has a boundary: averages there clamp to the
    outermost value once the ball crosses the outer radius.
    """
    if grid.kind in (FLAT_TORUS, FUBINI_STUDY):
        return None
    return grid.radii + delta <= grid.radii[-1] * (1 + 1e-12)


def _masked(a, mask):
    return a if mask is None else a[mask]


def monotonicity_violation(family, t_grid, K: float, mask=None) -> float:
    """Largest decrease of t -> rho_t u + K t^2 between consecutive radii."""
    worst, prev = 0.0, None
    for t, F in zip(np.asarray(t_grid, dtype=float), family):
        g = _masked(F, mask) + K * t * t
        if prev is not None:
            worst = max(worst, float(np.max(prev - g)))
        prev = g
    return worst


def estimate_K(u: ScalarField, t_grid, kernel: SmoothingKernel | None = None,
               cap: float = 1e6, family=None) -> float:
    """Smallest K >= 0 making t -> rho_t u + K t^2 nondecreasing on ``t_grid``.

    The minimum is attained in closed form as the largest normalized drop
    between consecutive radii, so no bisection is needed.  ``family`` may be
    a stacked array or any iterable of smoothed fields in t-grid order.
    On the punctured ball only nodes at least max(t) inside the outer
    radius take part.
    """
    t = np.asarray(t_grid, dtype=float)
    if family is None:
        family = iter_family(u, t, kernel)
    mask = interior_nodes(u.grid, float(t.max()))
    K, prev = 0.0, None
    for i, F in enumerate(family):
        F = _masked(F, mask)
        if prev is not None:
            K = max(K, float(np.max(prev - F)) / (t[i] ** 2 - t[i - 1] ** 2))
        prev = F
    if K > cap:
        raise KCertificationError(f"monotonicity needs K = {K:.3e} above cap {cap:.3e}")
    # one ulp of headroom so the certificate survives rounding in the check
    return float(np.nextafter(K, np.inf)) if K > 0 else 0.0


@dataclass(frozen=True, eq=False)
class KiselmanResult:
    U_delta: ScalarField
    argmin_t: ScalarField
    c: float
    delta: float
    K: float
    A_prime: float
    u_delta_normalized: ScalarField
    t_grid: np.ndarray = field(repr=False, default=None)
    rho_delta_u: ScalarField | None = field(repr=False, default=None)
    monotonicity_violation: float = 0.0


def kiselman_legendre(u: ScalarField, c: float, delta: float, K: float, t_grid=None,
                      kernel: SmoothingKernel | None = None, A_prime: float | None = None,
                      family=None) -> KiselmanResult:
    """Penalized infimum over radii t in (0, delta] of rho_t u + K t^2 - c log(t/delta) - K delta^2.

    The smoothing family is streamed, so memory stays at a few fields; the
    monotonicity of rho_t u + K t^2 is re-checked on the same pass (on
    interior nodes of the punctured ball).
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    t = default_t_grid(delta) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ValueError("empty t-grid")
    if np.any(t <= 0) or np.any(t > delta * (1 + 1e-12)):
        raise ValueError("t-grid must lie in (0, delta]")
    if family is None:
        family = iter_family(u, t, kernel)
    best = arg = rho_d = prev = None
    top = int(np.argmax(t))
    mask = interior_nodes(u.grid, float(t.max()))
    viol = 0.0
    for i, F in enumerate(family):
        g = F + K * t[i] ** 2
        if prev is not None:
            viol = max(viol, float(np.max(_masked(prev - g, mask))))
        prev = g
        v = g - c * math.log(t[i] / delta)
        if best is None:
            best = v.copy()
            arg = np.full(v.shape, t[i])
        else:
            better = v < best
            best[better] = v[better]
            arg[better] = t[i]
        if i == top:
            rho_d = F.copy()
    U = best - K * delta * delta
    A_prime = u.grid.background.curvature_A + 1.0 if A_prime is None else A_prime
    grid = u.grid
    return KiselmanResult(
        ScalarField(grid, U, "U_delta"), ScalarField(grid, arg, "argmin_t"), c, delta, K,
        A_prime, ScalarField(grid, U / (1 + A_prime * c), "u_delta"), t,
        ScalarField(grid, rho_d, "rho_delta_u"), viol)


def psh_defect(f: ScalarField) -> float:
    """min over nodes of 1 + tr(i ddbar f): the lowest eigenvalue of omega_0 + i ddbar f at n = 1."""
    if f.grid.background.n != 1:
        raise ValueError("psh_defect is defined for n = 1 grids")
    return float(np.min(1.0 + laplacian_values(f.values, f.grid)))


@dataclass(frozen=True)
class ClosenessTable:
    deltas: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float

    def rows(self):
        return [{"delta": float(d), "l1_gap": float(v)} for d, v in zip(self.deltas, self.values)]


def check_l1_closeness(u: ScalarField, delta_list, kernel: SmoothingKernel | None = None) -> ClosenessTable:
    """Integral of |rho_delta u - u| per delta, with a log-log slope fit."""
    d = np.asarray(delta_list, dtype=float)
    if d.size < 3:
        raise ValueError("need at least 3 delta values for a slope fit")
    vals = np.array([np.sum(np.abs(f - u.values) * u.grid.weights)
                     for f in iter_family(u, d, kernel)])
    pos = vals > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(np.log(d[pos]), np.log(vals[pos]), 1)
    else:
        slope, icpt = math.nan, math.nan
    return ClosenessTable(d, vals, float(slope), float(icpt))


def transform_report(res: KiselmanResult, defect: float | None = None,
                     closeness: ClosenessTable | None = None) -> dict:
    """JSON-ready row for the estimates pipeline."""
    row = {"delta": res.delta, "c": res.c, "K": res.K, "A_prime": res.A_prime,
           "theta_min": float(np.min(res.argmin_t.values) / res.delta)}
    if defect is not None:
        row["psh_defect"] = defect
        row["defect_bound"] = -(res.U_delta.grid.background.curvature_A * res.c
                                + res.K * res.delta ** 2)
    if closeness is not None:
        row["closeness"] = closeness.rows()
        row["closeness_slope"] = closeness.slope
    return row
