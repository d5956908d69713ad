"""Complex Monge-Ampere solves.

At n = 1 the equation ``(omega_0 + i ddbar u) = e^F omega_0`` reads
``1 + tr(i ddbar u) = e^F`` and is a Poisson problem.  The torus is solved
by exact diagonalization of the 5-point stencil with the FFT; the sphere by
an azimuthal Fourier transform followed by one tridiagonal solve per mode.
Radial problems in any dimension reduce to two quadratures.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .fields import (FieldError, ScalarField, laplacian_values, orlicz_norm,
                     total_volume)
from .geometry import FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG, TRACE_CALIBRATION, Grid


class SolverError(RuntimeError):
    """Numerical failure of a solve (exit code 2 at the command line)."""


class IncompatibleDensityError(FieldError):
    """The density violates the compatibility condition."""


COMPAT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MAProblem:
    grid: Grid
    eF: ScalarField
    p: float = 2.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.eF.values
        if np.any(v <= 0):
            raise FieldError("e^F must be positive at every node")
        if self.grid.kind == RADIAL_LOG:
            # local model: no compatibility condition on a punctured ball
            return
        vol = total_volume(self.grid)
        mass = self.eF.integral()
        if abs(mass - vol) > COMPAT_TOL * vol:
            raise IncompatibleDensityError(
                f"compatibility violated: integral of e^F = {mass!r}, volume = {vol!r}")


@dataclass(frozen=True, eq=False)
class MASolution:
    problem: MAProblem
    u: ScalarField
    residual_sup: float
    positivity_margin: float
    shift: float


@dataclass(frozen=True, eq=False)
class AuxiliarySolve:
    s: float
    k: float
    tau_scale: float
    psi: ScalarField
    A_sk: float
    epsilon: float
    Lambda: float
    r: float
    rhs: ScalarField | None = None
    empty: bool = False
    residual_sup: float = 0.0


# --- Poisson kernels ----------------------------------------------------------

def _torus_symbol(grid: Grid) -> np.ndarray:
    N = grid.shape[0]
    h = grid.spacing[0]
    kx = 2 * np.cos(2 * np.pi * np.arange(N) / N) - 2
    ky = 2 * np.cos(2 * np.pi * np.arange(N // 2 + 1) / N) - 2
    return TRACE_CALIBRATION * (kx[:, None] + ky[None, :]) / (h * h)


def _solve_trace_torus(g: np.ndarray, grid: Grid) -> np.ndarray:
    lam = _torus_symbol(grid)
    gh = np.fft.rfft2(g)
    lam[0, 0] = 1.0
    uh = gh / lam
    uh[0, 0] = 0.0
    return np.fft.irfft2(uh, s=g.shape)


def _solve_trace_sphere(g: np.ndarray, grid: Grid) -> np.ndarray:
    # flux_sum(u) = area * g / TRACE_CALIBRATION
    nth, nph = grid.shape
    dth, dph = grid.spacing
    th = grid.coords[0]
    rhs = np.fft.rfft(grid.weights * g / TRACE_CALIBRATION, axis=1)
    s_face = np.sin(np.arange(1, nth) * dth)
    off = (dph / dth) * s_face
    diag0 = np.zeros(nth)
    diag0[:-1] -= off
    diag0[1:] -= off
    coef = dth / (np.sin(th) * dph)
    out = np.zeros_like(rhs)
    for m in range(rhs.shape[1]):
        diag = diag0 + coef * (2 * np.cos(m * dph) - 2)
        if m == 0:
            # constants span the kernel; pin the last ring and drop its equation
            ab = np.zeros((3, nth - 1))
            ab[0, 1:] = off[:-1]
            ab[1] = diag[:-1]
            ab[2, :-1] = off[:-1]
            sol = solve_banded((1, 1), ab, rhs[:-1, 0])
            out[:-1, 0] = sol
            out[-1, 0] = 0.0
        else:
            ab = np.zeros((3, nth))
            ab[0, 1:] = off
            ab[1] = diag
            ab[2, :-1] = off
            out[:, m] = solve_banded((1, 1), ab, rhs[:, m])
    return np.fft.irfft(out, n=nph, axis=1)


def solve_trace_equation(g: ScalarField) -> ScalarField:
    """Zero-mean u with tr(i ddbar u) = g on a closed n = 1 grid.

    ``g`` must integrate to zero; the mean is projected out.
    """
    grid = g.grid
    vol = total_volume(grid)
    gv = g.values - g.integral() / vol
    if grid.kind == FLAT_TORUS:
        u = _solve_trace_torus(gv, grid)
    elif grid.kind == FUBINI_STUDY:
        u = _solve_trace_sphere(gv, grid)
    else:
        raise SolverError("grid solves need a closed n = 1 background")
    u = u - np.sum(u * grid.weights) / vol
    return g.with_values(u, "u")


def solve_n1(problem: MAProblem) -> MASolution:
    """Solve the n = 1 equation and normalize so that inf u = 1."""
    grid = problem.grid
    if grid.kind not in (FLAT_TORUS, FUBINI_STUDY):
        raise SolverError("solve_n1 needs a flat torus or Fubini-Study grid")
    g = problem.eF.with_values(problem.eF.values - 1.0)
    u0 = solve_trace_equation(g).values
    shift = 1.0 - float(np.min(u0))
    u = ScalarField(grid, u0 + shift, "u")
    tr = 1.0 + laplacian_values(u.values, grid)
    res = float(np.max(np.abs(tr - problem.eF.values)))
    if not np.isfinite(res):
        raise SolverError("solve produced non-finite values")
    return MASolution(problem, u, res, float(np.min(tr)), shift)


def residual(obj) -> float:
    """Sup-norm mismatch of the discrete equation for a solution or auxiliary solve."""
    if isinstance(obj, MASolution):
        tr = 1.0 + laplacian_values(obj.u.values, obj.u.grid)
        return float(np.max(np.abs(tr - obj.problem.eF.values)))
    if isinstance(obj, AuxiliarySolve):
        if obj.empty:
            return 0.0
        tr = 1.0 + laplacian_values(obj.psi.values, obj.psi.grid)
        return float(np.max(np.abs(tr - obj.rhs.values)))
    raise TypeError(f"cannot compute a residual for {type(obj).__name__}")


def verify_linfty(solution: MASolution, p: float | None = None) -> dict:
    """Report sup u next to the Orlicz norm of the right-hand side."""
    p = solution.problem.p if p is None else p
    return {
        "sup_u": float(np.max(solution.u.values)),
        "inf_u": float(np.min(solution.u.values)),
        "p": float(p),
        "orlicz_norm": orlicz_norm(solution.problem.eF, p),
    }


# --- radial reduction ---------------------------------------------------------

class RadialSolveError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Radial potential f(t) with f'^(n-1) f'' = G and w = (f')^n."""

    t: np.ndarray
    f: np.ndarray
    fp: np.ndarray
    w: np.ndarray
    n: int
    G: np.ndarray
    w_spline: object = field(default=None, repr=False)

    def ma_density(self) -> np.ndarray:
        """f'^{n-1} f'' recovered by differentiating w once."""
        if self.w_spline is None:
            return CubicSpline(self.t, self.w)(self.t, 1) / self.n
        return self.w_spline(self.t, 1) / self.n

    def eigenvalues(self):
        """Radial and tangential eigenvalues of i ddbar f against the flat metric."""
        fpp = self.ma_density() / np.where(self.n > 1, self.fp ** (self.n - 1), 1.0)
        e = np.exp(-self.t)
        return fpp * e, self.fp * e


def solve_radial(n: int, G, f_prime_at_tmin: float, f_at_tmin: float,
                 t: np.ndarray) -> RadialProfile:
    """Integrate f'^(n-1) f'' = G on the t-grid.

    With w = (f')^n the equation is w' = n G, so the profile follows from
    two cumulative integrations of cubic-spline interpolants.
    """
    t = np.asarray(t, dtype=float)
    G = np.broadcast_to(np.asarray(G, dtype=float), t.shape).copy()
    if np.any(G < 0):
        raise RadialSolveError("G must be nonnegative")
    if not f_prime_at_tmin > 0:
        raise RadialSolveError("f'(t_min) must be positive")
    wspl = CubicSpline(t, n * G).antiderivative()
    w = f_prime_at_tmin ** n + wspl(t)
    if np.any(w <= 0):
        i = int(np.argmax(w <= 0))
        raise RadialSolveError(f"loss of plurisubharmonicity: w <= 0 at t = {t[i]!r}")
    fp = w ** (1.0 / n)
    if n == 1:
        f = f_at_tmin + f_prime_at_tmin * (t - t[0]) + wspl.antiderivative()(t)
    else:
        f = f_at_tmin + CubicSpline(t, fp).antiderivative()(t)
    return RadialProfile(t, f, fp, w, n, G, wspl)


# --- auxiliary equations --------------------------------------------------------

def tau_k(x, k: float):
    """Smooth positive approximation of max(x, 0), decreasing in k."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (x + np.sqrt(x * x + 1.0 / (k * k)))


def level_gap(u, u_delta, r: float, delta: float, s: float, gap: float | None = None):
    """-u + (1 - r) u_delta - gap - s with the default gap 2 delta."""
    gap = 2.0 * delta if gap is None else gap
    return -np.asarray(u) + (1.0 - r) * np.asarray(u_delta) - gap - s


def aux_constants(A: float, r: float, n: int = 1):
    eps = ((n + 1) / n) ** (n / (n + 1)) * A ** (1.0 / (n + 1))
    lam = n / (n + 1) * A / r ** (n + 1)
    return eps, lam


EMPTY_THRESHOLD = 1e-14


def solve_auxiliary(problem: MAProblem, u: ScalarField, u_delta: ScalarField, s: float,
                    k: float, r: float, delta: float, gap: float | None = None) -> AuxiliarySolve:
    """Solve the level-s auxiliary equation with right-hand side tau_k(gap) e^F / A_sk."""
    grid = problem.grid
    if grid.background.n != 1 or grid.kind == RADIAL_LOG:
        raise SolverError("auxiliary solves are implemented for closed n = 1 grids")
    X = level_gap(u.values, u_delta.values, r, delta, s, gap)
    tau = tau_k(X, k)
    A = float(np.sum(tau * problem.eF.values * grid.weights))
    if A < EMPTY_THRESHOLD:
        zero = ScalarField(grid, np.zeros(grid.shape), "psi")
        return AuxiliarySolve(s, k, 1.0 / k, zero, A, 0.0, 0.0, r, None, True)
    vol = total_volume(grid)
    rhs = tau * problem.eF.values * vol / A
    rhs_f = ScalarField(grid, rhs, "aux_rhs")
    psi = solve_trace_equation(rhs_f.with_values(rhs - 1.0)).values
    psi = psi - np.max(psi)
    psi_f = ScalarField(grid, psi, "psi")
    eps, lam = aux_constants(A, r, grid.background.n)
    res = float(np.max(np.abs(1.0 + laplacian_values(psi, grid) - rhs)))
    return AuxiliarySolve(s, k, 1.0 / k, psi_f, A, eps, lam, r, rhs_f, False, res)
