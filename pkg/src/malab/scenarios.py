"""Example families, manufactured problems and full pipeline experiments.

Families
--------
``Example1``
    The radial potential ``(-log(eps + |z|^2))^{-a}`` on a punctured ball,
    with its closed-form density.
``Example1Regularized``
    The same potential glued into the flat torus with a smooth cutoff and
    solved as a Monge-Ampere problem.
``Example2``
    The line-bundle family on the Fubini-Study sphere.
``Manufactured``
    Torus problems with known solutions (``variant`` smooth or well).
``PowerSingularity``
    Densities ``|z|^{-2 beta}`` on a radial ball, for the Hoelder mode.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import estimates as est
from .fields import ScalarField, laplacian_values, lq_norm, normalize_density, orlicz_norm
from .geometry import FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG, Grid, grid_from_descriptor, radial_grid
from .metric import (diameter, dini_integral, meridian_distance,
                     metric_from_solution, morrey_check)
from .solver import (MAProblem, solve_auxiliary, solve_n1, solve_radial,
                     verify_linfty)
from .transforms import (_smooth_step, check_l1_closeness, default_t_grid, estimate_K,
                         kiselman_legendre, psh_defect)

SCHEMA_VERSION = 1
FAMILIES = ("Example1", "Example1Regularized", "Example2", "Manufactured", "PowerSingularity")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# --- Example 1 ------------------------------------------------------------------------

def example1_potential(t, a: float, eps: float = 0.0):
    """(-log(eps + e^t))^{-a} as a function of t = log |z|^2."""
    return (-np.log(eps + np.exp(t))) ** (-a)


def example1_slope(t, a: float, eps: float = 0.0):
    """d/dt of the Example 1 potential: a L^{-a-1} e^t / (eps + e^t)."""
    x = np.exp(np.asarray(t, dtype=float))
    return a * (-np.log(eps + x)) ** (-a - 1) * x / (eps + x)


def example1_density(t, a: float, eps: float = 0.0):
    """Trace of i ddbar of the Example 1 potential against the flat metric.

    With x = e^t, L = -log(eps + x) and sig = x / (eps + x):
    a / (eps + x) * [(1 - sig) L^{-a-1} + (a + 1) sig L^{-a-2}].
    At eps = 0 this is a(a + 1) / (|z|^2 L^{a+2}).
    """
    t = np.asarray(t, dtype=float)
    x = np.exp(t)
    L = -np.log(eps + x)
    sig = x / (eps + x)
    return a / (eps + x) * ((1 - sig) * L ** (-a - 1) + (a + 1) * sig * L ** (-a - 2))


def example1_problem(a: float, epsilon: float, grid: Grid, p: float = 2.0,
                     inner: float = 0.15, outer: float = 0.45):
    """Density and reference potential of Example 1.

    On a radial grid the density is returned as is (no compatibility on a
    ball).  On the torus the potential is centred at (1/2, 1/2), blended to
    the constant ``phi(outer)`` between ``inner`` and ``outer`` and scaled
    by ``kappa`` so that the glued density stays above 1/2; e^F is then the
    discrete equation applied to the glued potential, so compatibility is
    exact and the solution is the reference potential up to a constant.
    """
    if a <= 0:
        raise ConfigError("Example 1 needs a > 0")
    if epsilon < 0:
        raise ConfigError("epsilon must be nonnegative")
    meta = {"family": "Example1", "a": a, "epsilon": epsilon}
    if grid.kind == RADIAL_LOG:
        if grid.background.n != 1:
            raise ConfigError("Example 1 densities are implemented for n = 1")
        t = grid.t
        eF = ScalarField(grid, example1_density(t, a, epsilon), "eF")
        ref = ScalarField(grid, example1_potential(t, a, epsilon), "phi")
        return MAProblem(grid, eF, p, meta), ref
    if grid.kind != FLAT_TORUS:
        raise ConfigError("Example 1 runs on radial or torus grids")
    if epsilon <= 0:
        raise ConfigError("epsilon = 0 is only allowed on the punctured radial grid")
    x, y = grid.mesh()
    dx = (x - 0.5 + 0.5) % 1.0 - 0.5
    dy = (y - 0.5 + 0.5) % 1.0 - 0.5
    rho2 = dx * dx + dy * dy
    phi = (-np.log(epsilon + rho2)) ** (-a)
    c_out = (-math.log(epsilon + outer ** 2)) ** (-a)
    chi = 1.0 - _smooth_step((np.sqrt(rho2) - inner) / (outer - inner))
    v = chi * phi + (1 - chi) * c_out
    lap = laplacian_values(v, grid)
    kappa = min(1.0, 0.5 / max(float(np.max(-lap)), 1e-300))
    u_ref = 1.0 + kappa * (v - v.min())
    eF = ScalarField(grid, 1.0 + laplacian_values(u_ref, grid), "eF")
    meta.update({"gluing": {"centre": [0.5, 0.5], "inner": inner, "outer": outer,
                            "kappa": kappa}})
    return MAProblem(grid, normalize_density(eF), p, meta), ScalarField(grid, u_ref, "phi")


def example1_orlicz(a: float, p: float, cutoff: float, dt: float = 0.005,
                    outer: float = 0.5) -> float:
    """Orlicz norm of the eps = 0 density on cutoff <= |z| <= outer."""
    t_min, t_max = 2 * math.log(cutoff), 2 * math.log(outer)
    n = int(math.ceil((t_max - t_min) / dt)) + 1
    g = radial_grid(n, t_min, t_max)
    return orlicz_norm(ScalarField(g, example1_density(g.t, a)), p)


# --- Example 2 ------------------------------------------------------------------------

def example2_effective_epsilon(epsilon: float) -> float:
    """epsilon/4, so eps = 1 keeps eps + |s|^2 <= 3/4 below one."""
    return epsilon / 4.0


def _ex2_antiderivative(rho, eps, a):
    # d/drho of (-log(eps + rho))^{1-a}/(a-1) is 1/((eps + rho)(-log(eps + rho))^a)
    with np.errstate(divide="ignore"):
        L = -np.log(eps + np.asarray(rho, dtype=float))
    return np.where(np.isfinite(L), L ** (1 - a) / (a - 1), 0.0)


def example2_density(grid: Grid, a: float, epsilon: float):
    """Cell averages of the Example 2 density and the constant C_eps.

    ``|s|_h^2 = |z|^2 / (2 (1 + |z|^2)) = mu / 2`` with ``mu = sin^2(theta/2)``,
    and the volume form is ``d mu d phi / (2 pi)``.  Band integrals are
    exact through the closed-form antiderivative in rho = mu / 2.
    """
    if grid.kind != FUBINI_STUDY:
        raise ConfigError("Example 2 lives on the Fubini-Study sphere")
    if not a > 1:
        # a > 1 keeps the closed-form antiderivative finite at eps = 0
        raise ConfigError("Example 2 needs a > 1")
    if not (0 < epsilon <= 1):
        raise ConfigError("Example 2 needs 0 < epsilon <= 1")
    eps = example2_effective_epsilon(epsilon)
    if eps + 0.5 >= 1:
        raise ConfigError("eps + sup |s|^2 must stay below 1")
    dth = grid.spacing[0]
    edges = np.arange(grid.shape[0] + 1) * dth
    mu = np.sin(edges / 2) ** 2
    Fint = _ex2_antiderivative(mu / 2, eps, a)
    band = 2 * np.diff(Fint)  # integral of g d mu over each band
    total = 2 * float(_ex2_antiderivative(0.5, eps, a) - _ex2_antiderivative(0.0, eps, a))
    C = 1.0 / total
    avg = C * band / np.diff(mu)
    return np.repeat(avg[:, None], grid.shape[1], axis=1), C


def example2_pointwise(mu, a: float, epsilon: float):
    """Unnormalized density 1/((eps + mu/2)(-log(eps + mu/2))^a)."""
    eps = example2_effective_epsilon(epsilon)
    x = eps + np.asarray(mu, dtype=float) / 2
    return 1.0 / (x * (-np.log(x)) ** a)


def example2_problem(a: float, epsilon: float, grid: Grid, p: float = 3.5) -> MAProblem:
    vals, C = example2_density(grid, a, epsilon)
    eF = normalize_density(ScalarField(grid, vals, "eF"))
    meta = {"family": "Example2", "a": a, "epsilon": epsilon,
            "epsilon_effective": example2_effective_epsilon(epsilon), "C_eps": C,
            "section_norm": "|z|^2/(2(1+|z|^2))", "volume": 1.0}
    return MAProblem(grid, eF, p, meta)


# --- power singularity ----------------------------------------------------------------

def power_singularity_problem(beta: float, grid: Grid, p: float = 2.0) -> MAProblem:
    """Density proportional to |z|^{-2 beta}, normalized on the radial ball."""
    if not (0 < beta < 1):
        raise ConfigError("beta must lie in (0, 1)")
    if grid.kind != RADIAL_LOG or grid.background.n != 1:
        raise ConfigError("power singularity runs on n = 1 radial grids")
    raw = ScalarField(grid, np.exp(-beta * grid.t), "eF")
    eF = normalize_density(raw)
    return MAProblem(grid, eF, p, {"family": "PowerSingularity", "beta": beta})


def power_singularity_solve(problem: MAProblem):
    """Radial solve of omega_0 + i ddbar u = e^F omega_0 at n = 1.

    The full potential f = e^t + u satisfies f'' e^{-t} = e^F; the boundary
    data at t_min follow the exact power law, so u = f - e^t.
    """
    g = problem.grid
    t = g.t
    beta = problem.meta["beta"]
    c0 = float(problem.eF.values[0] * math.exp(beta * t[0]))
    G = problem.eF.values * np.exp(t)
    e = math.exp((1 - beta) * t[0])
    prof = solve_radial(1, G, c0 / (1 - beta) * e, c0 / (1 - beta) ** 2 * e, t)
    u = ScalarField(g, prof.f - np.exp(t), "u")
    return prof, u


# --- manufactured ------------------------------------------------------------------------

def manufactured_problem(grid: Grid, amplitude: float = 0.04):
    """u* = 1 + A (1 + sin 2 pi x sin 2 pi y), e^F from the exact Laplacian."""
    if grid.kind != FLAT_TORUS:
        raise ConfigError("manufactured problems run on the torus")
    x, y = grid.mesh()
    L = grid.background.period
    k = 2 * math.pi / L
    s = np.sin(k * x) * np.sin(k * y)
    u = 1.0 + amplitude * (1.0 + s)
    eF = 1.0 - 0.25 * amplitude * 2 * k * k * s
    meta = {"family": "Manufactured", "variant": "smooth", "amplitude": amplitude}
    return (MAProblem(grid, normalize_density(ScalarField(grid, eF, "eF")), 2.0, meta),
            ScalarField(grid, u, "u_exact"))


def well_problem(grid: Grid, kappa: float = 0.18, sigma: float = 3e-3, p: float = 2.5):
    """Logarithmic well u* = 1 + kappa log(sigma^2 + s_x^2 + s_y^2) - min, s = sin(pi x)/pi.

    e^F is the discrete equation applied to u*, so the solve returns u*
    exactly up to rounding.
    """
    if grid.kind != FLAT_TORUS:
        raise ConfigError("manufactured problems run on the torus")
    x, y = grid.mesh()
    sx = np.sin(math.pi * x) / math.pi
    sy = np.sin(math.pi * y) / math.pi
    v = kappa * np.log(sigma ** 2 + sx * sx + sy * sy)
    u = 1.0 + v - v.min()
    eF = 1.0 + laplacian_values(u, grid)
    if np.any(eF <= 0):
        raise ConfigError("well too deep: e^F would be nonpositive")
    meta = {"family": "Manufactured", "variant": "well", "kappa": kappa, "sigma": sigma}
    return (MAProblem(grid, normalize_density(ScalarField(grid, eF, "eF")), p, meta),
            ScalarField(grid, u, "u_exact"))


# --- configuration ---------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    """One experiment; mirrors the JSON document (see README for the schema)."""

    family: str
    name: str = ""
    schema_version: int = SCHEMA_VERSION
    background: dict = field(default_factory=dict)
    a: float = 2.0
    epsilon: float = 0.0
    epsilons: list = field(default_factory=list)
    p: float = 2.5
    q: float | None = None
    beta: float = 0.25
    amplitude: float = 0.04
    variant: str = "smooth"
    kappa: float = 0.18
    sigma: float = 3e-3
    deltas: list = field(default_factory=lambda: [1e-2, 1e-3])
    s_levels: int = 32
    radii: list = field(default_factory=list)
    k_list: list = field(default_factory=lambda: [1e2, 1e4])
    beta0: float = 0.1
    c_rule: str = "log"
    gluing: dict = field(default_factory=lambda: {"inner": 0.15, "outer": 0.45})
    cutoffs: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    density_scale: float = 1.0
    diameter_sources: int = 16
    modulus_stride: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "family" not in d:
            raise ConfigError("config needs a 'family'")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.a <= 0:
            raise ConfigError("a must be positive")
        if self.family == "Example2":
            for e in self.epsilons or [self.epsilon]:
                if not (0 < e <= 1):
                    raise ConfigError("Example 2 needs epsilon in (0, 1]")
        if self.family == "PowerSingularity" and not (0 < self.beta < 1):
            raise ConfigError("beta must lie in (0, 1)")
        if self.c_rule not in ("log", "holder"):
            raise ConfigError("c_rule must be 'log' or 'holder'")
        if not self.density_scale > 0:
            raise ConfigError("density_scale must be positive")
        if any(d <= 0 for d in self.deltas):
            raise ConfigError("deltas must be positive")

    def grid(self) -> Grid:
        bg = dict(self.background)
        defaults = {
            "Example1": {"kind": RADIAL_LOG, "resolution": [1024], "bounds": [2 * math.log(1e-8), 2 * math.log(0.5)]},
            "Example1Regularized": {"kind": FLAT_TORUS, "resolution": [512]},
            "Example2": {"kind": FUBINI_STUDY, "resolution": [128]},
            "Manufactured": {"kind": FLAT_TORUS, "resolution": [256]},
            "PowerSingularity": {"kind": RADIAL_LOG, "resolution": [4000], "bounds": [2 * math.log(1e-7), 2 * math.log(0.5)]},
        }[self.family]
        for k, v in defaults.items():
            bg.setdefault(k, v)
        try:
            return grid_from_descriptor(bg)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad background descriptor: {e}") from e


# --- pipeline stages ----------------------------------------------------------------------

def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - tagged and re-raised
        raise StageError(name, e) from e


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


def dumps_report(report: dict) -> str:
    """Canonical JSON text; identical inputs give identical bytes."""
    return json.dumps(_sanitize(report), sort_keys=True, indent=2) + "\n"


HOLDER_A0 = 0.5


def c_for_delta(delta: float, alpha: float, rule: str = "log") -> float:
    """c = |log delta|^-alpha, or delta^alpha with the Hoelder rule."""
    if rule == "holder":
        return delta ** alpha
    return abs(math.log(delta)) ** (-alpha)


def _exponent(cfg, n: int) -> float:
    if cfg.c_rule == "holder":
        if cfg.q is None:
            raise ConfigError("c_rule 'holder' needs q")
        return est.predicted_holder(n, cfg.q)
    return est.predicted_alpha(n, cfg.p)


def _trace_overrides(cfg, delta: float, n: int) -> dict:
    """r, gap and a0 of the Hoelder mode; empty for the logarithmic mode."""
    if cfg.c_rule != "holder":
        return {}
    hp = est.holder_parameters(delta, cfg.q, n)
    return {"r": hp["r"], "c": delta ** hp["alpha0"], "gap": hp["gap"], "a0": HOLDER_A0}


def transform_stage(problem: MAProblem, u: ScalarField, cfg: ScenarioConfig):
    """K, Kiselman transform, defect and closeness per delta."""
    grid = problem.grid
    n = grid.background.n
    alpha = _exponent(cfg, n)
    A = grid.background.curvature_A
    rows, results = [], {}
    for d in cfg.deltas:
        t = default_t_grid(d)
        K = estimate_K(u, t)
        c = c_for_delta(d, alpha, cfg.c_rule)
        kr = kiselman_legendre(u, c, d, K, t)
        defect = psh_defect(kr.U_delta)
        bound = -(A * c + K * d * d)
        rows.append({"delta": d, "c": c, "K": K, "A_prime": kr.A_prime,
                     "monotonicity_violation": kr.monotonicity_violation,
                     "psh_defect": defect, "defect_bound": bound,
                     "defect_ok": bool(defect >= bound - 1e-6),
                     "theta_min": float(np.min(kr.argmin_t.values) / d),
                     "upper_gap": float(np.max(kr.U_delta.values - kr.rho_delta_u.values)),
                     "lower_gap": float(np.min(kr.U_delta.values - (u.values - K * d * d)))})
        results[d] = kr
    h = grid.h
    ds = [d for d in np.geomspace(4 * h, 0.1, 6)] if 4 * h < 0.1 else []
    closeness = None
    if len(ds) >= 3:
        tab = check_l1_closeness(u, ds)
        closeness = {"rows": tab.rows(), "slope": tab.slope}
    final = est.final_smoothing_check(u, cfg.deltas, alpha, c_rule=cfg.c_rule)
    return rows, results, closeness, final


def degiorgi_stage(problem: MAProblem, u: ScalarField, kres: dict, cfg: ScenarioConfig):
    """Level-set traces, De Giorgi verdicts, comparison sweep and Trudinger moments."""
    summaries, trace_rows, cmp_rows = [], [], []
    for d, kr in kres.items():
        ud = kr.u_delta_normalized
        over = _trace_overrides(cfg, d, problem.grid.background.n)
        tr = est.build_trace(u, ud, problem.eF, d, cfg.p, levels=cfg.s_levels, **over)
        C3, S_inf, verdict = est.degiorgi_analyze(tr)
        trace_rows.extend(tr.rows(cfg.name))
        phi0 = float(tr.phi[0])
        moment = est.trudinger_moment(u.values, ud.values, d, tr.r, 0.0, phi0, problem.grid,
                                      cfg.beta0, over.get("gap")) if phi0 > 0 else 0.0
        summaries.append({"delta": d, "r": tr.r, "c": tr.c, "a0": tr.a0,
                          "phi0": phi0, "mass0": float(tr.mass[0]), "gap_sup": tr.gap_sup,
                          "C3_fit": C3, "S_inf_bound": S_inf, "verdict": verdict,
                          "tail_bound_violation": est.tail_bound_violation(tr),
                          "trudinger_moment": moment,
                          "phi0_over_r_power": phi0 / tr.r ** (problem.grid.background.n + 1)})
        for s in (0.0, tr.gap_sup / 2):
            for k in cfg.k_list:
                aux = solve_auxiliary(problem, u, ud, s, k, tr.r, d, over.get("gap"))
                m = est.comparison_test(u.values, ud.values, aux, tr.r, d, s, over.get("gap"))
                cmp_rows.append({"delta": d, "s": s, "k": k, "A_sk": aux.A_sk,
                                 "epsilon": aux.epsilon, "Lambda": aux.Lambda,
                                 "empty": aux.empty, "aux_residual": aux.residual_sup,
                                 "max_Psi": m})
    return summaries, trace_rows, cmp_rows


def modulus_stage(u: ScalarField, cfg: ScenarioConfig, radii=None, anchor=None,
                  r_min=None, r_max=None):
    grid = u.grid
    if radii is None:
        radii = cfg.radii or list(np.geomspace(4 * grid.h, 0.25, 10))
    prof = est.modulus_of_continuity(u, radii, anchor=anchor, stride=cfg.modulus_stride,
                                     p=cfg.p, q=cfg.q)
    return est.with_fits(prof, r_min, r_max)


def metric_stage(sol, cfg: ScenarioConfig, prof=None):
    m = metric_from_solution(sol)
    rep = diameter(m, cfg.diameter_sources)
    out = rep.to_dict()
    if prof is not None and np.isfinite(prof.fit_log[1]):
        out["dini"] = dini_integral(prof)
        out["dini_integral"] = out["dini"]["total"]
    rs = [0.25 / 2 ** k for k in range(6)]
    base = (0, 0)
    grid = sol.u.grid
    samples = [(grid.shape[0] // 4, grid.shape[1] // 4), (grid.shape[0] // 2, grid.shape[1] // 2)]
    omega = None
    if prof is not None:
        omega = lambda r: float(np.interp(r, prof.radii, prof.omega))  # noqa: E731
    mc = morrey_check(m, base, samples, rs, omega)
    out["morrey"] = {"C_fit": mc["C_fit"], "telescoping": mc["telescoping"],
                     "skipped": mc["skipped"]}
    return out, mc["rows"], m


# --- experiments ---------------------------------------------------------------------------

def _closed_pipeline(problem, u_exact, cfg, stages, report, tables, plot):
    sol = _stage("solve", solve_n1, problem)
    report["solve"] = {"residual_sup": sol.residual_sup, "positivity_margin": sol.positivity_margin,
                       "shift": sol.shift, **verify_linfty(sol)}
    if u_exact is not None:
        report["solve"]["error_vs_exact"] = float(np.max(np.abs(sol.u.values - u_exact.values)))
    u = sol.u
    kres = {}
    if "transform" in stages or "degiorgi" in stages:
        rows, kres, clo, final = _stage("transform", transform_stage, problem, u, cfg)
        report["transform"] = {"rows": rows, "closeness": clo, "final_smoothing": final}
        tables["transform"] = rows
    if "degiorgi" in stages:
        summ, trows, crows = _stage("degiorgi", degiorgi_stage, problem, u, kres, cfg)
        report["degiorgi"] = {"levels": summ, "comparison": crows,
                              "comparison_max_Psi": max(r["max_Psi"] for r in crows)}
        tables["levelsets"] = trows
        tables["comparison"] = crows
    prof = None
    if "modulus" in stages or "metric" in stages:
        prof = _stage("modulus", modulus_stage, u, cfg)
        report["modulus"] = {"fit_log": prof.fit_log, "fit_holder": prof.fit_holder,
                             "predicted_alpha": prof.predicted_alpha,
                             "alpha_fit": prof.fit_log[1]}
        plot["modulus"] = prof.rows()
    if "metric" in stages:
        out, mrows, _ = _stage("metric", metric_stage, sol, cfg, prof)
        report["metric"] = out
        tables["morrey"] = mrows
    return sol


def _run_example1(cfg, grid, stages, report, tables, plot):
    problem, ref = _stage("setup", example1_problem, cfg.a, cfg.epsilon, grid, cfg.p,
                          cfg.gluing.get("inner", 0.15), cfg.gluing.get("outer", 0.45))
    n = 1
    alpha = est.predicted_alpha(n, cfg.p)
    report["predicted_alpha"] = alpha
    t = grid.t
    lap = laplacian_values(ref.values, grid)
    rho = grid.radii
    inner = (rho >= 0.05) & (rho <= 0.45)
    rel = np.abs(lap[inner] / problem.eF.values[inner] - 1)
    report["density_check"] = {"max_rel_error": float(rel.max()), "range": [0.05, 0.45]}
    cut = cfg.cutoffs or [1e-2, 1e-4, 1e-6, 1e-8]
    orl = [{"cutoff": c, "p": cfg.p, "orlicz": _stage("orlicz", example1_orlicz, cfg.a, cfg.p, c)}
           for c in cut]
    report["orlicz_sweep"] = orl
    tables["orlicz"] = orl
    radii = cfg.radii or list(np.geomspace(1e-3, 1e-1, 9))
    prof = _stage("modulus", modulus_stage, ref, cfg, radii)
    ratio = [{"r": float(r), "omega": float(o), "omega_times_logr_a": float(o * abs(math.log(r)) ** cfg.a)}
             for r, o in zip(prof.radii, prof.omega)]
    report["modulus"] = {"alpha_fit": prof.fit_log[1], "C_fit": prof.fit_log[0],
                         "predicted_alpha": alpha, "sharpness_table": ratio}
    anch = _stage("modulus", modulus_stage, ref, cfg, radii, "origin")
    report["modulus"]["anchored_alpha_fit"] = anch.fit_log[1]
    plot["modulus"] = prof.rows()
    tables["sharpness"] = ratio
    # radial reduction round trip on the reference potential
    prof_r = _stage("solve", solve_radial, 1, example1_density(t, cfg.a, cfg.epsilon) * np.exp(t),
                    float(example1_slope(t[0], cfg.a, cfg.epsilon)), float(ref.values[0]), t)
    inter = (rho >= 0.05) & (rho <= 0.45)
    report["radial_solve"] = {"max_rel_error": float(np.max(np.abs(prof_r.f[inter] / ref.values[inter] - 1)))}


def _run_example2(cfg, grid, stages, report, tables, plot):
    eps_list = cfg.epsilons or [cfg.epsilon or 1.0]
    rows = []
    for e in eps_list:
        problem = _stage("setup", example2_problem, cfg.a, e, grid, cfg.p)
        problem = _stage("setup", _rescaled, problem, cfg.density_scale)
        sol = _stage("solve", solve_n1, problem)
        row = {"epsilon": e, "C_eps": problem.meta["C_eps"], "residual_sup": sol.residual_sup,
               **verify_linfty(sol)}
        if "modulus" in stages or "metric" in stages:
            h = grid.h
            prof = _stage("modulus", modulus_stage, sol.u, cfg,
                          list(np.geomspace(4 * h, 0.5, 14)), None, None, 0.1)
            row["alpha_fit"] = prof.fit_log[1]
            plot[f"modulus_eps{e:g}"] = prof.rows()
        if "metric" in stages:
            m = metric_from_solution(sol)
            drep = _stage("metric", diameter, m, cfg.diameter_sources)
            row["diameter"] = drep.diameter
            row["source_count"] = len(drep.sources)
            dini = dini_integral(prof)
            row["dini"] = dini
            row["dini_integral"] = dini["total"]
            md = meridian_distance(m)
            row["meridian_length"] = float(md[-1])
        rows.append(row)
    report["sweep"] = rows
    tables["example2"] = [{k: v for k, v in r.items() if not isinstance(v, dict)} for r in rows]


def _run_power(cfg, grid, stages, report, tables, plot):
    problem = _stage("setup", power_singularity_problem, cfg.beta, grid, cfg.p)
    prof_r, u = _stage("solve", power_singularity_solve, problem)
    beta = cfg.beta
    q = cfg.q or 0.975 / beta
    radii = cfg.radii or list(np.geomspace(1e-5, 1e-2, 10))
    anch = est.with_fits(est.modulus_of_continuity(u, radii, anchor="origin", q=q))
    glob = est.with_fits(est.modulus_of_continuity(u, radii, q=q))
    report["holder"] = {"q": q, "predicted_holder": est.predicted_holder(1, q),
                        "oracle_exponent": 2 - 2 * beta,
                        "anchored_fit": anch.fit_holder, "global_fit": glob.fit_holder}
    # Lq norms of the truncated density rho^(-2 beta) for q on both sides of 1/beta
    c0 = float(problem.eF.values[0]) * math.exp(beta * grid.t[0])
    lq = []
    for qq in (q, 1 / beta + 0.1):
        for c in (1e-2, 1e-4, 1e-6):
            g = radial_grid(2000, 2 * math.log(c), 2 * math.log(0.5))
            lq.append({"q": qq, "cutoff": c,
                       "lq_norm": lq_norm(ScalarField(g, c0 * np.exp(-beta * g.t)), qq)})
    report["lq_sweep"] = lq
    tables["lq"] = lq
    plot["modulus_anchored"] = anch.rows()


def _rescaled(problem: MAProblem, scale: float) -> MAProblem:
    """The same problem with e^F multiplied by ``scale``; anything but 1 breaks compatibility."""
    if scale == 1.0:
        return problem
    eF = problem.eF.with_values(problem.eF.values * scale)
    return MAProblem(problem.grid, eF, problem.p, problem.meta)


def run_experiment(cfg: ScenarioConfig, out_dir: str | None = None,
                   stages: list | None = None) -> dict:
    """Run the configured pipeline; write report.json, tables/*.csv, plotdata/*.csv."""
    cfg.validate()
    grid = cfg.grid()
    all_stages = ["solve", "transform", "degiorgi", "modulus", "metric"]
    stages = stages or cfg.stages or all_stages
    report = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
              "grid": grid.descriptor(), "seed": cfg.seed, "failed": False}
    tables, plot = {}, {}
    try:
        if cfg.family in ("Manufactured", "Example1Regularized"):
            if cfg.family == "Manufactured":
                if cfg.variant == "well":
                    problem, ue = _stage("setup", well_problem, grid, cfg.kappa, cfg.sigma, cfg.p)
                else:
                    problem, ue = _stage("setup", manufactured_problem, grid, cfg.amplitude)
            else:
                problem, ue = _stage("setup", example1_problem, cfg.a, cfg.epsilon or 1e-6, grid,
                                     cfg.p, cfg.gluing.get("inner", 0.15),
                                     cfg.gluing.get("outer", 0.45))
                report["gluing"] = problem.meta.get("gluing")
            problem = _stage("setup", _rescaled, problem, cfg.density_scale)
            report["predicted_alpha"] = est.predicted_alpha(1, cfg.p)
            _closed_pipeline(problem, ue, cfg, stages, report, tables, plot)
        elif cfg.family == "Example1":
            _run_example1(cfg, grid, stages, report, tables, plot)
        elif cfg.family == "Example2":
            _run_example2(cfg, grid, stages, report, tables, plot)
        else:
            _run_power(cfg, grid, stages, report, tables, plot)
    except StageError as e:
        report["failed"] = True
        report["failure"] = {"stage": e.stage, "error": str(e.cause),
                             "type": type(e.cause).__name__}
        if out_dir:
            write_outputs(out_dir, report, tables, plot)
        raise
    if out_dir:
        write_outputs(out_dir, report, tables, plot)
    return report


def write_outputs(out_dir: str, report: dict, tables: dict, plot: dict):
    os.makedirs(os.path.join(out_dir, "tables"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "plotdata"), exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dumps_report(report))
    for name, rows in sorted(tables.items()):
        with open(os.path.join(out_dir, "tables", f"{name}.csv"), "w") as fh:
            fh.write(est.rows_to_csv(_sanitize(rows)))
    for name, rows in sorted(plot.items()):
        with open(os.path.join(out_dir, "plotdata", f"{name}.csv"), "w") as fh:
            fh.write(est.rows_to_csv(_sanitize(rows)))
