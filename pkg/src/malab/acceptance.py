"""The acceptance gate: one function per criterion, each returning a Result.

Reports exclude wall-clock timings (they go to a separate dict) so that two
runs on the same build produce byte-identical JSON.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimates as est
from .fields import laplacian_values
from .geometry import background_distance, radial_grid, torus_grid
from .metric import MetricField, distance_field
from .scenarios import (ScenarioConfig, dumps_report, example1_orlicz, example1_problem,
                        manufactured_problem, power_singularity_problem,
                        power_singularity_solve, run_experiment)
from .solver import solve_n1
from .transforms import check_l1_closeness


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    note: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.note}"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "measured": self.measured, "note": self.note}


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def criterion_1(timings: dict) -> Result:
    errs, times = [], []
    for N in (128, 256, 512):
        prob, ue = manufactured_problem(torus_grid(N), 0.04)
        t0 = time.perf_counter()
        sol = solve_n1(prob)
        times.append(time.perf_counter() - t0)
        errs.append(float(np.max(np.abs(sol.u.values - ue.values))))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    timings["criterion_1_solve_seconds"] = times
    ok_time = max(times) < 5.0
    ok = all(3.6 <= r <= 4.4 for r in ratios) and ok_time
    return Result(1, "solver order", ok, {"errors": errs, "ratios": ratios, "under_5s": ok_time},
                  f"ratios {ratios[0]:.4f}, {ratios[1]:.4f}; max solve < 5 s: {ok_time}")


def criterion_2() -> Result:
    g = radial_grid(1024, 2 * math.log(1e-4), 2 * math.log(0.5))
    prob, ref = example1_problem(2.0, 0.0, g)
    lap = laplacian_values(ref.values, g)
    rho = g.radii
    sel = (rho >= 0.05) & (rho <= 0.45)
    closed = 6.0 / (rho[sel] ** 2 * (-np.log(rho[sel] ** 2)) ** 4)
    err = float(np.max(np.abs(lap[sel] / closed - 1)))
    return Result(2, "Example 1 closed form", err <= 0.02, {"max_rel_error": err},
                  f"max relative error {err:.2e} (limit 2e-2)")


def criterion_3() -> Result:
    a = 2.0
    lo, hi = 1e-4, 1e-8
    v25 = [example1_orlicz(a, 2.5, c) for c in (lo, hi)]
    v35 = [example1_orlicz(a, 3.5, c) for c in (lo, hi)]
    change = abs(v25[1] - v25[0]) / v25[0]
    growth = v35[1] / v35[0]
    ok = change < 0.05 and growth >= 2.0
    return Result(3, "Orlicz threshold", ok,
                  {"p2.5": v25, "p3.5": v35, "relative_change_p2.5": change, "growth_p3.5": growth},
                  f"p=2.5 change {change:.3%} (limit 5%); p=3.5 growth x{growth:.2f} (need 2)")


def criterion_4() -> Result:
    a, eps = 2.0, 1e-6
    g = radial_grid(4000, 2 * math.log(1e-7), 2 * math.log(0.5))
    _, ref = example1_problem(a, eps, g)
    radii = np.geomspace(1e-3, 1e-1, 9)
    prof = est.with_fits(est.modulus_of_continuity(ref, radii), 1e-3, 1e-1)
    alpha = prof.fit_log[1]
    ratio = prof.omega * np.abs(np.log(radii)) ** a
    ok = abs(alpha - a) <= 0.15 * a and ratio.min() >= 0.2 and ratio.max() <= 5
    # diagnostics: the same measurement at eps = 0 and the modulus anchored at z = 0
    _, ref0 = example1_problem(a, 0.0, g)
    p0 = est.with_fits(est.modulus_of_continuity(ref0, radii), 1e-3, 1e-1)
    pa = est.with_fits(est.modulus_of_continuity(ref0, radii, anchor="origin"), 1e-3, 1e-1)
    return Result(4, "Example 1 sharpness", bool(ok),
                  {"alpha_fit": alpha, "ratio_min": float(ratio.min()),
                   "ratio_max": float(ratio.max()), "alpha_fit_eps0": p0.fit_log[1],
                   "alpha_fit_eps0_anchored": pa.fit_log[1]},
                  f"alpha_fit {alpha:.3f} (target {a} +- 15%); Omega |log r|^a in "
                  f"[{ratio.min():.3f}, {ratio.max():.3f}] (need [0.2, 5])")


def criterion_5() -> Result:
    g = torus_grid(256)
    prob, _ = manufactured_problem(g, 0.04)
    u = solve_n1(prob).u
    deltas = np.geomspace(4 * g.h, 0.1, 6)
    tab = check_l1_closeness(u, deltas)
    return Result(5, "L1 closeness slope", tab.slope >= 1.9, {"slope": tab.slope,
                  "values": tab.values.tolist()}, f"slope {tab.slope:.4f} (need >= 1.9)")


def _example1_torus_report():
    cfg = ScenarioConfig(family="Example1Regularized", name="example1_torus", a=2.0,
                         epsilon=1e-6, p=2.5, background={"kind": "flat_torus", "resolution": [1024]},
                         deltas=[1e-2, 1e-3, 1e-4], stages=["solve", "transform", "degiorgi"])
    return run_experiment(cfg)


def criterion_6(rep) -> Result:
    rows = [r for r in rep["transform"]["rows"] if r["delta"] in (1e-2, 1e-3)]
    viol = max(r["monotonicity_violation"] for r in rows)
    margin = min(r["psh_defect"] - (r["defect_bound"] - 1e-6) for r in rows)
    ok = viol <= 1e-8 and margin >= 0
    return Result(6, "monotonicity and psh defect", ok,
                  {"rows": [{k: r[k] for k in ("delta", "K", "c", "psh_defect", "defect_bound",
                                                "monotonicity_violation")} for r in rows]},
                  f"max violation {viol:.1e}; defect - bound margin {margin:.3e}")


def criterion_7(rep, p: float = 2.5) -> Result:
    lv = rep["degiorgi"]["levels"]
    d = np.array([r["delta"] for r in lv])
    m = np.array([r["mass0"] for r in lv])
    if np.any(m <= 0):
        return Result(7, "level-set mass trend", False, {"mass0": m.tolist()},
                      "E_0 is empty for some delta, so the log-log slope is undefined")
    slope = _slope(1 / np.abs(np.log(d)), m)
    return Result(7, "level-set mass trend", abs(slope - p) <= 0.3, {"slope": slope, "mass0": m.tolist()},
                  f"slope {slope:.3f} (target {p} +- 0.3)")


def criterion_8(rep) -> Result:
    rows = [r for r in rep["degiorgi"]["comparison"] if r["delta"] in (1e-2, 1e-3)]
    worst = max(r["max_Psi"] for r in rows)
    empty = all(l["mass0"] == 0 for l in rep["degiorgi"]["levels"] if l["delta"] in (1e-2, 1e-3))
    note = f"max Psi {worst:.3e} over {len(rows)} solves"
    if empty:
        note += " (E_0 empty: vacuous at this resolution)"
    return Result(8, "comparison principle", worst <= 1e-6, {"max_Psi": worst, "E0_empty": empty},
                  note)


def criterion_9(rep) -> Result:
    lv = rep["degiorgi"]["levels"]
    ok = all(l["verdict"] for l in lv)
    phi0 = [l["phi0"] for l in lv]
    note = "E_s empty beyond S_inf for every delta"
    if all(p == 0 for p in phi0):
        note += " (phi = 0: trivial verdict)"
    return Result(9, "De Giorgi bound", ok,
                  {"S_inf": [l["S_inf_bound"] for l in lv], "C3_fit": [l["C3_fit"] for l in lv],
                   "phi0": phi0}, note)


def criterion_10(timings: dict) -> Result:
    cfg = ScenarioConfig(family="Example2", name="example2", a=3.0, p=3.5,
                         epsilons=[1.0, 1e-2, 1e-4, 1e-6], stages=["solve", "modulus", "metric"])
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    timings["criterion_10_sweep_seconds"] = elapsed
    diam = [r["diameter"] for r in rep["sweep"]]
    dini = [r["dini_integral"] for r in rep["sweep"]]
    finite = all(isinstance(x, float) and math.isfinite(x) for x in dini)
    dr = max(diam) / min(diam)
    nr = max(dini) / min(dini) if finite else math.inf
    ok = dr <= 2 and finite and nr <= 3 and elapsed < 60
    return Result(10, "Example 2 diameters", ok,
                  {"diameters": diam, "dini": dini, "diameter_ratio": dr, "dini_ratio": nr,
                   "alpha_fit": [r["alpha_fit"] for r in rep["sweep"]], "under_60s": elapsed < 60},
                  f"diameter ratio {dr:.3f} (<= 2); Dini ratio {nr:.3f} (<= 3); under 60 s: {elapsed < 60}")


def criterion_11() -> Result:
    g = torus_grid(256)
    pts = g.points()
    exact = background_distance(g.background, pts[0][None, :], pts).reshape(g.shape)
    sel = exact >= 4 * g.h
    out = {}
    for st in (16, 32):
        m = MetricField(g, np.ones(g.shape), stencil=st)
        D = distance_field(m, [0])[0]
        rel = np.abs(D[sel] - exact[sel]) / exact[sel]
        out[st] = (float(rel.max()), float(rel.mean()), D)
    D1 = out[16][2]
    D4 = distance_field(MetricField(g, 4 * np.ones(g.shape)), [0])[0]
    scale_err = float(np.max(np.abs(D4 - 2 * D1)) / np.max(D1))
    ok = out[16][0] <= 0.02 and scale_err <= 1e-12
    return Result(11, "distance engine", ok,
                  {"max_rel_error_16": out[16][0], "mean_rel_error_16": out[16][1],
                   "max_rel_error_32": out[32][0], "scaling_error": scale_err},
                  f"16-neighbour max error {out[16][0]:.3%} (limit 2%), mean {out[16][1]:.3%}; "
                  f"x4 factor scaling error {scale_err:.1e}")


def criterion_12() -> Result:
    beta, q = 0.25, 3.9
    g = radial_grid(4000, 2 * math.log(1e-7), 2 * math.log(0.5))
    prob = power_singularity_problem(beta, g)
    _, u = power_singularity_solve(prob)
    radii = np.geomspace(1e-5, 1e-2, 10)
    anch = est.with_fits(est.modulus_of_continuity(u, radii, anchor="origin"))
    glob = est.with_fits(est.modulus_of_continuity(u, radii))
    a_fit = anch.fit_holder[1]
    a0 = est.predicted_holder(1, q)
    oracle = 2 - 2 * beta
    ok = a_fit >= a0 - 0.05 and abs(a_fit - oracle) <= 0.1 * oracle
    return Result(12, "Hoelder mode", ok, {"fit": a_fit, "predicted_alpha0": a0,
                  "oracle": oracle, "global_fit": glob.fit_holder[1]},
                  f"anchored fit {a_fit:.4f}; alpha0 {a0:.4f}; oracle {oracle}")


def run_criteria(timings: dict | None = None):
    timings = {} if timings is None else timings
    results = [criterion_1(timings), criterion_2(), criterion_3(), criterion_4(), criterion_5()]
    rep = _example1_torus_report()
    results += [criterion_6(rep), criterion_7(rep), criterion_8(rep), criterion_9(rep)]
    results += [criterion_10(timings), criterion_11(), criterion_12()]
    return results


def report_text(results) -> str:
    return dumps_report({"criteria": [r.to_dict() for r in results]})


def run_all(check_determinism: bool = True):
    """All criteria; number 13 reruns 1-12 and compares the report bytes."""
    timings = {}
    results = run_criteria(timings)
    text = report_text(results)
    if check_determinism:
        text2 = report_text(run_criteria({}))
        same = text == text2
        results.append(Result(13, "determinism", same, {"identical": same},
                              "two runs give byte-identical reports" if same else
                              "reports differ between runs"))
        text = report_text(results)
    return results, text, timings
