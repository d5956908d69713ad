import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malab.estimates import (EstimateError, LevelSetTrace, ModulusProfile, build_trace,
                             comparison_test, degiorgi_analyze, energy_phi, final_smoothing_check,
                             fit_holder, fit_log_modulus, holder_parameters, modulus_of_continuity,
                             predicted_alpha, predicted_holder, rows_to_csv, sublevel_mask,
                             tail_bound_violation, trace_parameters, trudinger_moment)
from malab.fields import ScalarField, constant_field, laplacian_values
from malab.geometry import radial_grid, sphere_grid, torus_grid
from malab.scenarios import manufactured_problem
from malab.solver import solve_auxiliary, solve_n1


@pytest.fixture(scope="module")
def setup():
    g = torus_grid(64)
    prob, _ = manufactured_problem(g, 0.04)
    u = solve_n1(prob).u
    x, _ = g.mesh()
    ud = u.with_values(u.values + 0.3 * (1 + np.cos(2 * np.pi * x)))
    return prob, u, ud


def test_predicted_exponents():
    assert predicted_alpha(1, 2) == 1.0
    assert predicted_alpha(1, 4) == 2.0
    assert predicted_alpha(2, 4) == 1.0
    assert predicted_alpha(1, 2.5) == 1.25
    assert predicted_holder(1, 2) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        predicted_holder(1, 1.0)


def test_trace_and_holder_parameters():
    d = 1e-3
    L = abs(math.log(d))
    p = trace_parameters(d, 4.0)
    assert p["r"] == pytest.approx(L ** -2) and p["c"] == pytest.approx(L ** -2)
    assert p["a0"] == pytest.approx(0.75)
    h = holder_parameters(d, 2.0)
    assert h["gap"] == pytest.approx(2 * d ** 0.4)
    assert h["r"] == pytest.approx(d ** (1.6 / 4))


def test_sublevel_empty_above_sup(setup):
    prob, u, ud = setup
    s = float(np.max(ud.values)) + 1
    assert not sublevel_mask(u.values, ud.values, 1e-2, 0.1, s).any()
    assert energy_phi(u.values, ud.values, 1e-2, 0.1, s, prob.eF) == 0.0
    # u_delta = u with r = 0 leaves only -2 delta
    assert not sublevel_mask(u.values, u.values, 1e-2, 0.0, 0.0).any()


def test_sublevel_holder_mode(setup):
    _, u, ud = setup
    a = sublevel_mask(u.values, ud.values, 1e-2, 0.1, 0.0, mode="holder", alpha0=0.4)
    b = sublevel_mask(u.values, ud.values, 1e-2, 0.1, 0.0)
    # the larger threshold 2 delta^0.4 > 2 delta removes nodes
    assert a.sum() <= b.sum() and not np.any(a & ~b)
    with pytest.raises(ValueError):
        sublevel_mask(u.values, ud.values, 1e-2, 0.1, 0.0, mode="holder")
    with pytest.raises(ValueError):
        sublevel_mask(u.values, ud.values, 1e-2, 0.1, 0.0, mode="other")


def test_trace_monotone_and_nested(setup):
    prob, u, ud = setup
    tr = build_trace(u, ud, prob.eF, 1e-2, 2.0, r=0.1)
    assert np.all(np.diff(tr.phi) <= 1e-15)
    assert np.all(np.diff(tr.mass) <= 0)
    assert tr.phi[0] > 0
    for s1, s2 in zip(tr.s_grid[:-1], tr.s_grid[1:]):
        assert not np.any(tr.mask(s2) & ~tr.mask(s1))
    assert np.all(tr.phi <= tr.gap_sup * tr.mass + 1e-15)
    # phi matches the direct integral at every sampled level
    for s, f in zip(tr.s_grid[::8], tr.phi[::8]):
        assert f == pytest.approx(energy_phi(u.values, ud.values, 1e-2, 0.1, s, prob.eF), abs=1e-15)
    assert len(tr.rows("x")) == len(tr.s_grid)


def test_tail_bound_holds(setup):
    prob, u, ud = setup
    tr = build_trace(u, ud, prob.eF, 1e-2, 2.0, r=0.1)
    assert tail_bound_violation(tr) <= 1e-15


def _synthetic_trace(a0, kappa, m, s):
    phi = kappa * np.clip(1 - s, 0, None) ** m
    mass = np.where(s < 1, 1.0, 0.0)
    X = np.array([0.999])
    return LevelSetTrace(1e-2, 0.1, 0.1, 2.0, 1, s, mass, phi, a0, 1.0, X)


def test_degiorgi_extremal_profile():
    # phi = kappa (1 - s)^m with m = 1 / a0 attains s' phi(s + s') <= phi(s)^{1 + a0}
    a0 = 0.5
    m = 1 / a0
    kappa = (m ** m / (m + 1) ** (m + 1)) ** (1 / a0)
    s = np.linspace(0, 1.5, 1501)
    C3, S_inf, ok = degiorgi_analyze(_synthetic_trace(a0, kappa, m, s))
    assert C3 <= 1 + 1e-9 and C3 > 0.99
    assert S_inf == pytest.approx(2 * C3 / (1 - 2 ** -a0) * kappa ** a0)
    # the De Giorgi bound must cover the true extinction level 1
    assert S_inf >= 1 and ok


def test_degiorgi_zero_phi():
    s = np.linspace(0, 1, 11)
    tr = LevelSetTrace(1e-2, 0.1, 0.1, 2.0, 1, s, np.zeros(11), np.zeros(11), 0.5, 0.0,
                       np.array([-1.0]))
    assert degiorgi_analyze(tr) == (0.0, 0.0, True)


def test_comparison_empty_level_set(setup):
    prob, u, _ = setup
    aux = solve_auxiliary(prob, u, u, 1e6, 1e4, 0.1, 1e-2)
    assert aux.empty
    assert comparison_test(u.values, u.values, aux, 0.1, 1e-2, 1e6) < 0


@settings(max_examples=12, deadline=None)
@given(M=st.floats(0.0, 0.4), amp=st.floats(0.0, 0.09), s=st.floats(0.0, 0.05),
       r=st.floats(0.05, 0.5), logk=st.floats(1.0, 4.0))
def test_comparison_principle_discrete(setup, M, amp, s, r, logk):
    # for a discretely psh u_delta the maximum principle forces Psi <= 0 node by node
    prob, u, _ = setup
    x, _ = u.grid.mesh()
    vals = u.values.max() + M + amp * np.cos(2 * np.pi * x)
    assert np.min(1 + laplacian_values(vals, u.grid)) >= 0
    ud = u.with_values(vals)
    aux = solve_auxiliary(prob, u, ud, s, 10 ** logk, r, 1e-2)
    if aux.empty:
        return
    assert comparison_test(u.values, ud.values, aux, r, 1e-2, s) <= 1e-6


def test_trudinger_limits(setup):
    prob, u, ud = setup
    g = u.grid
    assert trudinger_moment(u.values, ud.values, 1e-2, 0.1, 1e6, 1.0, g) == 0.0
    mask = sublevel_mask(u.values, ud.values, 1e-2, 0.1, 0.0)
    vol = float(np.sum(g.weights[mask]))
    assert trudinger_moment(u.values, ud.values, 1e-2, 0.1, 0.0, 1.0, g, beta0=1e-12) == \
        pytest.approx(vol, rel=1e-9)
    big = trudinger_moment(u.values, ud.values, 1e-2, 0.1, 0.0, 1.0, g, beta0=1.0)
    assert big >= vol
    with pytest.raises(EstimateError):
        trudinger_moment(u.values, ud.values, 1e-2, 0.1, 0.0, 0.0, g)


def test_modulus_constant_and_lipschitz():
    g = torus_grid(64)
    radii = np.geomspace(1 / 64, 0.5, 10)
    prof = modulus_of_continuity(constant_field(g, 2.0), radii)
    assert np.all(prof.omega == 0)
    x, _ = g.mesh()
    f = ScalarField(g, np.sin(2 * np.pi * x) / (2 * np.pi))
    om = modulus_of_continuity(f, radii).omega
    assert np.all(om <= radii + 1e-12)
    assert np.all(np.diff(om) >= 0)
    # the best one-step pair starts at the node x = 0
    assert om[0] == pytest.approx(math.sin(2 * math.pi / 64) / (2 * math.pi), rel=1e-12)


def test_modulus_sphere_and_radial():
    g = sphere_grid(24)
    th, _ = g.mesh()
    radii = np.geomspace(0.05, 0.5, 5)
    zonal = modulus_of_continuity(ScalarField(g, np.cos(th)), radii)
    full = modulus_of_continuity(ScalarField(g, np.cos(th)), radii, stride=1)
    assert np.all(np.diff(zonal.omega) >= 0)
    assert np.allclose(zonal.omega, full.omega)
    rg = radial_grid(400, -12.0, math.log(0.25))
    f = ScalarField(rg, rg.radii)
    om = modulus_of_continuity(f, np.geomspace(1e-3, 0.1, 5)).omega
    # u = |z| is 1-Lipschitz along rays
    assert np.all(om <= np.geomspace(1e-3, 0.1, 5) + 1e-12)
    with pytest.raises(ValueError):
        modulus_of_continuity(f, [0.1, 0.05])


def test_fits_on_synthetic_profiles():
    r = np.geomspace(1e-8, 1e-2, 40)
    prof = ModulusProfile(r, np.abs(np.log(r)) ** -2.0, 1e-9)
    C, a = fit_log_modulus(prof)
    assert a == pytest.approx(2.0, abs=1e-6) and C == pytest.approx(1.0, rel=1e-6)
    C, a = fit_holder(ModulusProfile(r, 3 * r ** 0.5, 1e-9))
    assert a == pytest.approx(0.5, abs=1e-9) and C == pytest.approx(3.0, rel=1e-9)
    with pytest.raises(ValueError):
        fit_log_modulus(ModulusProfile(r[:2], r[:2], 1e-9))


def test_power_singularity_holder_fit():
    # anchored modulus of |z|^{1/2} on a radial grid
    # the inner radius sits far below the fit window so the offset sqrt(rho_0) is negligible
    rg = radial_grid(2000, math.log(1e-14) * 2, math.log(0.25) * 2)
    f = ScalarField(rg, np.sqrt(rg.radii))
    prof = modulus_of_continuity(f, np.geomspace(1e-5, 1e-2, 12), anchor="origin")
    _, a = fit_holder(prof)
    assert a == pytest.approx(0.5, abs=1e-3)


def test_final_smoothing_constant():
    g = torus_grid(32)
    rep = final_smoothing_check(constant_field(g, 1.5), [0.1, 0.05], 1.0)
    assert all(abs(row["sup_gap"]) < 1e-13 for row in rep["rows"])
    assert math.isnan(rep["decay_exponent"])


def test_final_smoothing_holder_rule():
    g = torus_grid(1024)
    x, _ = g.mesh()
    # smoothing attenuates the mode, so the sup gap is of order delta^2
    f = ScalarField(g, np.cos(2 * np.pi * x))
    rep = final_smoothing_check(f, [0.02, 0.01, 0.005], 1.0, c_rule="holder")
    assert rep["decay_exponent"] == pytest.approx(2.0, abs=0.05)
    assert rep["rows"][0]["c"] == pytest.approx(0.02)


def test_rows_to_csv():
    text = rows_to_csv([{"a": 1, "b": 2.5}, {"a": 3, "b": 4.0}])
    assert text.splitlines() == ["a,b", "1,2.5", "3,4.0"]
    assert rows_to_csv([]) == ""
