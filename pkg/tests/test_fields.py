import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from malab.fields import (FieldError, ScalarField, constant_field, from_binary, from_csv,
                          from_function, inf, laplacian, laplacian_values, lq_norm,
                          normalize_density, orlicz_norm, oscillation, sup, sup_norm,
                          to_binary, to_csv)
from malab.geometry import TRACE_CALIBRATION, radial_grid, sphere_grid, torus_grid
from malab.scenarios import example1_density

T32 = torus_grid(32)
S16 = sphere_grid(16)

small = st.floats(-10, 10, allow_nan=False)


def test_field_rejects_nonfinite_and_bad_shape():
    with pytest.raises(FieldError):
        ScalarField(T32, np.full((32, 32), np.nan))
    with pytest.raises(FieldError):
        ScalarField(T32, np.zeros((31, 32)))


@pytest.mark.parametrize("grid", [T32, S16, radial_grid(64, -12.0, -1.5)])
def test_laplacian_of_constant_is_zero(grid):
    # rounding scale of the stencil: |f| / h^2, times e^{-t} on radial grids
    if grid.kind == "radial_log":
        scale = 3.7 * np.exp(-grid.t[0]) / grid.spacing[0] ** 2
    else:
        scale = 3.7 / grid.h ** 2
    assert np.max(np.abs(laplacian(constant_field(grid, 3.7)).values)) < 1e-14 * scale


def test_torus_laplacian_of_sine_is_second_order():
    errs = []
    for N in (32, 64, 128):
        g = torus_grid(N)
        f = from_function(g, lambda x, y: np.sin(2 * np.pi * x))
        exact = -TRACE_CALIBRATION * (2 * np.pi) ** 2 * np.sin(2 * np.pi * g.mesh()[0])
        errs.append(np.max(np.abs(laplacian(f).values - exact)))
    assert 3.9 < errs[0] / errs[1] < 4.1
    assert 3.9 < errs[1] / errs[2] < 4.1


def test_sphere_laplacian_of_first_harmonic():
    # cos(theta) is an eigenfunction of Laplace-Beltrami with eigenvalue -2/R^2
    from malab.geometry import SPHERE_RADIUS
    errs = []
    for n in (32, 64):
        g = sphere_grid(n)
        f = from_function(g, lambda th, ph: np.cos(th))
        exact = -TRACE_CALIBRATION * 2 / SPHERE_RADIUS ** 2 * np.cos(g.mesh()[0])
        errs.append(np.max(np.abs(laplacian(f).values - exact)))
    assert errs[1] < errs[0] / 3


def test_radial_laplacian_matches_example1_closed_form():
    a = 2.0
    g = radial_grid(1024, 2 * math.log(1e-4), 2 * math.log(0.5))
    t = g.t
    lap = laplacian_values((-t) ** (-a), g)
    closed = a * (a + 1) / (np.exp(t) * (-t) ** (a + 2))
    inner = (g.radii >= 0.05) & (g.radii <= 0.45)
    assert np.max(np.abs(lap[inner] / closed[inner] - 1)) < 0.02
    assert np.allclose(closed, example1_density(t, a), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (8, 8), elements=small), arrays(float, (8, 8), elements=small), small, small)
def test_laplacian_linear_and_self_adjoint_torus(f, g, a, b):
    grid = torus_grid(8)
    L = lambda v: laplacian_values(v, grid)  # noqa: E731
    assert np.allclose(L(a * f + b * g), a * L(f) + b * L(g), atol=1e-9 * (1 + abs(a) + abs(b)) * 1e3)
    w = grid.weights
    lhs = np.sum(L(f) * g * w)
    rhs = np.sum(f * L(g) * w)
    assert abs(lhs - rhs) <= 1e-8 * (1 + abs(lhs))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 12), elements=small), arrays(float, (6, 12), elements=small))
def test_laplacian_self_adjoint_sphere(f, g):
    grid = sphere_grid(6)
    w = grid.weights
    lhs = np.sum(laplacian_values(f, grid) * g * w)
    rhs = np.sum(f * laplacian_values(g, grid) * w)
    assert abs(lhs - rhs) <= 1e-8 * (1 + abs(lhs))


def test_orlicz_of_unit_density_is_zero():
    assert orlicz_norm(constant_field(T32, 1.0), 2.5) == 0.0


def test_orlicz_example1_against_adaptive_quadrature():
    # frozen oracle: scipy quad of e^F |F|^2 pi e^t dt on 1e-6 <= |z| <= 1/2, e^F = 6 / (e^t t^4)
    oracle = 4.230104775257792
    g = radial_grid(20000, 2 * math.log(1e-6), 2 * math.log(0.5))
    val = orlicz_norm(ScalarField(g, example1_density(g.t, 2.0)), 2.0)
    assert val == pytest.approx(oracle, rel=1e-3)


def test_orlicz_threshold_trend():
    from malab.scenarios import example1_orlicz
    lo = example1_orlicz(2.0, 2.0, 1e-4)
    hi = example1_orlicz(2.0, 2.0, 1e-8)
    assert hi / lo < 1.2
    assert example1_orlicz(2.0, 4.0, 1e-8) / example1_orlicz(2.0, 4.0, 1e-4) > 2


def test_lq_norm_trivial_cases():
    assert lq_norm(constant_field(T32, 1.0), 3.0) == pytest.approx(1.0)
    g = torus_grid(16, 2.0)
    assert lq_norm(constant_field(g, 1.0), 2.0) == pytest.approx(4.0 ** 0.5)
    rng = np.random.default_rng(0)
    eF = normalize_density(ScalarField(T32, rng.uniform(0.5, 2.0, (32, 32))))
    assert lq_norm(eF, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_lq_norm_example1_divergence():
    # the L^1.5 tail grows like 1 / (c |log c|^6): barely visible down to 1e-6,
    # unmistakable by 1e-12
    vals = []
    for c in (1e-2, 1e-6, 1e-12):
        n = int(2 * math.log(0.5 / c) / 0.005)
        g = radial_grid(n, 2 * math.log(c), 2 * math.log(0.5))
        eF = ScalarField(g, example1_density(g.t, 2.0))
        vals.append((lq_norm(eF, 1.0), lq_norm(eF, 1.5) ** 1.5))
    assert vals[2][0] / vals[0][0] < 1.01
    assert vals[1][1] > vals[0][1]
    assert vals[2][1] / vals[0][1] >= 10


@settings(max_examples=40, deadline=None)
@given(arrays(float, (8, 8), elements=st.floats(0.1, 5.0)), st.floats(0.1, 10.0), st.floats(1.0, 4.0))
def test_norm_properties(v, c, q):
    grid = torus_grid(8)
    f = ScalarField(grid, v)
    assert lq_norm(f.with_values(c * v), q) == pytest.approx(c * lq_norm(f, q), rel=1e-10)
    n = normalize_density(f)
    assert n.integral() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (8, 8), elements=st.floats(1.0, 5.0)), st.floats(1.0, 3.0), st.floats(0.5, 4.0))
def test_orlicz_monotone_in_F(v, lam, p):
    # e^F -> (e^F)^lam with F >= 0 raises both F and e^F pointwise
    grid = torus_grid(8)
    f = ScalarField(grid, v)
    assert orlicz_norm(f.with_values(v ** lam), p) >= orlicz_norm(f, p) * (1 - 1e-12)


def test_normalize_density_constant():
    n = normalize_density(constant_field(T32, 3.0))
    assert np.allclose(n.values, 1.0)


def test_normalize_density_rejects_nonpositive():
    with pytest.raises(FieldError):
        normalize_density(constant_field(T32, -1.0))


def test_sup_inf_oscillation():
    c = constant_field(T32, 2.5)
    assert sup(c) == inf(c) == 2.5
    assert oscillation(c) == 0.0
    g = torus_grid(64)
    s = from_function(g, lambda x, y: np.sin(2 * np.pi * x))
    assert oscillation(s) == pytest.approx(2.0, abs=1e-12)
    assert sup_norm(s) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("grid", [T32, S16, radial_grid(40, -9.0, -2.0)])
def test_serialization_round_trip(grid):
    rng = np.random.default_rng(1)
    f = ScalarField(grid, rng.normal(size=grid.shape), "u")
    g = from_binary(to_binary(f))
    assert np.array_equal(g.values, f.values) and g.tag == "u"
    assert g.grid.descriptor() == grid.descriptor()
    h = from_csv(to_csv(f), grid)
    assert np.array_equal(h.values, f.values)


def test_binary_rejects_garbage():
    with pytest.raises(FieldError):
        from_binary(b"not a field at all")


def test_orlicz_quadrature_independent_of_grid():
    # sanity for the norm itself: a smooth density on the radial grid vs quad
    g = radial_grid(4000, 2 * math.log(1e-3), 2 * math.log(0.5))
    eF = ScalarField(g, 1.0 + np.exp(g.t))
    oracle = quad(lambda t: (1 + math.exp(t)) * math.log(1 + math.exp(t)) ** 2 * math.pi * math.exp(t),
                  g.t[0], g.t[-1], epsrel=1e-12)[0]
    assert orlicz_norm(eF, 2.0) == pytest.approx(oracle, rel=1e-5)
