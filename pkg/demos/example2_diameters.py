"""Diameters of the Example 2 metrics on the round sphere.

The densities concentrate at the north pole as eps -> 0 but stay bounded
in L^1 (log L)^p for p < a - 1, so the solved metrics should have
uniformly bounded diameter.  The graph diameter is compared with the
pole-to-pole meridian, which is a geodesic by symmetry.

Run:  python3 demos/example2_diameters.py
"""
import numpy as np

from malab.estimates import modulus_of_continuity, with_fits
from malab.geometry import sphere_grid
from malab.metric import diameter, dini_integral, meridian_distance, metric_from_solution
from malab.scenarios import example2_problem
from malab.solver import solve_n1

a = 3.0
g = sphere_grid(96)
print("   eps     sup u   inf u   diameter  meridian  Dini")
for eps in (1.0, 1e-2, 1e-4, 1e-6):
    sol = solve_n1(example2_problem(a, eps, g))
    m = metric_from_solution(sol)
    prof = with_fits(modulus_of_continuity(sol.u, np.geomspace(4 * g.h, 0.5, 14)), r_max=0.1)
    d = diameter(m, 8).diameter
    dini = dini_integral(prof)["total"]
    print(f"{eps:7.0e}  {sol.u.values.max():6.3f}  {sol.u.values.min():6.3f}  {d:8.4f}"
          f"  {meridian_distance(m)[-1]:8.4f}  {dini:6.3f}")

# The solutions stay bounded and the diameters hardly move, even though the
# density at the pole grows without bound.
