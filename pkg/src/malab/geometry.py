"""Model backgrounds and their discretizations.

Three backgrounds are supported:

``flat_torus``
    The square torus R^2 / (L Z)^2 with the flat metric, n = 1.
``fubini_study``
    The Riemann sphere with the Fubini-Study metric normalized to total
    volume 1, n = 1.  It is a round sphere of radius ``1 / (2 sqrt(pi))``.
``radial_log``
    A punctured ball in C^n with the flat metric, discretized in the radial
    variable ``t = log |z|^2``.

Kahler calibration
------------------
A Kahler form ``eta = i g dz ^ dzbar`` is identified with the Riemannian
metric ``g |dz|^2``, so the potential ``|z|^2`` reproduces Euclidean
lengths.  With this convention the trace of ``i ddbar f`` against a
background ``omega_0`` equals ``Delta_g f / 4`` where ``Delta_g`` is the
Laplace-Beltrami operator of the background metric.  ``TRACE_CALIBRATION``
holds that factor and is used by every module that turns second
derivatives into Kahler quantities.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FLAT_TORUS = "flat_torus"
FUBINI_STUDY = "fubini_study"
RADIAL_LOG = "radial_log"
KINDS = (FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG)

# trace of i ddbar f relative to omega_0 is TRACE_CALIBRATION * Delta_g f
TRACE_CALIBRATION = 0.25

SPHERE_RADIUS = 1.0 / (2.0 * math.sqrt(math.pi))


class GeometryError(ValueError):
    """Raised for invalid points, tangent vectors or grid parameters."""


@dataclass(frozen=True)
class Background:
    """A model Kahler manifold.

    ``curvature_A`` is the constant A such that -A bounds the bisectional
    curvature from below.  ``demailly_K`` is a default for the monotonicity
    constant K of the smoothing family; the laboratory normally replaces it
    with a value certified on the data (see ``transforms.estimate_K``).
    """

    kind: str
    n: int = 1
    curvature_A: float = 0.0
    demailly_K: float = 1.0
    injectivity_radius: float = 0.5
    period: float = 1.0
    gauss_curvature: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown background kind {self.kind!r}")
        if self.kind in (FLAT_TORUS, FUBINI_STUDY) and self.n != 1:
            raise GeometryError(f"{self.kind} is only supported for n = 1")
        if self.n < 1:
            raise GeometryError("complex dimension must be >= 1")
        if self.kind == FLAT_TORUS and self.curvature_A != 0.0:
            raise GeometryError("the flat torus has curvature_A = 0")
        if not self.injectivity_radius > 0:
            raise GeometryError("injectivity radius must be positive")
        if self.curvature_A < 0 or self.demailly_K < 0:
            raise GeometryError("curvature constants must be nonnegative")

    @property
    def total_volume(self) -> float:
        if self.kind == FLAT_TORUS:
            return self.period ** 2
        if self.kind == FUBINI_STUDY:
            return 1.0
        return math.inf


def flat_torus(period: float = 1.0) -> Background:
    return Background(FLAT_TORUS, 1, 0.0, 1.0, period / 2.0, period, 0.0)


def fubini_study_sphere() -> Background:
    # positive curvature, so -A = 0 is a valid lower bound
    R = SPHERE_RADIUS
    return Background(FUBINI_STUDY, 1, 0.0, 1.0, math.pi * R, 1.0, 1.0 / R ** 2)


def radial_log_domain(n: int = 1, outer_radius: float = 0.5) -> Background:
    return Background(RADIAL_LOG, n, 0.0, 1.0, outer_radius, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class Grid:
    """Discretization of a background.

    Node arrays have shape ``shape``.  For the torus the axes are (x, y);
    for the sphere (theta, phi) on a cell-centred latitude-longitude grid;
    for the radial domain a single axis in ``t = log |z|^2``.

    ``weights`` are volumes with respect to omega_0^n.  On the closed
    backgrounds they are exact cell volumes and sum to the total volume.
    """

    background: Background
    shape: tuple
    coords: tuple
    spacing: tuple
    weights: np.ndarray
    periodic: tuple
    bounds: tuple = ()
    descriptor_extra: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.background.kind

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        """Smallest background length between neighbouring nodes."""
        if self.kind == FLAT_TORUS:
            return self.spacing[0]
        if self.kind == FUBINI_STUDY:
            return SPHERE_RADIUS * self.spacing[0]
        rho = self.radii
        return float(np.min(np.diff(rho)))

    @property
    def t(self) -> np.ndarray:
        if self.kind != RADIAL_LOG:
            raise GeometryError("t-grid only exists on radial_log grids")
        return self.coords[0]

    @property
    def radii(self) -> np.ndarray:
        return np.exp(0.5 * self.t)

    def mesh(self):
        """Node coordinate arrays broadcast to ``shape``."""
        if self.kind == RADIAL_LOG:
            return (self.coords[0],)
        return tuple(np.meshgrid(*self.coords, indexing="ij"))

    def points(self) -> np.ndarray:
        """Node positions as an (N, d) array of background points.

        Torus: (x, y).  Sphere: (theta, phi).  Radial: real coordinates in
        R^{2n} placed on the first axis.
        """
        if self.kind == RADIAL_LOG:
            pts = np.zeros((self.size, 2 * self.background.n))
            pts[:, 0] = self.radii
            return pts
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def chart_coordinates(self) -> np.ndarray:
        """Holomorphic chart coordinate per node as (N, 2) real array.

        Torus: the flat coordinate.  Sphere: stereographic ``z = tan(theta/2) e^{i phi}``
        so that z = 0 is the pole theta = 0.
        """
        if self.kind == FLAT_TORUS:
            return self.points()
        if self.kind == FUBINI_STUDY:
            th, ph = self.mesh()
            r = np.tan(th / 2.0)
            return np.stack([(r * np.cos(ph)).ravel(), (r * np.sin(ph)).ravel()], axis=1)
        return self.points()[:, :2]

    def descriptor(self) -> dict:
        d = {
            "kind": self.kind,
            "n": self.background.n,
            "resolution": list(self.shape),
            "bounds": list(self.bounds),
        }
        d.update(self.descriptor_extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


def torus_grid(N: int, period: float = 1.0) -> Grid:
    if N < 4:
        raise GeometryError("torus grid needs at least 4 nodes per axis")
    bg = flat_torus(period)
    h = period / N
    x = np.arange(N) * h
    w = np.full((N, N), h * h)
    return Grid(bg, (N, N), (x, x.copy()), (h, h), w, (True, True), (0.0, period))


def sphere_grid(n_theta: int, n_phi: int | None = None) -> Grid:
    """Cell-centred latitude-longitude grid; no node sits on a pole."""
    if n_theta < 4:
        raise GeometryError("sphere grid needs at least 4 rings")
    n_phi = 2 * n_theta if n_phi is None else n_phi
    if n_phi % 2:
        raise GeometryError("n_phi must be even (pole crossing pairs nodes at phi + pi)")
    bg = fubini_study_sphere()
    dth = math.pi / n_theta
    dph = 2 * math.pi / n_phi
    theta = (np.arange(n_theta) + 0.5) * dth
    phi = np.arange(n_phi) * dph
    edges = np.arange(n_theta + 1) * dth
    band = SPHERE_RADIUS ** 2 * dph * (np.cos(edges[:-1]) - np.cos(edges[1:]))
    w = np.repeat(band[:, None], n_phi, axis=1)
    return Grid(bg, (n_theta, n_phi), (theta, phi), (dth, dph), w, (False, True),
                (0.0, math.pi))


def radial_grid(n_points: int, t_min: float, t_max: float, n: int = 1) -> Grid:
    """Uniform grid in t = log|z|^2 on the annulus e^{t_min} <= |z|^2 <= e^{t_max}."""
    if not (t_min < t_max < 0):
        raise GeometryError("radial grid needs t_min < t_max < 0")
    if n_points < 3:
        raise GeometryError("radial grid needs at least 3 points")
    bg = radial_log_domain(n, math.exp(0.5 * t_max))
    t = np.linspace(t_min, t_max, n_points)
    dt = t[1] - t[0]
    edges = np.concatenate([[t_min], 0.5 * (t[1:] + t[:-1]), [t_max]])
    # exact shell volumes: vol{|z|^2 <= e^t} = pi^n e^{nt} / n!
    c = math.pi ** n / math.factorial(n)
    w = c * (np.exp(n * edges[1:]) - np.exp(n * edges[:-1]))
    return Grid(bg, (n_points,), (t,), (dt,), w, (False,), (t_min, t_max))


def grid_from_descriptor(desc: dict) -> Grid:
    kind = desc["kind"]
    res = desc["resolution"]
    if kind == FLAT_TORUS:
        bounds = desc.get("bounds") or [0.0, 1.0]
        return torus_grid(int(res[0]), float(bounds[1]) - float(bounds[0]))
    if kind == FUBINI_STUDY:
        return sphere_grid(int(res[0]), int(res[1]) if len(res) > 1 else None)
    if kind == RADIAL_LOG:
        t_min, t_max = desc["bounds"]
        return radial_grid(int(res[0]), float(t_min), float(t_max), int(desc.get("n", 1)))
    raise GeometryError(f"unknown grid kind {kind!r}")


def grid_from_json(text: str) -> Grid:
    return grid_from_descriptor(json.loads(text))


# --- points and distances -------------------------------------------------

def _sphere_to_xyz(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def _xyz_to_sphere(v):
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * math.pi)
    return theta, phi


def _check_point(bg: Background, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    dim = 2 * bg.n if bg.kind == RADIAL_LOG else 2
    if p.shape[-1] != dim:
        raise GeometryError(f"point of dimension {p.shape[-1]} on {bg.kind} (expects {dim})")
    if bg.kind == FUBINI_STUDY:
        if np.any((p[..., 0] < 0) | (p[..., 0] > math.pi)):
            raise GeometryError("sphere points need 0 <= theta <= pi")
    return p


def background_distance(bg: Background, x, y):
    """Geodesic distance of (X, omega_0); vectorized over leading axes."""
    x = _check_point(bg, x)
    y = _check_point(bg, y)
    if bg.kind == FLAT_TORUS:
        d = np.abs(x - y) % bg.period
        d = np.minimum(d, bg.period - d)
        return np.sqrt(np.sum(d * d, axis=-1))
    if bg.kind == FUBINI_STUDY:
        # atan2 of |p x q| and p . q stays accurate from coincident to antipodal points
        p = _sphere_to_xyz(x[..., 0], x[..., 1])
        q = _sphere_to_xyz(y[..., 0], y[..., 1])
        cr = np.linalg.norm(np.cross(p, q), axis=-1)
        return SPHERE_RADIUS * np.arctan2(cr, np.sum(p * q, axis=-1))
    return np.sqrt(np.sum((x - y) ** 2, axis=-1))


def tangent_norm(bg: Background, zeta) -> np.ndarray:
    """Length of a tangent vector given in an orthonormal frame."""
    zeta = np.asarray(zeta, dtype=float)
    return np.sqrt(np.sum(zeta * zeta, axis=-1))


def exp_map(bg: Background, z, zeta):
    """Exponential map of omega_0.

    Tangent vectors are given in an orthonormal frame: (dx, dy) on the torus,
    (e_theta, e_phi) components on the sphere, Euclidean components on the
    radial domain.  Vectorized over leading axes.
    """
    z = _check_point(bg, z)
    zeta = np.asarray(zeta, dtype=float)
    L = tangent_norm(bg, zeta)
    if np.any(L >= bg.injectivity_radius):
        raise GeometryError("tangent vector reaches the injectivity radius")
    if bg.kind == FLAT_TORUS:
        return np.mod(z + zeta, bg.period)
    if bg.kind == RADIAL_LOG:
        return z + zeta
    th, ph = z[..., 0], z[..., 1]
    p = _sphere_to_xyz(th, ph)
    e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
    e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
    v = zeta[..., 0:1] * e_th + zeta[..., 1:2] * e_ph
    ang = (L / SPHERE_RADIUS)[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        vhat = np.where(ang > 0, v / np.where(L[..., None] > 0, L[..., None], 1.0), 0.0)
    q = np.cos(ang) * p + np.sin(ang) * vhat
    th2, ph2 = _xyz_to_sphere(q)
    return np.stack([th2, ph2], axis=-1)


def volume_density(bg: Background, point) -> np.ndarray:
    """Density of omega_0^n against the chart measure.

    Torus: constant 1 against dx dy.  Sphere: density against the Lebesgue
    measure of the stereographic coordinate z; ``point`` is (theta, phi).
    Radial: ``point`` is t and the density is against dt (angular
    integration included), ``pi^n e^{nt} / (n-1)!``.
    """
    if bg.kind == FLAT_TORUS:
        p = np.asarray(point, dtype=float)
        return np.ones(p.shape[:-1]) if p.ndim else 1.0
    if bg.kind == FUBINI_STUDY:
        p = _check_point(bg, point)
        r2 = np.tan(p[..., 0] / 2.0) ** 2
        return 1.0 / (math.pi * (1.0 + r2) ** 2)
    t = np.asarray(point, dtype=float)
    n = bg.n
    return math.pi ** n * np.exp(n * t) / math.factorial(n - 1)
