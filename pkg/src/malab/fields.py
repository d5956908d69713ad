"""Scalar fields on grids, the complex Laplacian and the integrability norms."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import (FLAT_TORUS, FUBINI_STUDY, RADIAL_LOG,
                       TRACE_CALIBRATION, Grid, grid_from_descriptor)


class FieldError(ValueError):
    """Invalid field values or incompatible grids."""


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != tuple(self.grid.shape):
            raise FieldError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise FieldError(f"non-finite value at node {tuple(int(i) for i in bad)}")
        object.__setattr__(self, "values", v)

    def with_values(self, values, tag: str | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.tag if tag is None else tag)

    def integral(self) -> float:
        return float(np.sum(self.values * self.grid.weights))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def constant_field(grid: Grid, c: float, tag: str = "") -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(c)), tag)


def from_function(grid: Grid, fn, tag: str = "") -> ScalarField:
    """Evaluate ``fn`` on node coordinates (x, y), (theta, phi) or t."""
    return ScalarField(grid, fn(*grid.mesh()), tag)


def _same_grid(a: ScalarField, b: ScalarField):
    if a.grid is not b.grid and a.grid.descriptor() != b.grid.descriptor():
        raise FieldError("fields live on different grids")


# --- differential operators -----------------------------------------------

def sphere_flux_sum(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Finite-volume sum of boundary fluxes of grad u for each sphere cell.

    Dividing by the cell area gives the Laplace-Beltrami operator.  The
    matrix of this map is symmetric, which makes the discrete Laplacian
    self-adjoint against the exact cell areas.
    """
    th = grid.coords[0]
    dth, dph = grid.spacing
    s_face = np.sin(np.arange(1, len(th)) * dth)  # interior theta faces
    u = values
    out = np.zeros_like(u)
    flux = (dph / dth) * s_face[:, None] * (u[1:] - u[:-1])
    out[:-1] += flux
    out[1:] -= flux
    coef = dth / (np.sin(th) * dph)
    out += coef[:, None] * (np.roll(u, -1, axis=1) - 2 * u + np.roll(u, 1, axis=1))
    return out


def laplacian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Trace of i ddbar f against omega_0, second-order centred stencils."""
    u = np.asarray(values, dtype=float)
    if grid.kind == FLAT_TORUS:
        if min(grid.shape) < 3:
            raise FieldError("resolution below stencil width")
        h = grid.spacing[0]
        lap = (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1)
               - 4.0 * u) / (h * h)
        return TRACE_CALIBRATION * lap
    if grid.kind == FUBINI_STUDY:
        if grid.shape[0] < 3:
            raise FieldError("resolution below stencil width")
        area = grid.weights
        return TRACE_CALIBRATION * sphere_flux_sum(u, grid) / area
    if len(u) < 4:
        raise FieldError("resolution below stencil width")
    n = grid.background.n
    f1, f2 = radial_derivatives(u, grid.spacing[0])
    return (f2 + (n - 1) * f1) * np.exp(-grid.t)


def radial_derivatives(f: np.ndarray, dt: float):
    """First and second t-derivatives, centred inside, one-sided second order at the ends."""
    f1 = np.empty_like(f)
    f2 = np.empty_like(f)
    f1[1:-1] = (f[2:] - f[:-2]) / (2 * dt)
    f2[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dt ** 2
    f1[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dt)
    f1[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dt)
    f2[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dt ** 2
    f2[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dt ** 2
    return f1, f2


def laplacian(f: ScalarField) -> ScalarField:
    return f.with_values(laplacian_values(f.values, f.grid), "laplacian")


# --- norms -----------------------------------------------------------------

def _check_positive(eF: ScalarField):
    v = eF.values
    if np.any(v <= 0):
        bad = tuple(int(i) for i in np.argwhere(v <= 0)[0])
        raise FieldError(f"density must be positive; value {v[bad]!r} at node {bad}")


def orlicz_norm(eF: ScalarField, p: float) -> float:
    """L^1 (log L)^p norm: sum of e^F |F|^p against the volume weights."""
    if not p > 0:
        raise FieldError("Orlicz exponent must be positive")
    _check_positive(eF)
    F = np.log(eF.values)
    return float(np.sum(eF.values * np.abs(F) ** p * eF.grid.weights))


def lq_norm(eF: ScalarField, q: float) -> float:
    if q < 1:
        raise FieldError("q must be >= 1")
    return float(np.sum(np.abs(eF.values) ** q * eF.grid.weights) ** (1.0 / q))


def total_volume(grid: Grid) -> float:
    return float(np.sum(grid.weights))


def density_scale(eF: ScalarField) -> float:
    """Constant C with  integral of C e^F = volume."""
    _check_positive(eF)
    mass = eF.integral()
    if not mass > 0:
        raise FieldError("density has zero integral")
    return total_volume(eF.grid) / mass


def normalize_density(eF: ScalarField) -> ScalarField:
    """Rescale so that the compatibility condition holds."""
    return eF.with_values(eF.values * density_scale(eF), eF.tag or "eF")


def sup_norm(f: ScalarField) -> float:
    return float(np.max(np.abs(f.values)))


def sup(f: ScalarField) -> float:
    return float(np.max(f.values))


def inf(f: ScalarField) -> float:
    return float(np.min(f.values))


def oscillation(f: ScalarField) -> float:
    return float(np.max(f.values) - np.min(f.values))


# --- serialization ----------------------------------------------------------
#
# Binary layout (little-endian):
#   8 bytes   magic b"MALABF1\0"
#   4 bytes   uint32 length L of the JSON header
#   L bytes   UTF-8 JSON header: {"grid": <grid descriptor>, "tag": str,
#             "kind": str, "resolution": [...]}
#   rest      row-major float64 node values

MAGIC = b"MALABF1\0"


def to_binary(f: ScalarField) -> bytes:
    desc = f.grid.descriptor()
    header = json.dumps({"grid": desc, "tag": f.tag, "kind": desc["kind"],
                         "resolution": desc["resolution"]}, sort_keys=True).encode()
    body = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + body


def from_binary(data: bytes, grid: Grid | None = None) -> ScalarField:
    if data[:8] != MAGIC:
        raise FieldError("not a field file")
    (L,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + L].decode())
    if grid is None:
        grid = grid_from_descriptor(header["grid"])
    vals = np.frombuffer(data[12 + L:], dtype="<f8").reshape(grid.shape)
    return ScalarField(grid, vals.copy(), header.get("tag", ""))


def to_csv(f: ScalarField) -> str:
    """CSV with one row per node: coordinate columns then the value."""
    names = {FLAT_TORUS: ["x", "y"], FUBINI_STUDY: ["theta", "phi"], RADIAL_LOG: ["t"]}
    cols = names[f.grid.kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols + [f.tag or "value"])
    coords = [c.ravel() for c in f.grid.mesh()]
    for row in zip(*coords, f.values.ravel()):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def from_csv(text: str, grid: Grid) -> ScalarField:
    rows = list(csv.reader(io.StringIO(text)))
    tag = rows[0][-1]
    vals = np.array([float(r[-1]) for r in rows[1:]])
    return ScalarField(grid, vals.reshape(grid.shape), "" if tag == "value" else tag)
