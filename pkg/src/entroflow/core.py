"""Shared vocabulary: grids, monotone nonlinearities, convex generators, density fields.

The spatial setting is an axis-aligned box [0,1]^d (d = 1 or 2) covered by a
uniform vertex-centered grid.  Cells on the outermost layer are boundary
cells; the reference measure assigns each cell the volume of its dual box,
so the total mass of the grid equals the volume of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

_FLAG_NAMES = {"interior": INTERIOR, "dirichlet": DIRICHLET, "neumann": NEUMANN}


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0,1]^dim with face-sampled drift and diffusion.

    Faces are ordered pairs of adjacent cells (lo, hi) with hi downstream of
    the +axis direction.  ``face_drift`` holds the drift component along the
    lo->hi normal, ``face_diff`` the diffusion coefficient for that normal
    direction (diagonal tensors only in 2D).
    """

    dim: int
    shape: tuple[int, ...]
    h: float
    cells: np.ndarray          # (n_cells, dim) cell centers
    cell_volume: np.ndarray    # (n_cells,) reference-measure weight
    boundary_flags: np.ndarray  # (n_cells,) INTERIOR / DIRICHLET / NEUMANN
    face_lo: np.ndarray        # (n_faces,) cell index on the low side
    face_hi: np.ndarray        # (n_faces,) cell index on the high side
    face_axis: np.ndarray      # (n_faces,) axis of the face normal
    face_area: np.ndarray      # (n_faces,) transverse measure of the face
    face_diff: np.ndarray      # (n_faces,) diffusion coefficient at the face
    face_drift: np.ndarray     # (n_faces,) drift component along the normal

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return self.boundary_flags == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.boundary_flags != INTERIOR

    def is_reversible(self) -> bool:
        """True when the volume measure is reversible (zero drift on every face)."""
        return bool(np.all(self.face_drift == 0.0))

    def validate(self) -> None:
        if np.any(self.cell_volume < 0):
            raise ValueError("negative cell volume")
        if not np.any(self.interior):
            raise ValueError("grid has no interior cell")
        if np.any(self.face_diff < 0):
            raise ValueError("diffusion coefficient must be nonnegative at every face")


def _spec_at(spec, points: np.ndarray, axis: int, name: str) -> np.ndarray:
    """Evaluate a constant / per-axis / callable coefficient spec at face centers."""
    if callable(spec):
        vals = np.asarray([spec(p) for p in points], dtype=float)
        if vals.ndim == 2:  # vector-valued: take the component along the axis
            vals = vals[:, axis]
        return vals
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(points.shape[0], float(arr))
    if arr.ndim == 1:
        return np.full(points.shape[0], float(arr[axis]))
    raise ValueError(f"unsupported {name} spec of shape {arr.shape}")


def make_uniform_grid(dim: int, n_per_axis: int, field_spec=0.0, diffusion_spec=1.0,
                      bc: str = "dirichlet") -> Grid:
    """Build a uniform vertex-centered grid on [0,1]^dim.

    ``n_per_axis`` counts cells per axis including the single boundary layer;
    spacing is h = 1/(n_per_axis - 1).  Boundary cells are flagged with the
    requested boundary kind.  Interior cells weigh h^dim; boundary weights
    are trimmed so the total mass equals 1.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if n_per_axis < 3:
        raise ValueError("n_per_axis must be at least 3 (no interior cell otherwise)")
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary kind {bc!r}")
    n = n_per_axis
    h = 1.0 / (n - 1)
    axes = [np.linspace(0.0, 1.0, n) for _ in range(dim)]
    if dim == 1:
        cells = axes[0][:, None]
        shape = (n,)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        cells = np.column_stack([xx.ravel(), yy.ravel()])
        shape = (n, n)

    # dual-box extent along one axis: h inside, h/2 at the walls
    def extent(coord):
        return np.where((coord == 0.0) | (coord == 1.0), h / 2.0, h)

    vol = extent(cells[:, 0]).copy()
    for ax in range(1, dim):
        vol *= extent(cells[:, ax])

    on_wall = np.zeros(cells.shape[0], dtype=bool)
    for ax in range(dim):
        on_wall |= (cells[:, ax] == 0.0) | (cells[:, ax] == 1.0)
    flags = np.where(on_wall, _FLAG_NAMES[bc], INTERIOR).astype(np.int8)

    idx = np.arange(cells.shape[0]).reshape(shape)
    face_lo, face_hi, face_axis, face_area = [], [], [], []
    for ax in range(dim):
        lo = np.take(idx, np.arange(shape[ax] - 1), axis=ax).ravel()
        hi = np.take(idx, np.arange(1, shape[ax]), axis=ax).ravel()
        face_lo.append(lo)
        face_hi.append(hi)
        face_axis.append(np.full(lo.size, ax, dtype=np.int8))
        if dim == 1:
            face_area.append(np.ones(lo.size))
        else:
            other = 1 - ax
            area = extent(cells[lo, other])
            face_area.append(area)
    face_lo = np.concatenate(face_lo)
    face_hi = np.concatenate(face_hi)
    face_axis = np.concatenate(face_axis)
    face_area = np.concatenate(face_area)
    centers = 0.5 * (cells[face_lo] + cells[face_hi])

    diff = np.empty(face_lo.size)
    drift = np.empty(face_lo.size)
    for ax in range(dim):
        sel = face_axis == ax
        diff[sel] = _spec_at(diffusion_spec, centers[sel], ax, "diffusion")
        drift[sel] = _spec_at(field_spec, centers[sel], ax, "field")

    grid = Grid(dim=dim, shape=shape, h=h, cells=cells, cell_volume=vol,
                boundary_flags=flags, face_lo=face_lo, face_hi=face_hi,
                face_axis=face_axis, face_area=face_area,
                face_diff=diff, face_drift=drift)
    grid.validate()
    return grid


class Nonlinearity:
    """Monotone map sigma on the nonnegative half-line with derivative and inverse.

    Evaluation is vectorized over numpy arrays.  Arguments below 0 are
    rejected: the map is only defined on [0, inf).
    """

    def __init__(self, eval_fn: Callable, deriv_fn: Callable, inverse_fn: Callable,
                 kind: str = "custom", exponent: float | None = None):
        self._eval = eval_fn
        self._deriv = deriv_fn
        self._inverse = inverse_fn
        self.kind = kind
        self.exponent = exponent

    def __call__(self, s):
        return self.eval(s)

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("sigma evaluated at negative argument")
        return self._eval(s)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("sigma' evaluated at negative argument")
        return self._deriv(s)

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        return self._inverse(z)

    def __repr__(self):
        if self.kind == "power":
            return f"Nonlinearity(power, m={self.exponent})"
        return f"Nonlinearity({self.kind})"


def power_law(m: float) -> Nonlinearity:
    """sigma(s) = s**m; m = 1 gives linear diffusion, m > 1 slow/porous diffusion."""
    if m <= 0:
        raise ValueError("power-law exponent must be positive")
    if m == 1.0:
        return Nonlinearity(lambda s: s, lambda s: np.ones_like(s), lambda z: z,
                            kind="power", exponent=1.0)

    def ev(s):
        return np.power(s, m)

    def dv(s):
        with np.errstate(divide="ignore"):
            out = m * np.power(s, m - 1.0)
        return np.where(s == 0.0, 0.0 if m > 1 else out, out)

    def inv(z):
        if np.any(np.asarray(z) < 0):
            raise ValueError("inverse of power law needs nonnegative argument")
        return np.power(z, 1.0 / m)

    return Nonlinearity(ev, dv, inv, kind="power", exponent=float(m))


identity = power_law(1.0)


def tabulated(s_values: Sequence[float], sigma_values: Sequence[float]) -> Nonlinearity:
    """Monotone cubic interpolant of tabulated (s, sigma(s)) pairs.

    The inverse solves sigma(s) = z numerically so that the round trip
    inverse(eval(s)) = s holds to near machine precision between knots.
    """
    s = np.asarray(s_values, dtype=float)
    v = np.asarray(sigma_values, dtype=float)
    if s.ndim != 1 or s.shape != v.shape or s.size < 3:
        raise ValueError("need matching 1D tables with at least 3 points")
    if np.any(np.diff(s) <= 0) or np.any(np.diff(v) <= 0):
        raise ValueError("table must be strictly increasing in s and sigma")
    interp = PchipInterpolator(s, v, extrapolate=False)
    dinterp = interp.derivative()

    def ev(x):
        out = interp(x)
        if np.any(np.isnan(out)):
            raise ValueError("tabulated sigma evaluated outside its table")
        return out

    def dv(x):
        out = dinterp(x)
        if np.any(np.isnan(out)):
            raise ValueError("tabulated sigma' evaluated outside its table")
        return out

    def inv_scalar(z):
        if z <= v[0]:
            if abs(z - v[0]) > 1e-12 * (1 + abs(v[0])):
                raise ValueError("inverse argument below table range")
            return s[0]
        if z >= v[-1]:
            if abs(z - v[-1]) > 1e-12 * (1 + abs(v[-1])):
                raise ValueError("inverse argument above table range")
            return s[-1]
        return brentq(lambda x: interp(x) - z, s[0], s[-1], xtol=1e-15, rtol=8.9e-16)

    def inv(z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 0:
            return np.float64(inv_scalar(float(z)))
        return np.array([inv_scalar(t) for t in z.ravel()]).reshape(z.shape)

    return Nonlinearity(ev, dv, inv, kind="tabulated")


@dataclass
class NonlinearityReport:
    monotone: bool
    inverse_ok: bool
    min_deriv: float
    max_roundtrip_error: float

    @property
    def passed(self) -> bool:
        return self.monotone and self.inverse_ok


def validate_nonlinearity(nl: Nonlinearity, s_max: float, n_samples: int = 2001) -> NonlinearityReport:
    """Sample sigma' on [0, s_max] and exercise the inverse round trip."""
    if s_max <= 0:
        raise ValueError("s_max must be positive")
    s = np.linspace(0.0, s_max, n_samples)
    d = np.asarray(nl.deriv(s), dtype=float)
    monotone = bool(np.all(d >= 0))
    grid = np.linspace(s_max / n_samples, s_max, 37)
    err = 0.0
    inverse_ok = True
    try:
        back = np.asarray(nl.inverse(nl.eval(grid)), dtype=float)
        err = float(np.max(np.abs(back - grid) / np.maximum(np.abs(grid), 1e-300)))
        inverse_ok = err <= 1e-12
    except Exception:
        inverse_ok = False
        err = np.inf
    return NonlinearityReport(monotone=monotone, inverse_ok=inverse_ok,
                              min_deriv=float(d.min()), max_roundtrip_error=err)


class ConvexGenerator:
    """Convex scalar generator used to build entropy-type functionals.

    kind "phi": vanishes with its derivative at 1 (quotient comparison).
    kind "psi": derivative vanishes at 0 (difference comparison).
    """

    def __init__(self, kind: str, eval_fn: Callable, deriv1_fn: Callable,
                 deriv2_fn: Callable, name: str = "custom"):
        if kind not in ("phi", "psi"):
            raise ValueError("kind must be 'phi' or 'psi'")
        self.kind = kind
        self.name = name
        self._eval = eval_fn
        self._deriv1 = deriv1_fn
        self._deriv2 = deriv2_fn
        self._check()

    def _check(self):
        if self.kind == "phi":
            if abs(float(self._eval(np.float64(1.0)))) > 1e-12:
                raise ValueError("phi generator must vanish at 1")
            if abs(float(self._deriv1(np.float64(1.0)))) > 1e-12:
                raise ValueError("phi generator must have zero slope at 1")
            z = np.linspace(1e-6, 10.0, 101)
        else:
            if abs(float(self._deriv1(np.float64(0.0)))) > 1e-12:
                raise ValueError("psi generator must have zero slope at 0")
            z = np.linspace(-10.0, 10.0, 101)
        if np.any(np.asarray(self._deriv2(z)) < -1e-12):
            raise ValueError("generator must be convex on the sampled range")

    def eval(self, z):
        return self._eval(np.asarray(z, dtype=float))

    def deriv1(self, z):
        return self._deriv1(np.asarray(z, dtype=float))

    def deriv2(self, z):
        return self._deriv2(np.asarray(z, dtype=float))

    def __repr__(self):
        return f"ConvexGenerator({self.name})"


def _xlogx(z):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = z * np.log(z)
    return np.where(z == 0.0, 0.0, out)


PHI_LOG = ConvexGenerator(
    "phi",
    lambda z: _xlogx(z) - z + 1.0,
    lambda z: np.log(z),
    lambda z: 1.0 / z,
    name="phi_log",
)

PHI_QUAD = ConvexGenerator(
    "phi",
    lambda z: 0.5 * (z - 1.0) ** 2,
    lambda z: z - 1.0,
    lambda z: np.ones_like(z),
    name="phi_quad",
)

PSI_QUAD = ConvexGenerator(
    "psi",
    lambda z: 0.5 * z ** 2,
    lambda z: z,
    lambda z: np.ones_like(z),
    name="psi_quad",
)


def psi_power(p: float) -> ConvexGenerator:
    """|z|**p with p > 1; the second derivative diverges at 0 when p < 2."""
    if p <= 1:
        raise ValueError("psi power needs p > 1")

    def d2(z):
        with np.errstate(divide="ignore"):
            return p * (p - 1.0) * np.abs(z) ** (p - 2.0)

    return ConvexGenerator(
        "psi",
        lambda z: np.abs(z) ** p,
        lambda z: p * np.sign(z) * np.abs(z) ** (p - 1.0),
        d2,
        name=f"psi_power_{p}",
    )


@dataclass
class DensityField:
    """Per-cell density values; boundary cells carry the clamped data."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError("values must have one entry per grid cell")
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")

    def __array__(self, dtype=None, copy=None):
        # lets any numeric entry point accept the field where it expects
        # per-cell values
        if dtype is None:
            return self.values if not copy else self.values.copy()
        return self.values.astype(dtype)

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary]

    def require_positive_boundary(self) -> None:
        flags = self.grid.boundary_flags
        clamped = flags == DIRICHLET
        if np.any(self.values[clamped] <= 0.0):
            raise ValueError("Dirichlet boundary data must be strictly positive")

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy())


def field_from_callable(grid: Grid, fn: Callable) -> DensityField:
    vals = np.array([float(fn(*c)) for c in grid.cells])
    return DensityField(grid, vals)


def uniform_field(grid: Grid, value: float) -> DensityField:
    return DensityField(grid, np.full(grid.n_cells, float(value)))
