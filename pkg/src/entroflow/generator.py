"""Discrete drift-diffusion operator realized as a nonnegative jump-rate matrix.

The operator acts on measures: given per-state masses w the rate of change of
the mass at state x is sum_y K(y,x) w_y - w_x sum_y K(x,y).  Diffusion enters
through symmetric face conductances, drift through upwind (or centered) face
splitting, so every rate stays nonnegative in the default mode and the whole
PDE discretization doubles as an exact finite-state Markov generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import DIRICHLET, Grid


@dataclass
class DiscreteGenerator:
    """Jump rates K(x,y) >= 0 on a finite state space with reference weights nu."""

    n_states: int
    rows: np.ndarray        # source states of the rate entries
    cols: np.ndarray        # target states
    rates: np.ndarray       # K(row, col) >= 0
    nu: np.ndarray          # reference weights, strictly positive
    clamped: np.ndarray     # bool mask of states whose density is held fixed
    _K: sparse.csr_matrix = field(init=False, repr=False)
    _KT: sparse.csr_matrix = field(init=False, repr=False)
    out_rate: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.rates = np.asarray(self.rates, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        self.clamped = np.asarray(self.clamped, dtype=bool)
        if np.any(self.rates < 0):
            raise ValueError("jump rates must be nonnegative")
        if np.any(self.rows == self.cols):
            raise ValueError("diagonal rate entries are not allowed")
        if np.any(self.nu <= 0):
            raise ValueError("reference weights must be strictly positive")
        n = self.n_states
        self._K = sparse.csr_matrix((self.rates, (self.rows, self.cols)), shape=(n, n))
        self._K.sum_duplicates()
        coo = self._K.tocoo()  # canonical, duplicate-free entry list
        self.rows, self.cols, self.rates = coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data
        self._KT = self._K.T.tocsr()
        self.out_rate = np.asarray(self._K.sum(axis=1)).ravel()
        self.rev_rates = np.asarray(self._K[self.cols, self.rows]).ravel()

    @property
    def free(self) -> np.ndarray:
        return ~self.clamped

    def apply(self, sigma_of_f: np.ndarray) -> np.ndarray:
        """Density rate of change: (generator applied to sigma(f) nu) / nu.

        Clamped states report the flux they absorb; callers advancing the
        dynamics must not update them.
        """
        u = np.asarray(sigma_of_f, dtype=float)
        if u.shape != (self.n_states,):
            raise ValueError("sigma_of_f must have one value per state")
        if not np.all(np.isfinite(u)) or np.any(u < 0):
            raise ValueError("sigma_of_f must be finite and nonnegative")
        w = u * self.nu
        return (self._KT @ w - self.out_rate * w) / self.nu

    def apply_linear(self, u: np.ndarray) -> np.ndarray:
        """Same as ``apply`` without sign/shape validation (solver inner loops)."""
        w = u * self.nu
        return (self._KT @ w - self.out_rate * w) / self.nu

    def linear_operator(self) -> sparse.csr_matrix:
        """Sparse matrix L with L u = apply(u); rows are density rates."""
        n = self.n_states
        scale_in = sparse.diags(1.0 / self.nu) @ self._KT @ sparse.diags(self.nu)
        return (scale_in - sparse.diags(self.out_rate)).tocsr()

    def pair_fluxes(self, sigma_of_f: np.ndarray) -> np.ndarray:
        """Net mass flow K(x,y) w_x - K(y,x) w_y for every stored rate entry."""
        w = np.asarray(sigma_of_f, dtype=float) * self.nu
        return self.rates * w[self.rows] - self.rev_rates * w[self.cols]

    def detailed_balance_residual(self, measure: np.ndarray) -> float:
        """Max |K(x,y) m_x - K(y,x) m_y| over rate entries, for a per-state measure."""
        m = np.asarray(measure, dtype=float)
        if self.rates.size == 0:
            return 0.0
        return float(np.max(np.abs(self.rates * m[self.rows] - self.rev_rates * m[self.cols])))

    def stationarity_residual(self, measure: np.ndarray, free_only: bool = True) -> float:
        """Max-norm of the generator applied to a per-state measure.

        Clamped reservoir states absorb a steady flux by construction, so the
        stationarity of a driven state is judged on the free states; pass
        ``free_only=False`` to include every state (closed systems).
        """
        m = np.asarray(measure, dtype=float)
        rate = self._KT @ m - self.out_rate * m
        if free_only and self.clamped.any():
            rate = rate[self.free]
        return float(np.max(np.abs(rate), initial=0.0))

    def dump_rates(self, path) -> None:
        """Coordinate text dump (row, col, rate), one entry per line."""
        with open(path, "w") as fh:
            for r, c, v in zip(self.rows, self.cols, self.rates):
                fh.write(f"{r} {c} {float(v)!r}\n")


def assemble_from_grid(grid: Grid, bc: str = "dirichlet", drift_mode: str = "upwind",
                       peclet_max: float = 2.0) -> DiscreteGenerator:
    """Assemble the drift-diffusion generator from face data.

    Dirichlet mode clamps the boundary layer (ghost reservoir states whose
    density never moves); Neumann mode keeps every cell free, and since no
    face crosses the domain wall the discrete weak identity carries no
    boundary term.  Upwind drift keeps all rates nonnegative for any field;
    centered drift is second-order but requires face Peclet |E| h / A below
    ``peclet_max``.
    """
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    if drift_mode not in ("upwind", "centered"):
        raise ValueError(f"unknown drift mode {drift_mode!r}")
    grid.validate()
    h = grid.h
    beta = grid.face_diff * grid.face_area / h          # symmetric conductance
    drift_flux = grid.face_drift * grid.face_area       # signed, along lo->hi

    if drift_mode == "upwind":
        lo_to_hi = beta + np.maximum(drift_flux, 0.0)
        hi_to_lo = beta + np.maximum(-drift_flux, 0.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            peclet = np.abs(grid.face_drift) * h / grid.face_diff
        peclet = np.where(np.abs(grid.face_drift) == 0.0, 0.0, peclet)
        if np.any(peclet > peclet_max):
            raise ValueError(
                f"face Peclet number {np.max(peclet):.3g} exceeds bound {peclet_max:g} "
                "in centered mode; use upwind or refine the grid")
        lo_to_hi = beta + 0.5 * drift_flux
        hi_to_lo = beta - 0.5 * drift_flux

    nu = grid.cell_volume
    rows = np.concatenate([grid.face_lo, grid.face_hi])
    cols = np.concatenate([grid.face_hi, grid.face_lo])
    vals = np.concatenate([lo_to_hi / nu[grid.face_lo], hi_to_lo / nu[grid.face_hi]])
    keep = vals > 0.0
    clamped = (grid.boundary_flags == DIRICHLET) if bc == "dirichlet" \
        else np.zeros(grid.n_cells, dtype=bool)
    return DiscreteGenerator(n_states=grid.n_cells, rows=rows[keep], cols=cols[keep],
                             rates=vals[keep], nu=nu.copy(), clamped=clamped)


def dirichlet_form(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete Dirichlet form sum_faces A |face| (du/h)(dv/h) h."""
    du = u[grid.face_hi] - u[grid.face_lo]
    dv = v[grid.face_hi] - v[grid.face_lo]
    return float(np.sum(grid.face_diff * grid.face_area / grid.h * du * dv))


def measure_pairing(gen: DiscreteGenerator, u: np.ndarray, v: np.ndarray) -> float:
    """<u, generator(v nu)> with the generator output read as a measure rate."""
    w = v * gen.nu
    rate_mu = gen._KT @ w - gen.out_rate * w
    return float(np.dot(u, rate_mu))


def load_rates(path, n_states: int, nu, clamped=None) -> DiscreteGenerator:
    """Read a coordinate text rate list (row, col, rate) into a generator."""
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    if clamped is None:
        clamped = np.zeros(n_states, dtype=bool)
    return DiscreteGenerator(n_states=n_states, rows=np.array(rows, dtype=np.int64),
                             cols=np.array(cols, dtype=np.int64),
                             rates=np.array(vals), nu=np.asarray(nu, dtype=float),
                             clamped=np.asarray(clamped, dtype=bool))
