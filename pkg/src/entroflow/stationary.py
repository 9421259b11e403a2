"""Stationary states of the discrete nonlinear drift-diffusion dynamics.

The stationary equation is linear in u = sigma(f): solve the clamped linear
problem for u by sparse direct elimination, then invert the nonlinearity.
Closed systems (no clamped states) have a one-dimensional kernel; there the
free scale is fixed by matching a prescribed total mass of f.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.sparse.linalg import MatrixRankWarning, spsolve


def _solve_quiet(A, b):
    """spsolve returning inf/nan rather than warning on singular systems."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        with np.errstate(all="ignore"):
            return spsolve(A, b)

from .core import Grid, Nonlinearity
from .generator import DiscreteGenerator


@dataclass
class StationaryResult:
    f_inf: np.ndarray
    residual_norm: float
    newton_iters: int
    bounds: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "newton_iters": self.newton_iters,
            "min": self.bounds[0],
            "max": self.bounds[1],
        }


class SingularSystemError(RuntimeError):
    pass


def _mass_rate_matrix(gen: DiscreteGenerator) -> sparse.csr_matrix:
    """Q with (Q w)_x = mass rate at x for measure masses w."""
    return (gen._KT - sparse.diags(gen.out_rate)).tocsr()


def solve_stationary(gen: DiscreteGenerator, nl: Nonlinearity,
                     f_b: np.ndarray | None = None,
                     init: np.ndarray | None = None,
                     mass: float | None = None,
                     residual_tol: float | None = None) -> StationaryResult:
    """Solve generator(sigma(f) nu) = 0.

    Open systems (clamped states present): ``f_b`` supplies per-state clamped
    densities (entries at free states are ignored; pass the full vector).
    Closed systems: ``mass`` fixes sum f nu.  ``init`` is accepted for
    interface stability but the linear route needs no iteration.
    """
    del init  # exact linear solve; kept for call-site compatibility
    n = gen.n_states
    Q = _mass_rate_matrix(gen)
    clamped = gen.clamped
    free = ~clamped
    iters = 0

    if clamped.any():
        if f_b is None:
            raise ValueError("clamped generator needs boundary densities f_b")
        f_b = np.asarray(f_b, dtype=float)
        if np.any(f_b[clamped] <= 0):
            raise ValueError("boundary densities must be strictly positive")
        u_b = np.zeros(n)
        u_b[clamped] = np.asarray(nl.eval(f_b[clamped]), dtype=float)
        # masses w = u * nu; solve Q_ff w_f = -Q_fc w_c
        w_b = u_b * gen.nu
        Q_ff = Q[np.ix_(free, free)].tocsc()
        rhs = -(Q[np.ix_(free, clamped)] @ w_b[clamped])
        w_f = _solve_quiet(Q_ff, rhs)
        if not np.all(np.isfinite(w_f)):
            raise SingularSystemError(
                "stationary system is singular (disconnected interior?)")
        w = w_b.copy()
        w[free] = w_f
        u = w / gen.nu
        if np.any(u < 0):
            u = np.maximum(u, 0.0)  # roundoff guard; maximum principle forbids < 0
        f = np.asarray(nl.inverse(u), dtype=float)
        f[clamped] = f_b[clamped]
    else:
        if mass is None:
            raise ValueError("closed system needs a target mass for f")
        # kernel of Q is spanned by the unique stationary measure (irreducible case)
        w0 = _kernel_vector(Q)
        if np.any(w0 <= 0):
            raise SingularSystemError(
                "stationary measure is not strictly positive (reducible kernel?)")

        def mass_of(scale: float) -> float:
            f_try = np.asarray(nl.inverse(scale * w0 / gen.nu), dtype=float)
            return float(np.sum(f_try * gen.nu))

        lo, hi = 1e-12, 1.0
        while mass_of(hi) < mass:
            hi *= 4.0
            if hi > 1e18:
                raise SingularSystemError("mass target unreachable")
        while mass_of(lo) > mass:
            lo /= 4.0
            if lo < 1e-300:
                raise SingularSystemError("mass target unreachable")
        scale = brentq(lambda c: mass_of(c) - mass, lo, hi, xtol=1e-300, rtol=8.9e-16)
        u = scale * w0 / gen.nu
        f = np.asarray(nl.inverse(u), dtype=float)

    mass_rate = gen.apply(np.asarray(nl.eval(f), dtype=float)) * gen.nu
    residual = float(np.max(np.abs(mass_rate[free]), initial=0.0))
    scale_ref = max(float(np.max(gen.rates, initial=0.0)) * float(np.max(u * gen.nu, initial=0.0)), 1e-300)
    tol = residual_tol if residual_tol is not None else 1e-11 * scale_ref
    if residual > tol:
        raise SingularSystemError(
            f"stationary residual {residual:.3e} exceeds tolerance {tol:.3e}")
    return StationaryResult(f_inf=f, residual_norm=residual, newton_iters=iters,
                            bounds=(float(f.min()), float(f.max())))


def _kernel_vector(Q: sparse.csr_matrix) -> np.ndarray:
    """Positive kernel vector of the (singular) mass-rate matrix."""
    n = Q.shape[0]
    # replace the last balance equation by a normalization row
    A = Q.tolil(copy=True)
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    w = _solve_quiet(A.tocsc(), b)
    if not np.all(np.isfinite(w)):
        raise SingularSystemError("kernel solve failed (disconnected state space?)")
    return w


def stationary_flux_norm(gen: DiscreteGenerator, nl: Nonlinearity, f_inf: np.ndarray) -> float:
    """Max-norm of the pairwise net flux carried by the stationary measure.

    Zero only when sigma(f_inf) nu is reversible; boundary-driven states
    generally transport mass at stationarity.
    """
    return float(np.max(np.abs(gen.pair_fluxes(np.asarray(nl.eval(f_inf), dtype=float)))))


def export_profile_csv(path, grid: Grid, values: np.ndarray, name: str = "f") -> None:
    """Cell coordinates and per-cell values, full double precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        coords = [f"x{i}" for i in range(grid.dim)]
        writer.writerow(coords + [name])
        for cell, v in zip(grid.cells, values):
            writer.writerow([repr(float(c)) for c in cell] + [repr(float(v))])
