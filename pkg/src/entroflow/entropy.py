"""Entropy-type Lyapunov functionals and their production (dissipation) rates.

Two families are implemented, differing in how a state f is compared to the
reference state f_ref:

* ``phi_entropy`` compares through the quotient sigma(f)/sigma(f_ref); its
  production rate is nonpositive for any stationary reference measure, even a
  non-reversible one.
* ``psi_entropy`` compares through the difference sigma(f) - sigma(f_ref);
  its production rate is nonpositive only when the reference weights are
  reversible for the dynamics, and the production evaluators enforce that.

Inner one-dimensional integrals are always evaluated by adaptive panel-doubled
Gauss-Legendre quadrature; closed forms exist for special cases but serve as
test oracles only, so arbitrary nonlinearities and generators are supported.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import warnings

import numpy as np

from .core import ConvexGenerator, Grid, Nonlinearity
from .generator import DiscreteGenerator

QUAD_ABS_TOL = 1e-12
_GAUSS_ORDER = 24


class NonReversibleError(RuntimeError):
    """Raised when a difference-form production is requested without reversibility."""


class NotStationaryError(RuntimeError):
    """Raised when the reference measure fails the stationarity residual check."""


@lru_cache(maxsize=8)
def _gauss_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def cell_integrals(lower: np.ndarray, upper: np.ndarray, integrand,
                   abs_tol: float = QUAD_ABS_TOL, max_doublings: int = 7) -> np.ndarray:
    """Vectorized adaptive Gauss-Legendre integral of ``integrand`` per cell.

    ``integrand`` receives a (n_cells, n_nodes) matrix of abscissae and must
    return values of the same shape.  Panels double until the per-cell change
    is below ``abs_tol``; integration from a larger lower limit flips the sign
    as usual.
    """
    a = np.asarray(lower, dtype=float)
    b = np.asarray(upper, dtype=float)
    x, w = _gauss_nodes(_GAUSS_ORDER)

    def value(panels: int) -> np.ndarray:
        edges = np.linspace(0.0, 1.0, panels + 1)
        starts, ends = edges[:-1], edges[1:]
        # panel nodes in [0,1], then mapped to [a,b] per cell
        t = (starts[:, None] + np.outer((ends - starts), (x + 1.0) / 2.0)).ravel()
        wt = (np.outer((ends - starts) / 2.0, w)).ravel()
        s = a[:, None] + np.outer(b - a, t)
        vals = integrand(s)
        return (b - a) * (vals @ wt)

    est = value(1)
    panels = 2
    for _ in range(max_doublings):
        nxt = value(panels)
        err = np.max(np.abs(nxt - est))
        est = nxt
        if err <= abs_tol:
            break
        panels *= 2
    return est


@dataclass
class EntropySpec:
    """Pairing of a convex generator with a functional kind for diagnostics."""

    kind: str                     # "phi" (quotient) or "psi" (difference)
    generator: ConvexGenerator
    abs_tol: float = QUAD_ABS_TOL

    def __post_init__(self):
        if self.kind not in ("phi", "psi"):
            raise ValueError("kind must be 'phi' or 'psi'")
        if self.generator.kind != self.kind:
            raise ValueError("generator family does not match the requested kind")


def _check_reference(f_ref: np.ndarray, nl: Nonlinearity) -> np.ndarray:
    sig = np.asarray(nl.eval(f_ref), dtype=float)
    if np.any(sig <= 1e-300):
        raise ValueError("sigma(f_ref) vanishes at some cell; reference state invalid")
    return sig


def phi_entropy(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                phi: ConvexGenerator, nu: np.ndarray,
                abs_tol: float = QUAD_ABS_TOL) -> float:
    """Quotient-form relative entropy of f against f_ref, weighted by nu.

    Cellwise integral of phi'(sigma(s)/sigma(f_ref)) for s between f_ref and
    f; nonnegative because sigma is increasing and phi' changes sign at 1.
    """
    if phi.kind != "phi":
        raise ValueError("phi_entropy needs a quotient-kind generator")
    f = np.asarray(f, dtype=float)
    f_ref = np.asarray(f_ref, dtype=float)
    sig_ref = _check_reference(f_ref, nl)

    def integrand(s):
        return phi.deriv1(np.asarray(nl.eval(s), dtype=float) / sig_ref[:, None])

    vals = cell_integrals(f_ref, f, integrand, abs_tol=abs_tol)
    return float(np.dot(vals, nu))


def psi_entropy(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                psi: ConvexGenerator, nu: np.ndarray,
                abs_tol: float = QUAD_ABS_TOL) -> float:
    """Difference-form relative entropy of f against f_ref, weighted by nu."""
    if psi.kind != "psi":
        raise ValueError("psi_entropy needs a difference-kind generator")
    f = np.asarray(f, dtype=float)
    f_ref = np.asarray(f_ref, dtype=float)
    sig_ref = np.asarray(nl.eval(f_ref), dtype=float)

    def integrand(s):
        return psi.deriv1(np.asarray(nl.eval(s), dtype=float) - sig_ref[:, None])

    vals = cell_integrals(f_ref, f, integrand, abs_tol=abs_tol)
    return float(np.dot(vals, nu))


def _face_mean(values: np.ndarray, grid: Grid) -> np.ndarray:
    return 0.5 * (values[grid.face_lo] + values[grid.face_hi])


def phi_production_grid(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                        phi: ConvexGenerator, grid: Grid) -> float:
    """Dissipation rate of the quotient entropy in divergence (Dirichlet) form.

    Face-difference gradient of h = sigma(f)/sigma(f_ref), convexity weight at
    the face mean, stationary conductivity averaged across the face.  Exact
    for quadratic generators; second-order consistent otherwise.
    """
    sig_ref = _check_reference(np.asarray(f_ref, dtype=float), nl)
    h = np.asarray(nl.eval(f), dtype=float) / sig_ref
    dh = h[grid.face_hi] - h[grid.face_lo]
    beta = grid.face_diff * grid.face_area / grid.h
    weight = phi.deriv2(_face_mean(h, grid)) * _face_mean(sig_ref, grid)
    return float(-np.sum(weight * beta * dh * dh))


def psi_production_grid(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                        psi: ConvexGenerator, grid: Grid) -> float:
    """Dissipation rate of the difference entropy in divergence form.

    Requires the volume weights to be reversible for the drift-diffusion flow
    (zero drift on every face); the identity genuinely fails otherwise.
    """
    if not grid.is_reversible():
        raise NonReversibleError(
            "difference-form production requires reversible reference weights "
            "(the grid carries a nonzero drift field)")
    g = np.asarray(nl.eval(f), dtype=float) - np.asarray(nl.eval(f_ref), dtype=float)
    dg = g[grid.face_hi] - g[grid.face_lo]
    beta = grid.face_diff * grid.face_area / grid.h
    weight = psi.deriv2(_face_mean(g, grid))
    return float(-np.sum(weight * beta * dg * dg))


STATIONARITY_RTOL = 1e-9


def phi_production_jump(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                        phi: ConvexGenerator, gen: DiscreteGenerator,
                        check_stationary: bool = True) -> float:
    """Exact dissipation rate of the quotient entropy for a jump generator.

    Double sum over rate entries of
    (h(y)-h(x)) phi'(h(y)) + phi(h(x)) - phi(h(y)) weighted by
    K(x,y) sigma(f_ref)(x) nu(x); every summand is nonpositive by convexity.
    The reference measure must be stationary for the kernel.
    """
    sig_ref = _check_reference(np.asarray(f_ref, dtype=float), nl)
    m = sig_ref * gen.nu
    if check_stationary:
        resid = gen.stationarity_residual(m)
        scale = float(np.max(gen.rates, initial=0.0)) * float(np.max(m))
        if resid > STATIONARITY_RTOL * max(scale, 1e-300):
            raise NotStationaryError(
                f"reference measure is not stationary (residual {resid:.3e})")
    h = np.asarray(nl.eval(f), dtype=float) / sig_ref
    hx, hy = h[gen.rows], h[gen.cols]
    bracket = (hy - hx) * phi.deriv1(hy) + phi.eval(hx) - phi.eval(hy)
    return float(-np.sum(bracket * gen.rates * m[gen.rows]))


def psi_production_jump(f: np.ndarray, f_ref: np.ndarray, nl: Nonlinearity,
                        psi: ConvexGenerator, gen: DiscreteGenerator,
                        check_reversible: bool = True) -> float:
    """Exact dissipation rate of the difference entropy for a jump generator.

    Requires nu to satisfy detailed balance with the kernel; raises
    NonReversibleError otherwise (the identity fails without it).
    """
    if check_reversible:
        resid = gen.detailed_balance_residual(gen.nu)
        scale = float(np.max(gen.rates * gen.nu[gen.rows], initial=0.0))
        if resid > 1e-12 * max(scale, 1e-300):
            raise NonReversibleError(
                f"reference weights are not reversible (residual {resid:.3e})")
    g = np.asarray(nl.eval(f), dtype=float) - np.asarray(nl.eval(f_ref), dtype=float)
    gx, gy = g[gen.rows], g[gen.cols]
    bracket = (gy - gx) * psi.deriv1(gy) + psi.eval(gx) - psi.eval(gy)
    return float(-np.sum(bracket * gen.rates * gen.nu[gen.rows]))


def density_ld_rate(f: float, f_ref: float, nl: Nonlinearity,
                    abs_tol: float = QUAD_ABS_TOL) -> float:
    """Scalar rate functional: integral of log(sigma(s)/sigma(f_ref)) from f_ref to f.

    This is the per-site cost of observing density f under a product measure
    tuned to density f_ref; it vanishes at f = f_ref and is nonnegative.
    """
    if f_ref <= 0:
        raise ValueError("reference density must be positive")
    sig_ref = float(nl.eval(np.float64(f_ref)))
    if sig_ref <= 0:
        raise ValueError("sigma(f_ref) must be positive")
    lo, hi = min(f, f_ref), max(f, f_ref)
    probe = np.linspace(lo, hi, 101)[1:-1]
    if probe.size and np.any(np.asarray(nl.eval(probe)) <= 0.0) and lo > 0.0:
        warnings.warn("sigma vanishes inside the integration range; refusing "
                      "a principal-value interpretation")
        raise ValueError("sigma vanishes strictly inside the integration range")

    def integrand(s):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(nl.eval(s), dtype=float) / sig_ref)

    val = cell_integrals(np.array([f_ref]), np.array([float(f)]), integrand,
                         abs_tol=abs_tol)
    return float(val[0])


def profile_ld_functional(f_profile: np.ndarray, f_ref_profile: np.ndarray,
                          nl: Nonlinearity, nu: np.ndarray,
                          abs_tol: float = QUAD_ABS_TOL) -> float:
    """Profile-level rate functional: cellwise integral of sigma(s) - sigma(f_ref).

    Structurally identical to the difference entropy with the quadratic
    generator; the equality is exercised by tests rather than assumed here.
    """
    f = np.asarray(f_profile, dtype=float)
    f_ref = np.asarray(f_ref_profile, dtype=float)
    if f.shape != f_ref.shape:
        raise ValueError("profiles must share a grid")
    sig_ref = np.asarray(nl.eval(f_ref), dtype=float)

    def integrand(s):
        return np.asarray(nl.eval(s), dtype=float) - sig_ref[:, None]

    vals = cell_integrals(f_ref, f, integrand, abs_tol=abs_tol)
    return float(np.dot(vals, nu))


def standard_diagnostics(nl: Nonlinearity, f_ref: np.ndarray, nu: np.ndarray,
                         phi: ConvexGenerator, psi: ConvexGenerator,
                         grid: Grid | None = None,
                         gen: DiscreteGenerator | None = None) -> dict:
    """Column set {H_phi, N_psi, prod_H, prod_N} for trajectory logging.

    Productions use the exact jump form when a generator is supplied,
    otherwise the grid divergence form.  The difference-form production is
    included only when the reference weights are reversible.
    """
    f_ref = np.asarray(f_ref, dtype=float)
    cols = {
        "H_phi": lambda f: phi_entropy(f, f_ref, nl, phi, nu),
        "N_psi": lambda f: psi_entropy(f, f_ref, nl, psi, nu),
    }
    if gen is not None:
        cols["prod_H"] = lambda f: phi_production_jump(f, f_ref, nl, phi, gen,
                                                       check_stationary=False)
        if gen.detailed_balance_residual(gen.nu) <= 1e-12 * max(
                float(np.max(gen.rates * gen.nu[gen.rows], initial=0.0)), 1e-300):
            cols["prod_N"] = lambda f: psi_production_jump(f, f_ref, nl, psi, gen,
                                                           check_reversible=False)
    elif grid is not None:
        cols["prod_H"] = lambda f: phi_production_grid(f, f_ref, nl, phi, grid)
        if grid.is_reversible():
            cols["prod_N"] = lambda f: psi_production_grid(f, f_ref, nl, psi, grid)
    return cols
