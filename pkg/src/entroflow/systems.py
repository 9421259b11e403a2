"""Coupled two-species nonlinear diffusion with shared Lyapunov functionals.

The species couple only through their pointwise conductivities sigma1 and
sigma2.  A quotient-form entropy exists when the logarithmic mixed partials
match; a difference-form entropy exists when the plain mixed partials match.
Both reduce to a potential whose gradient reproduces the per-species log or
plain conductivity ratios, and the potential structure is what the checks
here verify numerically.  The quotient family is hard-wired to the log
generator and the difference family to the quadratic one; the compatibility
conditions pin these choices and reject anything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .core import Grid, Nonlinearity
from .entropy import cell_integrals
from .evolve import EvolveError
from .generator import DiscreteGenerator
from .trajectory import TrajectoryLog

COMPAT_TOL = 1e-8


class IncompatiblePairError(RuntimeError):
    """The species pair does not admit the requested entropy structure."""


def _fd_step(s):
    return 1e-6 * (1.0 + np.abs(s))


class SpeciesPair:
    """Pointwise conductivities (s1, s2) -> (sigma1, sigma2), both positive.

    Partial derivatives may be supplied analytically; otherwise central
    differences with a scaled step are used.  All callables must accept
    broadcasting numpy arrays.
    """

    def __init__(self, sigma1: Callable, sigma2: Callable,
                 d1_sigma1: Callable | None = None, d2_sigma1: Callable | None = None,
                 d1_sigma2: Callable | None = None, d2_sigma2: Callable | None = None,
                 name: str = "custom"):
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.name = name
        self._d = {
            (1, 1): d1_sigma1, (2, 1): d2_sigma1,
            (1, 2): d1_sigma2, (2, 2): d2_sigma2,
        }

    def partial(self, wrt: int, species: int, s1, s2):
        fn = self._d[(wrt, species)]
        sig = self.sigma1 if species == 1 else self.sigma2
        if fn is not None:
            return fn(s1, s2)
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        if wrt == 1:
            d = _fd_step(s1)
            return (sig(s1 + d, s2) - sig(s1 - d, s2)) / (2.0 * d)
        d = _fd_step(s2)
        return (sig(s1, s2 + d) - sig(s1, s2 - d)) / (2.0 * d)

    def jacobian_positive(self, box: tuple[float, float, float, float],
                          n: int = 21) -> bool:
        """Positive definiteness of the symmetrized Jacobian on a sample box."""
        s1 = np.linspace(box[0], box[1], n)
        s2 = np.linspace(box[2], box[3], n)
        A, B = np.meshgrid(s1, s2, indexing="ij")
        j11 = self.partial(1, 1, A, B)
        j12 = self.partial(2, 1, A, B)
        j21 = self.partial(1, 2, A, B)
        j22 = self.partial(2, 2, A, B)
        trace = j11 + j22
        det_sym = j11 * j22 - 0.25 * (j12 + j21) ** 2
        return bool(np.all(trace > 0) and np.all(det_sym > 0))


def sum_family_pair(phi_fn: Callable, dphi_fn: Callable, name: str = "sum") -> SpeciesPair:
    """sigma1 = sigma2 = phi(s1 + s2); satisfies both compatibility relations."""

    def sig(s1, s2):
        return phi_fn(np.asarray(s1, dtype=float) + np.asarray(s2, dtype=float))

    def dsig(s1, s2):
        return dphi_fn(np.asarray(s1, dtype=float) + np.asarray(s2, dtype=float))

    return SpeciesPair(sig, sig, dsig, dsig, dsig, dsig, name=name)


def sum_power_pair(m: float) -> SpeciesPair:
    return sum_family_pair(lambda z: z ** m, lambda z: m * z ** (m - 1.0),
                           name=f"sum_power_{m}")


def decoupled_pair(nl1: Nonlinearity, nl2: Nonlinearity) -> SpeciesPair:
    """sigma1 depends on s1 only, sigma2 on s2 only."""
    zero = lambda s1, s2: np.zeros(np.broadcast(np.asarray(s1), np.asarray(s2)).shape)
    return SpeciesPair(
        lambda s1, s2: np.broadcast_to(nl1.eval(s1), np.broadcast(np.asarray(s1), np.asarray(s2)).shape).copy(),
        lambda s1, s2: np.broadcast_to(nl2.eval(s2), np.broadcast(np.asarray(s1), np.asarray(s2)).shape).copy(),
        lambda s1, s2: np.broadcast_to(nl1.deriv(s1), np.broadcast(np.asarray(s1), np.asarray(s2)).shape).copy(),
        zero, zero,
        lambda s1, s2: np.broadcast_to(nl2.deriv(s2), np.broadcast(np.asarray(s1), np.asarray(s2)).shape).copy(),
        name="decoupled")


@dataclass
class CompatReport:
    kind: str
    max_mismatch: float
    tol: float = COMPAT_TOL

    @property
    def passed(self) -> bool:
        return self.max_mismatch <= self.tol


def _sample_box(box, n):
    s1 = np.linspace(box[0], box[1], n)
    s2 = np.linspace(box[2], box[3], n)
    return np.meshgrid(s1, s2, indexing="ij")


def check_compat_quotient(pair: SpeciesPair, box: tuple[float, float, float, float],
                          n: int = 25) -> CompatReport:
    """Mismatch of d2 log sigma1 against d1 log sigma2 over the sample box."""
    A, B = _sample_box(box, n)
    lhs = pair.partial(2, 1, A, B) / pair.sigma1(A, B)
    rhs = pair.partial(1, 2, A, B) / pair.sigma2(A, B)
    return CompatReport("quotient", float(np.max(np.abs(lhs - rhs))))


def check_compat_difference(pair: SpeciesPair, box: tuple[float, float, float, float],
                            n: int = 25) -> CompatReport:
    """Mismatch of d2 sigma1 against d1 sigma2 over the sample box."""
    A, B = _sample_box(box, n)
    lhs = pair.partial(2, 1, A, B)
    rhs = pair.partial(1, 2, A, B)
    return CompatReport("difference", float(np.max(np.abs(lhs - rhs))))


@dataclass
class PairField:
    grid: Grid
    f1: np.ndarray
    f2: np.ndarray

    def __post_init__(self):
        self.f1 = np.asarray(self.f1, dtype=float)
        self.f2 = np.asarray(self.f2, dtype=float)
        n = self.grid.n_cells
        if self.f1.shape != (n,) or self.f2.shape != (n,):
            raise ValueError("pair fields need one value per cell and species")
        if np.any(self.f1 < 0) or np.any(self.f2 < 0):
            raise ValueError("densities must be nonnegative")

    def total(self) -> np.ndarray:
        return self.f1 + self.f2


def _field_box(pf: PairField, pf_ref: PairField) -> tuple[float, float, float, float]:
    lo1 = min(pf.f1.min(), pf_ref.f1.min())
    hi1 = max(pf.f1.max(), pf_ref.f1.max())
    lo2 = min(pf.f2.min(), pf_ref.f2.min())
    hi2 = max(pf.f2.max(), pf_ref.f2.max())
    pad1 = 1e-3 * (1.0 + hi1 - lo1)
    pad2 = 1e-3 * (1.0 + hi2 - lo2)
    return (max(lo1 - pad1, 1e-9), hi1 + pad1, max(lo2 - pad2, 1e-9), hi2 + pad2)


def _pair_potential(pair: SpeciesPair, ref1, ref2, kind: str):
    """Cellwise potential whose gradient carries the entropy structure.

    kind "quotient": integral of log(sigma1(s, f2)/sigma1(ref)) for species 1
    plus the species-2 leg anchored at ref1.  kind "difference": same legs
    with plain sigma differences.
    """
    ref1 = np.asarray(ref1, dtype=float)
    ref2 = np.asarray(ref2, dtype=float)
    s1_ref = pair.sigma1(ref1, ref2)
    s2_ref = pair.sigma2(ref1, ref2)

    def value(f1, f2):
        f1 = np.asarray(f1, dtype=float)
        f2 = np.asarray(f2, dtype=float)
        if kind == "quotient":
            leg1 = cell_integrals(ref1, f1,
                                  lambda s: np.log(pair.sigma1(s, f2[:, None]) / s1_ref[:, None]))
            leg2 = cell_integrals(ref2, f2,
                                  lambda s: np.log(pair.sigma2(ref1[:, None], s) / s2_ref[:, None]))
        else:
            leg1 = cell_integrals(ref1, f1,
                                  lambda s: pair.sigma1(s, f2[:, None]) - s1_ref[:, None])
            leg2 = cell_integrals(ref2, f2,
                                  lambda s: pair.sigma2(ref1[:, None], s) - s2_ref[:, None])
        return leg1 + leg2

    return value


def _verify_potential_gradient(pair: SpeciesPair, pf: PairField, pf_ref: PairField,
                               kind: str, n_points: int = 5, tol: float = 1e-6) -> None:
    """Spot-check that the potential's gradient matches the pointwise target.

    This is the operational meaning of the compatibility relation: without it
    the species-2 partial of the anchored path disagrees with the species-2
    conductivity ratio and the functional would be path dependent.
    """
    rng = np.random.default_rng(20130515)
    box = _field_box(pf, pf_ref)
    r1 = np.full(n_points, float(np.median(pf_ref.f1)))
    r2 = np.full(n_points, float(np.median(pf_ref.f2)))
    pot = _pair_potential(pair, r1, r2, kind)
    a1 = rng.uniform(box[0], box[1], n_points)
    a2 = rng.uniform(box[2], box[3], n_points)
    s1r = pair.sigma1(r1, r2)
    s2r = pair.sigma2(r1, r2)
    if kind == "quotient":
        target1 = np.log(pair.sigma1(a1, a2) / s1r)
        target2 = np.log(pair.sigma2(a1, a2) / s2r)
    else:
        target1 = pair.sigma1(a1, a2) - s1r
        target2 = pair.sigma2(a1, a2) - s2r
    d1 = 1e-5 * (1.0 + np.abs(a1))
    d2 = 1e-5 * (1.0 + np.abs(a2))
    g1 = (pot(a1 + d1, a2) - pot(a1 - d1, a2)) / (2.0 * d1)
    g2 = (pot(a1, a2 + d2) - pot(a1, a2 - d2)) / (2.0 * d2)
    mismatch = max(float(np.max(np.abs(g1 - target1))), float(np.max(np.abs(g2 - target2))))
    if mismatch > tol:
        raise IncompatiblePairError(
            f"potential gradient mismatch {mismatch:.3e} exceeds {tol:g}; "
            "the pair violates the compatibility relation")


def system_phi_entropy(pf: PairField, pf_ref: PairField, pair: SpeciesPair,
                       nu: np.ndarray, check: bool = True) -> float:
    """Quotient-form entropy of the pair (log generator, fixed by compatibility)."""
    if check:
        rep = check_compat_quotient(pair, _field_box(pf, pf_ref))
        if not rep.passed:
            raise IncompatiblePairError(
                f"log-compatibility mismatch {rep.max_mismatch:.3e}")
        _verify_potential_gradient(pair, pf, pf_ref, "quotient")
    pot = _pair_potential(pair, pf_ref.f1, pf_ref.f2, "quotient")
    return float(np.dot(pot(pf.f1, pf.f2), nu))


def system_psi_entropy(pf: PairField, pf_ref: PairField, pair: SpeciesPair,
                       nu: np.ndarray, check: bool = True) -> float:
    """Difference-form entropy of the pair (quadratic generator)."""
    if check:
        rep = check_compat_difference(pair, _field_box(pf, pf_ref))
        if not rep.passed:
            raise IncompatiblePairError(
                f"compatibility mismatch {rep.max_mismatch:.3e}")
        _verify_potential_gradient(pair, pf, pf_ref, "difference")
    pot = _pair_potential(pair, pf_ref.f1, pf_ref.f2, "difference")
    return float(np.dot(pot(pf.f1, pf.f2), nu))


def system_phi_entropy_alt_path(pf: PairField, pf_ref: PairField, pair: SpeciesPair,
                                nu: np.ndarray) -> float:
    """Same functional integrated along the swapped path (species 2 first).

    Agreement with ``system_phi_entropy`` is exactly path independence, which
    holds when the log-compatibility relation does.
    """
    ref1, ref2 = pf_ref.f1, pf_ref.f2
    s1_ref = pair.sigma1(ref1, ref2)
    s2_ref = pair.sigma2(ref1, ref2)
    leg2 = cell_integrals(ref2, pf.f2,
                          lambda s: np.log(pair.sigma2(pf.f1[:, None], s) / s2_ref[:, None]))
    leg1 = cell_integrals(ref1, pf.f1,
                          lambda s: np.log(pair.sigma1(s, ref2[:, None]) / s1_ref[:, None]))
    return float(np.dot(leg1 + leg2, nu))


@dataclass
class EinsteinReport:
    max_residual: float
    tol: float = COMPAT_TOL

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def einstein_check(pair: SpeciesPair, box: tuple[float, float, float, float],
                   n: int = 7) -> EinsteinReport:
    """Fluctuation-dissipation structure: Jacobian = conductivity x potential Hessian.

    The Hessian is assembled from the anchored-path potential, so the mixed
    entry comes from species 1 and the (2,2) entry from differentiating the
    species-2 leg; only compatible pairs make this coincide with the Jacobian.
    Identity diffusion on both species is assumed.
    """
    a1 = np.linspace(box[0], box[1], n)
    a2 = np.linspace(box[2], box[3], n)
    A, B = np.meshgrid(a1, a2, indexing="ij")
    A, B = A.ravel(), B.ravel()
    anchor = np.full_like(A, box[0])

    s1 = pair.sigma1(A, B)
    s2 = pair.sigma2(A, B)
    jac = np.array([[pair.partial(1, 1, A, B), pair.partial(2, 1, A, B)],
                    [pair.partial(1, 2, A, B), pair.partial(2, 2, A, B)]])

    h11 = pair.partial(1, 1, A, B) / s1
    h12 = pair.partial(2, 1, A, B) / s1  # equals h21 by symmetry of the potential

    def d2_log_sig1(s, b):
        return pair.partial(2, 1, s, b) / pair.sigma1(s, b)

    def h22_at(delta_scale):
        # Richardson-extrapolated s2-derivative of the species-2 gradient leg
        def grad2(b):
            inner = cell_integrals(anchor, A,
                                   lambda s: d2_log_sig1(s, b[:, None]))
            return inner + np.log(pair.sigma2(anchor, b))

        d = delta_scale * (1.0 + np.abs(B))
        c1 = (grad2(B + d) - grad2(B - d)) / (2.0 * d)
        c2 = (grad2(B + d / 2.0) - grad2(B - d / 2.0)) / d
        return (4.0 * c2 - c1) / 3.0

    h22 = h22_at(5e-3)
    hess = np.array([[h11, h12], [h12, h22]])
    cond = np.array([[s1, np.zeros_like(s1)], [np.zeros_like(s2), s2]])
    # residual D - S H per sample point
    sh = np.einsum("ikp,kjp->ijp", cond, hess)
    resid = np.max(np.abs(jac - sh))
    return EinsteinReport(float(resid))


class _CoupledImplicitStepper:
    """Newton for the stacked two-species implicit Euler step."""

    def __init__(self, gen1: DiscreteGenerator, gen2: DiscreteGenerator,
                 pair: SpeciesPair):
        if not np.array_equal(gen1.clamped, gen2.clamped):
            raise ValueError("species generators must clamp the same states")
        self.gen1, self.gen2, self.pair = gen1, gen2, pair
        self.free = gen1.free
        L1 = gen1.linear_operator()
        L2 = gen2.linear_operator()
        self.L1_ff = L1[np.ix_(self.free, self.free)].tocsr()
        self.L1_fc = L1[np.ix_(self.free, ~self.free)].tocsr()
        self.L2_ff = L2[np.ix_(self.free, self.free)].tocsr()
        self.L2_fc = L2[np.ix_(self.free, ~self.free)].tocsr()
        self.nf = int(self.free.sum())

    def step(self, f1, f2, dt, tol, max_iters):
        free = self.free
        pair = self.pair
        x1, x2 = f1[free].copy(), f2[free].copy()
        old1, old2 = f1[free], f2[free]
        c1, c2 = f1[~free], f2[~free]
        scale = 1.0 + max(float(np.max(np.abs(old1), initial=0.0)),
                          float(np.max(np.abs(old2), initial=0.0)))
        for it in range(max_iters + 1):
            full1, full2 = f1.copy(), f2.copy()
            full1[free], full2[free] = x1, x2
            u1 = pair.sigma1(full1, full2)
            u2 = pair.sigma2(full1, full2)
            r1 = x1 - dt * (self.L1_ff @ u1[free] + self.L1_fc @ u1[~free]) - old1
            r2 = x2 - dt * (self.L2_ff @ u2[free] + self.L2_fc @ u2[~free]) - old2
            resid = max(float(np.max(np.abs(r1), initial=0.0)),
                        float(np.max(np.abs(r2), initial=0.0)))
            if resid <= tol * scale:
                return full1, full2
            if it == max_iters:
                break
            p11 = pair.partial(1, 1, x1, x2) + 1e-12
            p21 = pair.partial(2, 1, x1, x2)
            p12 = pair.partial(1, 2, x1, x2)
            p22 = pair.partial(2, 2, x1, x2) + 1e-12
            I = sparse.eye(self.nf, format="csr")
            J = sparse.bmat([
                [I - dt * (self.L1_ff @ sparse.diags(p11)), -dt * (self.L1_ff @ sparse.diags(p21))],
                [-dt * (self.L2_ff @ sparse.diags(p12)), I - dt * (self.L2_ff @ sparse.diags(p22))],
            ], format="csc")
            delta = splu(J).solve(-np.concatenate([r1, r2]))
            x1 = np.maximum(x1 + delta[:self.nf], 0.0)
            x2 = np.maximum(x2 + delta[self.nf:], 0.0)
        raise EvolveError("coupled Newton did not converge")


def evolve_pair(gen1: DiscreteGenerator, gen2: DiscreteGenerator, pair: SpeciesPair,
                pf0: PairField, stepper, diagnostics: dict | None = None) -> TrajectoryLog:
    """Implicit Euler for the coupled system, logging pair diagnostics.

    ``diagnostics`` maps column names to callables (f1, f2) -> float.
    Snapshots store the stacked pair state.
    """
    if stepper.scheme != "implicit":
        raise ValueError("coupled evolution supports the implicit scheme only")
    f1 = pf0.f1.copy()
    f2 = pf0.f2.copy()
    diagnostics = diagnostics or {}
    inner = _CoupledImplicitStepper(gen1, gen2, pair)
    log = TrajectoryLog()
    log.meta["scheme"] = "implicit-pair"
    log.meta["dt"] = stepper.dt
    n_steps = int(round(stepper.t_end / stepper.dt))

    def log_state(t):
        vals = {name: fn(f1, f2) for name, fn in diagnostics.items()}
        log.record(t, vals, state=np.vstack([f1, f2]))

    log_state(0.0)
    for k in range(1, n_steps + 1):
        f1, f2 = inner.step(f1, f2, stepper.dt, stepper.newton_tol,
                            stepper.newton_max_iters)
        if k % stepper.snapshot_stride == 0 or k == n_steps:
            log_state(k * stepper.dt)
    return log
