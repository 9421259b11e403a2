"""Time integration of the nonlinear dynamics d(f nu)/dt = generator(sigma(f) nu).

Implicit Euler with Newton is the default: the step map inherits the
monotonicity of the continuous flow, so entropy functionals decrease step by
step and long decay horizons are affordable.  Explicit Euler is kept for
oracle tests and is guarded by the parabolic stability bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .core import Nonlinearity
from .generator import DiscreteGenerator
from .trajectory import TrajectoryLog

CFL_SAFETY = 0.9


class EvolveError(RuntimeError):
    def __init__(self, message: str, log: TrajectoryLog | None = None,
                 last_state: np.ndarray | None = None):
        super().__init__(message)
        self.log = log
        self.last_state = last_state


@dataclass
class TimeStepper:
    scheme: str = "implicit"       # "implicit" or "explicit"
    dt: float = 1e-3
    t_end: float = 1.0
    snapshot_stride: int = 1
    newton_tol: float = 1e-12
    newton_max_iters: int = 30

    def __post_init__(self):
        if self.scheme not in ("implicit", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


class _ImplicitStepper:
    """Newton solver for f - dt * rate(f) = f_old on the free states.

    The system is linear in u = sigma(f); the Jacobian is I - dt L diag(sigma')
    restricted to free states.  Tridiagonal chains take a banded fast path.
    """

    JACOBIAN_EPS = 1e-12  # diagonal regularization where sigma'(f) degenerates

    def __init__(self, gen: DiscreteGenerator, nl: Nonlinearity):
        self.gen = gen
        self.nl = nl
        self.free = gen.free
        self.free_idx = np.flatnonzero(self.free)
        L = gen.linear_operator()
        self.L_ff = L[np.ix_(self.free, self.free)].tocsr()
        self.L_fc = L[np.ix_(self.free, ~self.free)].tocsr()
        self.n_free = self.free_idx.size
        self._banded = self._chain_bands()

    def _chain_bands(self):
        """Return (sub, diag, super) arrays of L_ff when it is tridiagonal."""
        A = self.L_ff.tocoo()
        if np.any(np.abs(A.row - A.col) > 1):
            return None
        n = self.n_free
        sub = np.zeros(n)
        dia = np.zeros(n)
        sup = np.zeros(n)
        for r, c, v in zip(A.row, A.col, A.data):
            if r == c:
                dia[r] = v
            elif c == r + 1:
                sup[c] = v
            else:
                sub[c] = v
        return sub, dia, sup

    def rate_free(self, u: np.ndarray, u_clamped: np.ndarray) -> np.ndarray:
        return self.L_ff @ u + (self.L_fc @ u_clamped if u_clamped.size else 0.0)

    def step(self, f: np.ndarray, dt: float, tol: float, max_iters: int) -> tuple[np.ndarray, int]:
        gen, nl = self.gen, self.nl
        free = self.free
        f_old = f[free]
        u_clamped = np.asarray(nl.eval(f[~free]), dtype=float) if (~free).any() else np.empty(0)
        x = f_old.copy()
        scale = 1.0 + float(np.max(np.abs(f_old), initial=0.0))
        for it in range(max_iters + 1):
            u = np.asarray(nl.eval(x), dtype=float)
            resid = x - dt * self.rate_free(u, u_clamped) - f_old
            if float(np.max(np.abs(resid), initial=0.0)) <= tol * scale:
                out = f.copy()
                out[free] = x
                return out, it
            if it == max_iters:
                break
            sp = np.asarray(nl.deriv(x), dtype=float) + self.JACOBIAN_EPS
            if self._banded is not None:
                sub, dia, sup = self._banded
                ab = np.zeros((3, self.n_free))
                ab[0, 1:] = -dt * (sup[1:] * sp[1:])
                ab[1, :] = 1.0 - dt * dia * sp
                ab[2, :-1] = -dt * (sub[:-1] * sp[:-1])
                delta = solve_banded((1, 1), ab, -resid)
            else:
                J = sparse.eye(self.n_free, format="csr") - dt * (self.L_ff @ sparse.diags(sp))
                delta = splu(J.tocsc()).solve(-resid)
            x = x + delta
            if np.any(x < 0):
                # monotone problems stay positive; pull roundoff undershoots back
                if np.min(x) < -1e-10 * scale:
                    raise EvolveError("Newton iterate left the positive cone")
                x = np.maximum(x, 0.0)
        raise EvolveError("Newton did not converge within the iteration budget")


def stability_bound(gen: DiscreteGenerator, nl: Nonlinearity, f: np.ndarray) -> float:
    """Largest stable explicit step: safety / max over free states of out_rate * sigma'."""
    sp = np.asarray(nl.deriv(f), dtype=float)
    rate = gen.out_rate * sp
    m = float(np.max(rate[gen.free], initial=0.0))
    return np.inf if m == 0.0 else CFL_SAFETY / m


def evolve(gen: DiscreteGenerator, nl: Nonlinearity, f0: np.ndarray,
           stepper: TimeStepper, diagnostics: dict | None = None,
           keep_snapshots: bool = True) -> TrajectoryLog:
    """Advance f from f0 to t_end, logging diagnostics every snapshot_stride steps.

    ``diagnostics`` maps column names to callables f -> float.  Clamped states
    never move; the returned log ends with the final state snapshot.
    """
    f = np.asarray(f0, dtype=float).copy()
    if f.shape != (gen.n_states,):
        raise ValueError("f0 must have one value per state")
    if np.any(f < 0):
        raise ValueError("initial density must be nonnegative")
    diagnostics = diagnostics or {}
    log = TrajectoryLog()
    log.meta["scheme"] = stepper.scheme
    log.meta["dt"] = stepper.dt
    n_steps = int(round(stepper.t_end / stepper.dt))
    if abs(n_steps * stepper.dt - stepper.t_end) > 1e-9 * stepper.t_end:
        n_steps = int(np.ceil(stepper.t_end / stepper.dt))

    implicit = _ImplicitStepper(gen, nl) if stepper.scheme == "implicit" else None

    def log_state(t):
        vals = {name: fn(f) for name, fn in diagnostics.items()}
        log.record(t, vals, state=f if keep_snapshots else None)

    log_state(0.0)
    t = 0.0
    try:
        for k in range(1, n_steps + 1):
            if stepper.scheme == "explicit":
                bound = stability_bound(gen, nl, f)
                if stepper.dt > bound:
                    raise EvolveError(
                        f"explicit step {stepper.dt:g} violates stability bound {bound:g}")
                rate = gen.apply(np.asarray(nl.eval(f), dtype=float))
                f_new = f.copy()
                f_new[gen.free] += stepper.dt * rate[gen.free]
            else:
                f_new, _ = implicit.step(f, stepper.dt, stepper.newton_tol,
                                         stepper.newton_max_iters)
            if np.any(f_new < 0):
                raise EvolveError("negative density produced (scheme failure)")
            f = f_new
            t = k * stepper.dt
            if k % stepper.snapshot_stride == 0 or k == n_steps:
                log_state(t)
    except EvolveError as err:
        err.log = log
        err.last_state = f
        raise
    return log
