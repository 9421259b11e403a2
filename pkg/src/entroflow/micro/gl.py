"""Conservative Langevin chain with convex on-site potential.

Neighboring sites exchange according to the gradient of V', and every edge
carries a single Brownian increment entering its two endpoints with opposite
signs; in the periodic chain the total charge is conserved by construction
(up to floating-point rounding of the scatter adds).  Reservoir mode replaces
the wrap-around edge by independent site noises pinning chemical potentials
at the two ends, whose invariant law is a product with a linearly
interpolated potential tilt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .._quadtools import gauss_panel_nodes


@dataclass
class GlModel:
    """Chain of continuous charges with strictly convex potential V."""

    n_sites: int
    V: Callable = lambda x: 0.5 * x * x
    dV: Callable = lambda x: x
    boundary: str = "periodic"       # "periodic" or "reservoirs"
    chem_left: float = 0.0           # imposed potential tilt at site 1
    chem_right: float = 0.0
    dt_em: float = 0.01

    def __post_init__(self):
        if self.boundary not in ("periodic", "reservoirs"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.n_sites < 3:
            raise ValueError("need at least 3 sites")

    def check_step(self, xi: np.ndarray) -> None:
        """Stability guard: dt below a tenth of the stiffest local curvature."""
        span = np.linspace(float(np.min(xi)) - 1.0, float(np.max(xi)) + 1.0, 257)
        d = 1e-5 * (1.0 + np.abs(span))
        curv = (self.dV(span + d) - self.dV(span - d)) / (2.0 * d)
        cap = 0.1 / max(float(np.max(curv)), 1e-12)
        if self.dt_em > cap:
            raise ValueError(f"dt_em {self.dt_em:g} exceeds stability cap {cap:g}")


def _tilted_moments(model: GlModel, lam: float) -> tuple[float, float, float]:
    """Mean, variance, and E[V'] under exp(-V + lam x) dx by quadrature."""
    # locate the mode: V'(x*) = lam, then integrate over an adaptive window
    lo, hi = -1.0, 1.0
    while model.dV(np.float64(lo)) > lam:
        lo *= 2.0
        if lo < -1e12:
            raise ValueError("potential tilt has no finite mode")
    while model.dV(np.float64(hi)) < lam:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("potential tilt has no finite mode")
    mode = brentq(lambda x: model.dV(np.float64(x)) - lam, lo, hi, xtol=1e-13)

    def log_density(x):
        return -model.V(x) + lam * x

    peak = log_density(np.float64(mode))
    width = 1.0
    while log_density(np.float64(mode - width)) > peak - 60.0 or \
            log_density(np.float64(mode + width)) > peak - 60.0:
        width *= 2.0
        if width > 1e9:
            raise ValueError("density window did not close")
    a, b = mode - width, mode + width
    prev = None
    panels = 8
    for _ in range(12):
        x, w = gauss_panel_nodes(a, b, panels)
        dens = np.exp(log_density(x) - peak)
        Z = float(np.dot(w, dens))
        m1 = float(np.dot(w, x * dens)) / Z
        m2 = float(np.dot(w, (x - m1) ** 2 * dens)) / Z
        mr = float(np.dot(w, model.dV(x) * dens)) / Z
        cur = (m1, m2, mr)
        if prev is not None and max(abs(cur[i] - prev[i]) for i in range(3)) < 1e-12:
            return cur
        prev = cur
        panels *= 2
    return prev


def gl_mean_charge(model: GlModel, lam: float) -> float:
    return _tilted_moments(model, lam)[0]


def gl_variance(model: GlModel, lam: float) -> float:
    return _tilted_moments(model, lam)[1]


def gl_fugacity(model: GlModel, density: float) -> float:
    """Tilt lambda with mean charge equal to ``density`` (strictly increasing)."""
    lo, hi = -1.0, 1.0
    while gl_mean_charge(model, lo) > density:
        lo *= 2.0
    while gl_mean_charge(model, hi) < density:
        hi *= 2.0
    root = brentq(lambda lam: gl_mean_charge(model, lam) - density, lo, hi,
                  xtol=1e-13, rtol=8.9e-16)
    if abs(gl_mean_charge(model, root) - density) > 1e-10 * (1.0 + abs(density)):
        raise RuntimeError("tilt solve residual too large")
    return float(root)


def gl_conductivity(model: GlModel, density: float) -> float:
    """E[V'] at the matching tilt; equals the tilt itself by integration by parts."""
    lam = gl_fugacity(model, density)
    mr = _tilted_moments(model, lam)[2]
    if abs(mr - lam) > 1e-9 * (1.0 + abs(lam)):
        raise RuntimeError(f"conductivity identity violated: E[V'] = {mr!r} vs {lam!r}")
    return lam


@dataclass
class GlTrajectory:
    model: GlModel
    times: np.ndarray
    snapshots: np.ndarray        # (n_obs, n_replicas, n_sites)
    charge_drift: float          # max over steps of |sum xi - sum xi0| (periodic)
    seed: int


def simulate_gl(model: GlModel, xi0: np.ndarray, t_end: float,
                rng_seed: int = 0, obs_times=None, n_replicas: int = 1,
                blowup_cap: float = 1e6) -> GlTrajectory:
    """Euler-Maruyama with shared edge noises, vectorized over replicas.

    Periodic mode uses pure edge exchanges so the total charge is conserved
    to rounding at every step; the realized worst-case drift is reported.
    Reservoir mode adds the two independent boundary noises and the
    (chem - V') pinning drifts.
    """
    model.check_step(np.asarray(xi0, dtype=float))
    n = model.n_sites
    xi0 = np.asarray(xi0, dtype=float)
    if xi0.shape != (n,):
        raise ValueError("xi0 must have one charge per site")
    xi = np.tile(xi0, (n_replicas, 1))
    dt = model.dt_em
    n_steps = int(round(t_end / dt))
    if obs_times is None:
        obs_times = [t_end]
    obs_steps = sorted(set(min(n_steps, max(1, int(round(t / dt)))) for t in obs_times))
    rng = np.random.default_rng(rng_seed)
    periodic = model.boundary == "periodic"
    sq2dt = np.sqrt(2.0 * dt)
    sqdt = np.sqrt(dt)
    total0 = xi.sum(axis=1).copy()
    worst_drift = 0.0

    snaps = np.zeros((len(obs_steps), n_replicas, n))
    times = np.zeros(len(obs_steps))
    ptr = 0
    for k in range(1, n_steps + 1):
        vp = model.dV(xi)
        if periodic:
            # edge e joins site e and site e+1 (mod n); flow enters site e with +
            flux = (np.roll(vp, -1, axis=1) - vp) * dt \
                + sq2dt * rng.standard_normal(xi.shape)
            xi += flux
            xi -= np.roll(flux, 1, axis=1)
            worst_drift = max(worst_drift,
                              float(np.max(np.abs(xi.sum(axis=1) - total0))))
        else:
            flux = (vp[:, 1:] - vp[:, :-1]) * dt \
                + sq2dt * rng.standard_normal((n_replicas, n - 1))
            xi[:, :-1] += flux
            xi[:, 1:] -= flux
            xi[:, 0] += (model.chem_left - vp[:, 0]) * dt \
                + sqdt * rng.standard_normal(n_replicas)
            xi[:, -1] += (model.chem_right - vp[:, -1]) * dt \
                + sqdt * rng.standard_normal(n_replicas)
        if np.max(np.abs(xi)) > blowup_cap:
            raise RuntimeError(f"charge blow-up detected at step {k}")
        if ptr < len(obs_steps) and k == obs_steps[ptr]:
            snaps[ptr] = xi
            times[ptr] = k * dt
            ptr += 1
    return GlTrajectory(model=model, times=times, snapshots=snaps,
                        charge_drift=worst_drift, seed=int(rng_seed))


def stationary_site_tilts(model: GlModel) -> np.ndarray:
    """Linearly interpolated chemical potentials of the reservoir chain."""
    n = model.n_sites
    i = np.arange(1, n + 1)
    return model.chem_left + (model.chem_right - model.chem_left) * i / (n + 1.0)
