"""Finite-state scattering processes: kernels, classification, nonlinear flow.

A kernel is a nonnegative rate list on a finite state space together with
strictly positive reference weights.  The same generator machinery as the
grid discretization drives the dynamics, so the dissipation identities hold
at machine precision here.  Stationary measures of open or driven kernels
are generally not reversible; the classifier separates the two notions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Nonlinearity
from .evolve import TimeStepper, evolve
from .generator import DiscreteGenerator
from .stationary import solve_stationary
from .trajectory import TrajectoryLog

CLASSIFY_RTOL = 1e-12


@dataclass
class KernelSpec:
    """Rate triples (x, y, rate) with reference weights nu and optional clamps."""

    n_states: int
    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    nu: np.ndarray
    clamped: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.rates = np.asarray(self.rates, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.clamped is None:
            self.clamped = np.zeros(self.n_states, dtype=bool)
        else:
            self.clamped = np.asarray(self.clamped, dtype=bool)
        if np.any(self.rates < 0):
            raise ValueError("rates must be nonnegative")
        if np.any(self.nu <= 0):
            raise ValueError("reference weights must be strictly positive")

    def generator(self) -> DiscreteGenerator:
        keep = self.rates > 0
        return DiscreteGenerator(n_states=self.n_states, rows=self.rows[keep],
                                 cols=self.cols[keep], rates=self.rates[keep],
                                 nu=self.nu.copy(), clamped=self.clamped.copy())


def kernel_from_triples(triples, nu, clamped=None) -> KernelSpec:
    nu = np.asarray(nu, dtype=float)
    rows = np.array([t[0] for t in triples], dtype=np.int64)
    cols = np.array([t[1] for t in triples], dtype=np.int64)
    rates = np.array([t[2] for t in triples], dtype=float)
    return KernelSpec(n_states=nu.size, rows=rows, cols=cols, rates=rates,
                      nu=nu, clamped=clamped)


def load_kernel(rates_path, nu_path) -> KernelSpec:
    """Kernel from coordinate text triples plus a one-per-line weight list."""
    triples = []
    with open(rates_path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            r, c, v = line.split()
            triples.append((int(r), int(c), float(v)))
    weights = []
    with open(nu_path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                weights.append(float(line))
    return kernel_from_triples(triples, np.array(weights))


@dataclass
class Classification:
    stationary: bool
    reversible: bool
    stationarity_residual: float
    detailed_balance_residual: float


def classify(measure: np.ndarray, kernel: KernelSpec) -> Classification:
    """Stationarity and reversibility of a per-state measure for the kernel.

    Reversibility implies stationarity; driven kernels typically produce
    stationary measures that fail pairwise detailed balance.
    """
    gen = kernel.generator()
    m = np.asarray(measure, dtype=float)
    scale = float(np.max(gen.rates * np.max(m), initial=0.0))
    scale = max(scale, 1e-300)
    s_res = gen.stationarity_residual(m, free_only=False)
    r_res = gen.detailed_balance_residual(m)
    return Classification(stationary=s_res <= CLASSIFY_RTOL * scale,
                          reversible=r_res <= CLASSIFY_RTOL * scale,
                          stationarity_residual=s_res,
                          detailed_balance_residual=r_res)


def markov_stationary_state(kernel: KernelSpec, nl: Nonlinearity,
                            f_b: np.ndarray | None = None,
                            mass: float | None = None) -> np.ndarray:
    """Density profile whose transported measure is stationary for the kernel.

    Open kernels (clamped states) take boundary densities; closed kernels fix
    the total mass.  The equation is linear in sigma(f), so one sparse solve
    suffices for either case.
    """
    gen = kernel.generator()
    if gen.clamped.any():
        return solve_stationary(gen, nl, f_b=f_b).f_inf
    if mass is None:
        raise ValueError("closed kernel needs a mass target")
    return solve_stationary(gen, nl, mass=mass).f_inf


def evolve_markov(kernel: KernelSpec, nl: Nonlinearity, f0: np.ndarray,
                  stepper: TimeStepper, diagnostics: dict | None = None) -> TrajectoryLog:
    """Nonlinear scattering flow d(f nu)/dt = generator(sigma(f) nu)."""
    gen = kernel.generator()
    return evolve(gen, nl, np.asarray(f0, dtype=float), stepper, diagnostics)


def linear_boltzmann_kernel(velocities: np.ndarray, mode: str = "maxwellian",
                            temperature: float = 1.0, collision_width: float = 1.0,
                            restitution: float = 0.8, skew: float = 0.5,
                            strength: float = 1.0) -> KernelSpec:
    """Velocity-jump kernel for scattering against a fixed background gas.

    mode "maxwellian": elastic collisions against a Gaussian background at the
    given temperature; jump rates K(v, v') = c(v, v') M(v') with a symmetric
    collision factor, so the background law is reversible and stationary.

    mode "inelastic": each collision contracts the velocity by the
    restitution factor and adds a kick drawn from a skewed non-Gaussian law;
    the resulting stationary measure exists but fails detailed balance.

    mode "zero": no collisions at all (identity dynamics).
    """
    v = np.asarray(velocities, dtype=float)
    n = v.size
    dv = float(np.mean(np.diff(np.sort(v)))) if n > 1 else 1.0
    nu = np.full(n, dv)
    if mode == "zero":
        return KernelSpec(n_states=n, rows=np.empty(0, dtype=np.int64),
                          cols=np.empty(0, dtype=np.int64), rates=np.empty(0),
                          nu=nu)
    V, W = np.meshgrid(v, v, indexing="ij")
    if mode == "maxwellian":
        background = np.exp(-W ** 2 / (2.0 * temperature))
        factor = np.exp(-((V - W) ** 2) / (2.0 * collision_width ** 2))
        K = strength * factor * background
    elif mode == "inelastic":
        kick = W - restitution * V
        K = strength * np.exp(-kick ** 4 + skew * kick ** 3 - 0.25 * kick ** 2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    np.fill_diagonal(K, 0.0)
    rows, cols = np.nonzero(K > 0)
    return KernelSpec(n_states=n, rows=rows, cols=cols, rates=K[rows, cols], nu=nu)
