"""Microscopic particle systems whose large-deviation costs the entropy
functionals generalize: zero range lattice gases (exact event-driven
simulation) and conservative Langevin chains."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ..core import Nonlinearity
from ..entropy import density_ld_rate, profile_ld_functional
from .gl import (
    GlModel,
    GlTrajectory,
    gl_conductivity,
    gl_fugacity,
    gl_mean_charge,
    gl_variance,
    simulate_gl,
    stationary_site_tilts,
)
from .zrp import (
    AttainabilityError,
    SimulationError,
    SiteMeasure,
    TwoSpeciesZrpModel,
    ZrpModel,
    ZrpTrajectory,
    replica_seeds,
    sample_product_measure,
    sample_two_species_measure,
    simulate_replicas,
    simulate_zrp,
    simulate_zrp_two_species,
    site_measure,
    zrp_conductivity,
    zrp_fugacity,
    zrp_mean_density,
)


def fugacity_from_density(model, density: float) -> float:
    """One-site parameter whose stationary law has the requested mean."""
    if isinstance(model, ZrpModel):
        return zrp_fugacity(model, density)
    if isinstance(model, GlModel):
        return gl_fugacity(model, density)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def conductivity(model, density: float) -> float:
    """Macroscopic transport coefficient at the given density.

    Equals the fugacity for both model families; the implementations verify
    the defining expectation identity before returning.
    """
    if isinstance(model, ZrpModel):
        return zrp_conductivity(model, density)
    if isinstance(model, GlModel):
        return gl_conductivity(model, density)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def conductivity_nonlinearity(model) -> Nonlinearity:
    """The model's density -> conductivity map packaged as a Nonlinearity.

    Evaluation solves the one-site problem per point, so this is meant for
    report-style checks, not inner loops.
    """

    def ev(s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s).ravel()
        out = np.array([fugacity_from_density(model, float(v)) for v in flat])
        return out.reshape(s.shape) if s.ndim else np.float64(out[0])

    def dv(s):
        s = np.asarray(s, dtype=float)
        d = 1e-6 * (1.0 + np.abs(s))
        lo = np.maximum(s - d, 0.0)
        return (ev(s + d) - ev(lo)) / (s + d - lo)

    def inv(z):
        z = np.asarray(z, dtype=float)
        flat = np.atleast_1d(z).ravel()
        if isinstance(model, ZrpModel):
            out = np.array([zrp_mean_density(model, float(v)) for v in flat])
        else:
            out = np.array([gl_mean_charge(model, float(v)) for v in flat])
        return out.reshape(z.shape) if z.ndim else np.float64(out[0])

    return Nonlinearity(ev, dv, inv, kind="conductivity")


def log_partition(model, fugacity: float) -> float:
    """log of the one-site normalization at the given fugacity/tilt."""
    if isinstance(model, ZrpModel):
        return site_measure(model, fugacity).log_partition
    raise TypeError("log_partition is defined for the lattice-gas model")


@dataclass
class LegendreReport:
    densities: np.ndarray
    legendre_values: np.ndarray
    quadrature_values: np.ndarray
    max_mismatch: float

    @property
    def passed(self) -> bool:
        return self.max_mismatch <= 1e-6


def legendre_check(model, f_ref: float, f_grid) -> LegendreReport:
    """Rate function two ways: tilted-partition Legendre transform versus the
    direct conductivity integral; the product structure makes them agree."""
    f_grid = np.asarray(f_grid, dtype=float)
    lam_ref = fugacity_from_density(model, f_ref)
    phi_ref = log_partition(model, lam_ref)

    def cumulant(gamma: float) -> float:
        return log_partition(model, np.exp(gamma) * lam_ref) - phi_ref

    def supremum(f: float) -> float:
        def obj(g: float) -> float:
            try:
                return g * f - cumulant(g)
            except AttainabilityError:
                return -np.inf  # tilt beyond the series radius

        # expand to the right until the concave objective turns down
        hi, step = 0.5, 0.25
        prev = obj(hi - step)
        cur = obj(hi)
        while np.isfinite(cur) and cur >= prev and hi < 40.0:
            hi += step
            prev, cur = cur, obj(hi)
        res = minimize_scalar(lambda g: -obj(g), method="bounded",
                              bounds=(-40.0, hi), options={"xatol": 1e-12})
        return -float(res.fun)

    nl = conductivity_nonlinearity(model)
    leg = np.empty(f_grid.size)
    quad = np.empty(f_grid.size)
    for i, f in enumerate(f_grid):
        leg[i] = supremum(float(f))
        quad[i] = density_ld_rate(float(f), float(f_ref), nl)
    mism = float(np.max(np.abs(leg - quad)))
    return LegendreReport(densities=f_grid, legendre_values=leg,
                          quadrature_values=quad, max_mismatch=mism)


def block_average(profile: np.ndarray, block: int) -> np.ndarray:
    """Non-overlapping block means; a trailing short block is averaged as is."""
    n = profile.shape[-1]
    edges = list(range(0, n, block))
    return np.stack([profile[..., a:min(a + block, n)].mean(axis=-1) for a in edges],
                    axis=-1)


def smoothed_density(traj: ZrpTrajectory, block: int | None = None) -> np.ndarray:
    """Block-averaged occupation snapshots, one row per observation time."""
    n = traj.snapshots.shape[1]
    if block is None:
        block = max(1, int(round(np.sqrt(n))))
    return block_average(traj.snapshots.astype(float), block)


@dataclass
class MonitorReport:
    times: np.ndarray
    mean_values: np.ndarray
    stderr_values: np.ndarray
    increases_outside_band: int
    slope: float
    slope_ci: tuple[float, float]

    @property
    def decreasing(self) -> bool:
        return self.increases_outside_band == 0

    @property
    def trendless(self) -> bool:
        return self.slope_ci[0] <= 0.0 <= self.slope_ci[1]


def lyapunov_monitor(trajectories: list, f_ref_profile: np.ndarray,
                     nl: Nonlinearity, block: int | None = None,
                     band_sigmas: float = 3.0,
                     functional: str = "rate") -> MonitorReport:
    """Evaluate a profile cost functional on smoothed replica snapshots.

    ``functional`` "rate" integrates the logarithmic per-point density cost
    (the lattice-gas form); "quadratic" integrates the conductivity
    difference (the Langevin-chain form).  Consecutive increments are
    compared against a noise band estimated from the replica spread; the
    report also carries a linear trend with its 95 percent confidence
    interval for stationarity checks.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least 2 replicas to estimate the noise band")
    if functional not in ("rate", "quadratic"):
        raise ValueError(f"unknown functional {functional!r}")
    times = trajectories[0].times
    if times.size < 5:
        raise ValueError("need at least 5 logged times")
    n = trajectories[0].snapshots.shape[1]
    if block is None:
        block = max(1, int(round(np.sqrt(n))))
    ref_blocks = block_average(np.asarray(f_ref_profile, dtype=float), block)
    weights = np.array([min(a + block, n) - a for a in range(0, n, block)], dtype=float) / n

    if functional == "rate":
        def cost_fn(fb, rb):
            return density_ld_rate(float(fb), float(rb), nl)
    else:
        def cost_fn(fb, rb):
            return profile_ld_functional(np.array([float(fb)]),
                                         np.array([float(rb)]), nl,
                                         np.ones(1))

    values = np.empty((len(trajectories), times.size))
    for r, traj in enumerate(trajectories):
        smooth = smoothed_density(traj, block)
        for k in range(times.size):
            cost = [cost_fn(fb, rb) for fb, rb in zip(smooth[k], ref_blocks)]
            values[r, k] = float(np.dot(cost, weights))

    mean = values.mean(axis=0)
    sem = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    diffs = np.diff(values, axis=1)
    band = band_sigmas * diffs.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    increases = int(np.sum(diffs.mean(axis=0) > band))

    slopes = np.array([np.polyfit(times, values[r], 1)[0]
                       for r in range(values.shape[0])])
    s_mean = float(slopes.mean())
    s_sem = float(slopes.std(ddof=1) / np.sqrt(slopes.size))
    ci = (s_mean - 1.96 * s_sem, s_mean + 1.96 * s_sem)
    return MonitorReport(times=times, mean_values=mean, stderr_values=sem,
                         increases_outside_band=increases, slope=s_mean,
                         slope_ci=ci)


def write_replica_csvs(directory, trajectories: list, aggregate_name: str = "aggregate.csv"):
    """Per-replica occupancy CSVs plus a mean/stderr aggregate per time."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for r, traj in enumerate(trajectories):
        path = os.path.join(directory, f"replica_{r:03d}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n = traj.snapshots.shape[1]
            writer.writerow(["t"] + [f"site_{i}" for i in range(n)])
            for k, t in enumerate(traj.times):
                writer.writerow([repr(float(t))] + [int(v) for v in traj.snapshots[k]])
        paths.append(path)
    stack = np.stack([t.snapshots.astype(float) for t in trajectories])
    mean = stack.mean(axis=0)
    sem = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    agg = os.path.join(directory, aggregate_name)
    with open(agg, "w", newline="") as fh:
        writer = csv.writer(fh)
        n = mean.shape[1]
        writer.writerow(["t"] + [f"mean_{i}" for i in range(n)] + [f"sem_{i}" for i in range(n)])
        for k, t in enumerate(trajectories[0].times):
            writer.writerow([repr(float(t))]
                            + [repr(float(v)) for v in mean[k]]
                            + [repr(float(v)) for v in sem[k]])
    paths.append(agg)
    return paths
