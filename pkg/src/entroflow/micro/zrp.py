"""Zero range process: site measures, fugacity inversion, exact simulation.

A site with k particles fires each of its 2*dim directions at rate
N^2 g(k) (optionally tilted by a weak field); reservoirs act as ghost sites
held at the fugacity matching the requested wall density, injecting at the
ghost's equilibrium firing rate and absorbing particles that hop out.  With
this clock the empirical density follows d f/dt = lap sigma(f) (plus the
drift divergence under a weak field) as the lattice refines.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kmc

HARD_TRUNCATION_CAP = 1_000_000


class AttainabilityError(ValueError):
    """Requested density lies outside what the rate function can carry."""


class SimulationError(RuntimeError):
    pass


@dataclass
class ZrpModel:
    """Single-species zero range model on {1..N}^dim.

    ``g`` is the rate function on occupation numbers, vectorized over integer
    arrays, with g(0) = 0 and nondecreasing.  Boundary modes: "periodic"
    (torus), "closed" (reflecting walls), "reservoirs" (ghost walls at the
    densities given by ``f_boundary``).  ``f_boundary`` maps a boundary point
    to a density; for 1D a (left, right) tuple also works.  ``outfield``
    applies the weak per-jump tilt exp(+-E/(2N)) along each axis.
    """

    n_sites: int
    dim: int = 1
    g: Callable = lambda k: np.asarray(k, dtype=float)
    boundary: str = "closed"
    f_boundary: object = None
    outfield: object = None
    k_cap: int = 256

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.boundary not in ("periodic", "closed", "reservoirs"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.boundary == "reservoirs" and self.f_boundary is None:
            raise ValueError("reservoir mode needs f_boundary")
        table = self.g_table(min(self.k_cap, 64))
        if table[0] != 0.0:
            raise ValueError("rate function must vanish at zero occupation")
        if np.any(np.diff(table) < 0):
            raise ValueError("rate function must be nondecreasing")
        self._fugacity_cache: dict = {}
        self._measure_cache: dict = {}

    def g_table(self, k_max: int) -> np.ndarray:
        return np.asarray(self.g(np.arange(k_max + 1)), dtype=float)

    def site_positions(self) -> np.ndarray:
        """Macroscopic coordinates of the lattice sites, mode-dependent."""
        n = self.n_sites
        if self.boundary == "periodic":
            axis = np.arange(n) / n
        elif self.boundary == "closed":
            axis = (np.arange(n) + 0.5) / n
        else:
            axis = (np.arange(n) + 1.0) / (n + 1)
        if self.dim == 1:
            return axis[:, None]
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def boundary_density(self, point: np.ndarray) -> float:
        fb = self.f_boundary
        if callable(fb):
            return float(fb(point))
        left, right = fb
        return float(left) if point[0] < 0.5 else float(right)

    def field_at(self, point: np.ndarray) -> np.ndarray:
        if self.outfield is None:
            return np.zeros(self.dim)
        if callable(self.outfield):
            return np.atleast_1d(np.asarray(self.outfield(point), dtype=float))
        return np.full(self.dim, float(self.outfield)) if np.ndim(self.outfield) == 0 \
            else np.asarray(self.outfield, dtype=float)


@dataclass
class SiteMeasure:
    """Truncated one-site stationary law at a given fugacity."""

    fugacity: float
    weights: np.ndarray          # unnormalized lambda^k / (g(1)...g(k))
    partition: float             # normalization Z
    log_partition: float

    @property
    def k_max(self) -> int:
        return self.weights.size - 1

    def probabilities(self) -> np.ndarray:
        return self.weights / self.partition

    def mean(self) -> float:
        k = np.arange(self.weights.size)
        return float(np.dot(k, self.weights) / self.partition)

    def mean_rate(self, g_table: np.ndarray) -> float:
        return float(np.dot(g_table[: self.weights.size], self.weights) / self.partition)


def site_measure(model: ZrpModel, fugacity: float, tail_tol: float = 1e-13,
                 soft_cap: int = 200_000) -> SiteMeasure:
    """Build the geometric-like one-site law, extending the cutoff until the
    remaining tail is negligible; diverging series raise AttainabilityError."""
    if fugacity < 0:
        raise ValueError("fugacity must be nonnegative")
    if fugacity == 0.0:
        return SiteMeasure(0.0, np.array([1.0]), 1.0, 0.0)
    cached = model._measure_cache.get(fugacity)
    if cached is not None:
        return cached
    weights = [1.0]
    w = 1.0
    k = 0
    cap = min(soft_cap, HARD_TRUNCATION_CAP)
    while True:
        k += 1
        if k > cap:
            raise AttainabilityError(
                f"one-site series did not settle below the cutoff cap {cap} "
                f"at fugacity {fugacity:g}")
        gk = float(model.g(np.asarray([k]))[0])
        if gk <= 0.0:
            raise ValueError("rate function must be positive at positive occupation")
        w *= fugacity / gk
        if w > 1e250:
            raise AttainabilityError(
                f"one-site series diverges at fugacity {fugacity:g}")
        weights.append(w)
        ratio = fugacity / gk
        if ratio < 1.0:
            # geometric tail bound from the current ratio
            tail = w * ratio / (1.0 - ratio)
            if tail <= tail_tol * sum(weights):
                break
    arr = np.array(weights)
    Z = float(arr.sum())
    out = SiteMeasure(fugacity, arr, Z, float(np.log(Z)))
    if len(model._measure_cache) < 100_000:
        model._measure_cache[fugacity] = out
    return out


def zrp_mean_density(model: ZrpModel, fugacity: float) -> float:
    return site_measure(model, fugacity).mean()


def zrp_fugacity(model: ZrpModel, density: float, tol: float = 1e-12) -> float:
    """Invert the mean-density relation by bracketing and brentq."""
    if density < 0:
        raise ValueError("density must be nonnegative")
    if density == 0.0:
        return 0.0
    cached = model._fugacity_cache.get(density)
    if cached is not None:
        return cached
    lo, hi = 0.0, 1.0
    lo_ok = 0.0
    for _ in range(200):
        try:
            val = zrp_mean_density(model, hi)
        except AttainabilityError:
            hi = 0.5 * (lo_ok + hi) if lo_ok else hi / 2.0
            continue
        if val >= density:
            break
        lo_ok = hi
        lo = hi
        hi *= 2.0
    else:
        raise AttainabilityError(
            f"density {density:g} not attainable; largest sampled mean {val:g}")
    root = brentq(lambda lam: zrp_mean_density(model, lam) - density, lo, hi,
                  xtol=1e-300, rtol=8.9e-16)
    resid = abs(zrp_mean_density(model, root) - density)
    if resid > 1e-10 * max(1.0, density):
        raise RuntimeError(f"fugacity solve residual {resid:.3e} too large")
    if len(model._fugacity_cache) < 100_000:
        model._fugacity_cache[density] = float(root)
    return float(root)


def zrp_conductivity(model: ZrpModel, density: float) -> float:
    """Macroscopic conductivity at the given density: the fugacity itself.

    Cross-checked against the direct expectation of the rate function under
    the one-site law.
    """
    lam = zrp_fugacity(model, density)
    meas = site_measure(model, lam)
    table = model.g_table(meas.k_max)
    direct = meas.mean_rate(table)
    if abs(direct - lam) > 1e-10 * max(1.0, lam):
        raise RuntimeError(
            f"conductivity identity violated: E[g] = {direct!r} vs fugacity {lam!r}")
    return lam


def sample_product_measure(model: ZrpModel, profile, rng_seed: int) -> np.ndarray:
    """Independent per-site draws from the one-site law at the local density.

    ``profile`` is a scalar density or an array over sites; sampling inverts
    the truncated CDF, so identical seeds give identical configurations.
    """
    pos = model.site_positions()
    n = pos.shape[0]
    prof = np.asarray(profile, dtype=float)
    if prof.ndim == 0:
        prof = np.full(n, float(prof))
    if prof.shape != (n,):
        raise ValueError("profile must be scalar or one value per site")
    rng = np.random.default_rng(rng_seed)
    eta = np.zeros(n, dtype=np.int64)
    # group sites sharing a density so the CDF is built once per unique value
    uniq, inverse = np.unique(prof, return_inverse=True)
    for j, f_val in enumerate(uniq):
        sel = inverse == j
        if f_val == 0.0:
            continue
        lam = zrp_fugacity(model, float(f_val))
        meas = site_measure(model, lam)
        cdf = np.cumsum(meas.probabilities())
        cdf[-1] = 1.0
        draws = rng.random(int(sel.sum()))
        eta[sel] = np.searchsorted(cdf, draws, side="right")
    return eta


@dataclass
class ZrpTrajectory:
    """Observation-time snapshots and occupancy time-integrals of one replica."""

    model: ZrpModel
    times: np.ndarray
    snapshots: np.ndarray        # (n_obs, n_sites) occupations
    occupancy_integral: np.ndarray  # (n_obs, n_sites) of integral eta dt
    n_events: int
    seed: int

    def total_density(self) -> np.ndarray:
        """Lattice-averaged occupation at each observation time."""
        return self.snapshots.mean(axis=1)

    def density_profile(self, t_from: float, t_to: float) -> np.ndarray:
        """Time-averaged occupation over [t_from, t_to].

        Endpoints snap to the nearest observation times; t_from = 0 uses the
        start of the run (occupancy integrals accumulate from zero).
        """
        j = int(np.argmin(np.abs(self.times - t_to)))
        if t_from == 0.0:
            base = np.zeros_like(self.occupancy_integral[0])
            t_lo = 0.0
        else:
            i = int(np.argmin(np.abs(self.times - t_from)))
            base = self.occupancy_integral[i]
            t_lo = self.times[i]
        span = self.times[j] - t_lo
        if span <= 0.0:
            raise ValueError("empty averaging window")
        return (self.occupancy_integral[j] - base) / span


def _build_lattice(model: ZrpModel):
    """Neighbor table, direction weights, and reservoir injections."""
    n = model.n_sites
    dim = model.dim
    n_sites = n ** dim
    n_dirs = 2 * dim
    pos = model.site_positions()
    neighbor = np.full((n_sites, n_dirs), -2, dtype=np.int64)
    weight = np.zeros((n_sites, n_dirs))
    inject = np.zeros(n_sites)
    clock = float(n * n)  # squared-lattice time scale (per direction)
    shape = (n,) * dim
    idx = np.arange(n_sites).reshape(shape)

    for site in range(n_sites):
        coords = np.unravel_index(site, shape)
        E = model.field_at(pos[site])
        d = 0
        for ax in range(dim):
            for sgn in (+1, -1):
                tilt = np.exp(sgn * E[ax] / (2.0 * n)) if model.outfield is not None else 1.0
                c = coords[ax] + sgn
                if 0 <= c < n:
                    tgt = list(coords)
                    tgt[ax] = c
                    neighbor[site, d] = idx[tuple(tgt)]
                    weight[site, d] = tilt
                elif model.boundary == "periodic":
                    tgt = list(coords)
                    tgt[ax] = c % n
                    neighbor[site, d] = idx[tuple(tgt)]
                    weight[site, d] = tilt
                elif model.boundary == "reservoirs":
                    neighbor[site, d] = -1  # particle leaves into the ghost wall
                    weight[site, d] = tilt
                    ghost = pos[site].copy()
                    ghost[ax] = 0.0 if sgn < 0 else 1.0
                    lam_b = zrp_fugacity(model, model.boundary_density(ghost))
                    back_tilt = np.exp(-sgn * E[ax] / (2.0 * n)) if model.outfield is not None else 1.0
                    inject[site] += clock * lam_b * back_tilt
                # "closed": blocked direction, weight stays 0
                d += 1

    site_base = clock * weight.sum(axis=1)
    dir_cum = np.cumsum(weight, axis=1)
    dir_total = dir_cum[:, -1].copy()
    return neighbor, weight, dir_cum, dir_total, site_base, inject


def simulate_zrp(model: ZrpModel, eta0: np.ndarray, t_end: float,
                 obs_times: Sequence[float] | None = None,
                 rng_seed: int = 0, max_events: int = 500_000_000) -> ZrpTrajectory:
    """Exact continuous-time simulation with next-event selection.

    Observations (snapshots plus occupancy integrals) are recorded at the
    requested times; the final time is always observed.
    """
    eta0 = np.asarray(eta0, dtype=np.int64)
    n_sites = model.n_sites ** model.dim
    if eta0.shape != (n_sites,):
        raise ValueError("eta0 must have one occupation per site")
    if np.any(eta0 < 0):
        raise ValueError("occupations must be nonnegative")
    if obs_times is None:
        obs_times = [t_end]
    obs = np.asarray(sorted(set(float(t) for t in obs_times) | {float(t_end)}))
    if np.any(obs < 0) or obs[-1] > t_end:
        raise ValueError("observation times must lie in [0, t_end]")

    k_cap = max(model.k_cap, int(4 * eta0.max(initial=1)), 64)
    if k_cap > HARD_TRUNCATION_CAP:
        raise SimulationError("occupation table exceeds the hard cap")
    g_table = model.g_table(k_cap)
    neighbor, _, dir_cum, dir_total, site_base, inject = _build_lattice(model)

    eta = eta0.copy()
    snap = np.zeros((obs.size, n_sites), dtype=np.int64)
    integ = np.zeros((obs.size, n_sites))
    acc = np.zeros(n_sites)
    last_t = np.zeros(n_sites)
    rng_state = _kmc.seed_rng(np.uint64(rng_seed))
    status, n_events, _ = _kmc.run_zrp(
        eta, g_table, site_base, inject, neighbor, dir_cum, dir_total,
        float(t_end), obs, int(max_events), rng_state, snap, integ, acc, last_t)
    if status == _kmc.ERR_TABLE_CAP:
        raise SimulationError("site occupation exceeded the rate-table cap")
    if status == _kmc.ERR_EVENT_CAP:
        raise SimulationError(f"event budget {max_events} exhausted before t_end")
    return ZrpTrajectory(model=model, times=obs, snapshots=snap,
                         occupancy_integral=integ, n_events=int(n_events),
                         seed=int(rng_seed))


def replica_seeds(master_seed: int, n_replicas: int) -> list[int]:
    return [int(np.uint64(master_seed) ^ np.uint64(r)) for r in range(n_replicas)]


def simulate_replicas(model: ZrpModel, eta0_factory, t_end: float,
                      obs_times, master_seed: int, n_replicas: int,
                      max_events: int = 500_000_000,
                      max_workers: int | None = None) -> list[ZrpTrajectory]:
    """Independent replicas; each owns its RNG stream (master xor index).

    ``eta0_factory(seed)`` builds the initial configuration for one replica.
    Replicas run on a thread pool (the event loop releases the GIL) and are
    returned in replica order regardless of scheduling.
    """
    seeds = replica_seeds(master_seed, n_replicas)

    def one(seed):
        return simulate_zrp(model, eta0_factory(seed), t_end,
                            obs_times=obs_times, rng_seed=seed,
                            max_events=max_events)

    if max_workers is None:
        import os
        max_workers = min(n_replicas, os.cpu_count() or 1)
    if max_workers <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, seeds))


@dataclass
class TwoSpeciesZrpModel:
    """Two coupled occupation variables with per-site rates u(n,m), v(n,m).

    The factorization condition u(n,m)/u(n,m-1) = v(n,m)/v(n-1,m) is verified
    on the sampled occupancy range before any simulation.
    """

    n_sites: int
    u: Callable                  # (n, m) -> rate for the first species
    v: Callable
    dim: int = 1
    boundary: str = "periodic"
    k_cap: int = 128

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.arange(self.k_cap + 1)
        A, B = np.meshgrid(n, n, indexing="ij")
        ut = np.asarray(self.u(A, B), dtype=float)
        vt = np.asarray(self.v(A, B), dtype=float)
        if np.any(ut[0, :] != 0.0) or np.any(vt[:, 0] != 0.0):
            raise ValueError("rates must vanish when the jumping species is absent")
        if np.any(ut < 0) or np.any(vt < 0):
            raise ValueError("rates must be nonnegative")
        return ut, vt

    def factorization_residual(self, k_range: int = 24) -> float:
        ut, vt = self.tables()
        n = min(k_range, self.k_cap)
        res = 0.0
        for a in range(1, n):
            for b in range(1, n):
                if ut[a, b - 1] == 0.0 or vt[a - 1, b] == 0.0:
                    continue
                res = max(res, abs(ut[a, b] / ut[a, b - 1] - vt[a, b] / vt[a - 1, b]))
        return res

    def site_law(self, lam: float, gam: float) -> np.ndarray:
        """Unnormalized two-species one-site weights on the truncated square."""
        ut, vt = self.tables()
        k = self.k_cap
        w = np.zeros((k + 1, k + 1))
        for ell in range(k + 1):
            if ell == 0:
                w[0, 0] = 1.0
            else:
                if vt[0, ell] == 0.0:
                    break
                w[0, ell] = w[0, ell - 1] * gam / vt[0, ell]
            for a in range(1, k + 1):
                if ut[a, ell] == 0.0:
                    break
                w[a, ell] = w[a - 1, ell] * lam / ut[a, ell]
        return w


def sample_two_species_measure(model: TwoSpeciesZrpModel, lam: float, gam: float,
                               n_sites: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent per-site draws from the factorized two-species law."""
    w = model.site_law(lam, gam)
    flat = (w / w.sum()).ravel()
    cdf = np.cumsum(flat)
    cdf[-1] = 1.0
    rng = np.random.default_rng(rng_seed)
    draws = np.searchsorted(cdf, rng.random(n_sites), side="right")
    eta_a, eta_b = np.divmod(draws, w.shape[1])
    return eta_a.astype(np.int64), eta_b.astype(np.int64)


def simulate_zrp_two_species(model: TwoSpeciesZrpModel, eta_a0, eta_b0, t_end: float,
                             obs_times=None, rng_seed: int = 0,
                             max_events: int = 200_000_000,
                             factorization_tol: float = 1e-10):
    """Two-species event loop after verifying the factorization condition."""
    resid = model.factorization_residual()
    if resid > factorization_tol:
        raise ValueError(
            f"rate factorization condition violated (residual {resid:.3e})")
    if model.boundary not in ("periodic", "closed"):
        raise ValueError("two-species mode supports periodic or closed lattices")
    base = ZrpModel(n_sites=model.n_sites, dim=model.dim, boundary=model.boundary,
                    g=lambda k: np.asarray(k, dtype=float), k_cap=model.k_cap)
    neighbor, _, dir_cum, dir_total, site_base, _ = _build_lattice(base)
    n_sites = model.n_sites ** model.dim

    eta_a = np.asarray(eta_a0, dtype=np.int64).copy()
    eta_b = np.asarray(eta_b0, dtype=np.int64).copy()
    if obs_times is None:
        obs_times = [t_end]
    obs = np.asarray(sorted(set(float(t) for t in obs_times) | {float(t_end)}))
    ut, vt = model.tables()
    snap_a = np.zeros((obs.size, n_sites), dtype=np.int64)
    snap_b = np.zeros_like(snap_a)
    integ_a = np.zeros((obs.size, n_sites))
    integ_b = np.zeros_like(integ_a)
    acc_a = np.zeros(n_sites)
    acc_b = np.zeros(n_sites)
    last_t = np.zeros(n_sites)
    rng_state = _kmc.seed_rng(np.uint64(rng_seed))
    status, n_events, _ = _kmc.run_zrp_two_species(
        eta_a, eta_b, ut, vt, site_base, np.zeros(n_sites), np.zeros(n_sites),
        neighbor, dir_cum, dir_total, float(t_end), obs, int(max_events),
        rng_state, snap_a, snap_b, integ_a, integ_b, acc_a, acc_b, last_t)
    if status == _kmc.ERR_TABLE_CAP:
        raise SimulationError("occupation exceeded the two-species table cap")
    if status == _kmc.ERR_EVENT_CAP:
        raise SimulationError("event budget exhausted before t_end")
    return (ZrpTrajectory(base, obs, snap_a, integ_a, int(n_events), int(rng_seed)),
            ZrpTrajectory(base, obs, snap_b, integ_b, int(n_events), int(rng_seed)))
