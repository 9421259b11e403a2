"""Spectral decay certificates for the boundary-driven power-law diffusion.

The certified rate is the product of the first Dirichlet eigenvalue of the
domain and an elementary comparison constant that depends only on the power
m and the range of the stationary profile.  Observed rates are extracted from
trajectory logs by least squares on the log of the difference entropy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .core import Grid
from .trajectory import TrajectoryLog


def dirichlet_eigenvalue(grid: Grid, rel_tol: float = 1e-10,
                         max_iters: int = 10_000) -> float:
    """Smallest eigenvalue of the negative discrete Laplacian with zero walls.

    Inverse power iteration on the interior stencil; the diffusion stored on
    the grid is ignored because the certificate is stated for the plain
    Laplacian of the domain.
    """
    interior = grid.interior
    if not np.any(grid.boundary):
        raise ValueError("grid has no boundary layer to clamp")
    n_int = int(interior.sum())
    idx_map = -np.ones(grid.n_cells, dtype=np.int64)
    idx_map[interior] = np.arange(n_int)
    h2 = grid.h * grid.h
    rows, cols, vals = [], [], []
    diag = np.zeros(n_int)
    for lo, hi in zip(grid.face_lo, grid.face_hi):
        li, hi_ = idx_map[lo], idx_map[hi]
        if li >= 0:
            diag[li] += 1.0 / h2
        if hi_ >= 0:
            diag[hi_] += 1.0 / h2
        if li >= 0 and hi_ >= 0:
            rows += [li, hi_]
            cols += [hi_, li]
            vals += [-1.0 / h2, -1.0 / h2]
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n_int, n_int))
    A = A + sparse.diags(diag)
    lu = splu(A.tocsc())
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n_int)
    v /= np.linalg.norm(v)
    lam = np.inf
    for _ in range(max_iters):
        w = lu.solve(v)
        w /= np.linalg.norm(w)
        lam_new = float(w @ (A @ w))
        if abs(lam_new - lam) <= rel_tol * abs(lam_new):
            return lam_new
        lam, v = lam_new, w
    raise RuntimeError("inverse power iteration did not converge")


def _comparison_ratio(y: np.ndarray, y_ref: np.ndarray, m: float) -> np.ndarray:
    """(y^m - y_ref^m)^2 over the entropy-shaped denominator, diagonal filled."""
    y = np.asarray(y, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    num = (y ** m - y_ref ** m) ** 2
    den = (y ** (m + 1) - y_ref ** (m + 1)) / (m + 1) - (y - y_ref) * y_ref ** m
    limit = 2.0 * m * y_ref ** (m - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    near = np.abs(y - y_ref) <= 1e-9 * np.maximum(y_ref, 1.0)
    return np.where(near | (den <= 0.0), limit, ratio)


def comparison_constant(m: float, bounds: tuple[float, float],
                        n_grid: int = 2000, refine_rounds: int = 40) -> float:
    """Best constant C with (y^m - y_ref^m)^2 >= C * (entropy density) on R+.

    Two-level grid search over y in [0, y_cap] and y_ref in the given range,
    followed by local zooming around the minimizer.  The large-y tail needs no
    search: the ratio grows like y^(m-1) for m > 1 and is identically 2 for
    m = 1.
    """
    if m < 1:
        raise ValueError("the comparison constant is defined for m >= 1")
    k_min, k_max = bounds
    if not (0 < k_min <= k_max):
        raise ValueError("bounds must satisfy 0 < k_min <= k_max")
    if m == 1.0:
        return 2.0
    y_cap = 10.0 * k_max * (m + 1.0)
    ys = np.linspace(0.0, y_cap, n_grid)
    y_refs = np.linspace(k_min, k_max, 201)
    Y, R = np.meshgrid(ys, y_refs, indexing="ij")
    vals = _comparison_ratio(Y, R, m)
    best = float(vals.min())
    i, j = np.unravel_index(int(vals.argmin()), vals.shape)
    y0, r0 = float(Y[i, j]), float(R[i, j])
    wy = ys[1] - ys[0]
    wr = y_refs[1] - y_refs[0] if k_max > k_min else 0.0
    for _ in range(refine_rounds):
        y_lo, y_hi = max(0.0, y0 - wy), y0 + wy
        r_lo, r_hi = max(k_min, r0 - max(wr, 1e-18)), min(k_max, r0 + max(wr, 1e-18))
        yy = np.linspace(y_lo, y_hi, 33)
        rr = np.linspace(r_lo, r_hi, 33) if r_hi > r_lo else np.array([r0])
        Y, R = np.meshgrid(yy, rr, indexing="ij")
        vals = _comparison_ratio(Y, R, m)
        k = int(vals.argmin())
        i, j = np.unravel_index(k, vals.shape)
        if vals[i, j] < best:
            best = float(vals[i, j])
            y0, r0 = float(Y[i, j]), float(R[i, j])
        wy /= 4.0
        wr /= 4.0
    # analytic candidates: the diagonal limit and the y = 0 edge
    best = min(best, 2.0 * m * k_min ** (m - 1.0))
    best = min(best, (m + 1.0) / m * k_min ** (m - 1.0))
    return best


@dataclass
class DecayCertificate:
    lambda_dirichlet: float
    comparison_const: float
    certified_rate: float
    fitted_rate: float | None = None
    margin: float | None = None

    def with_fit(self, fitted: float) -> "DecayCertificate":
        return DecayCertificate(self.lambda_dirichlet, self.comparison_const,
                                self.certified_rate, fitted,
                                fitted - self.certified_rate)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def decay_certificate(grid: Grid, m: float, f_ref: np.ndarray,
                      log: TrajectoryLog | None = None,
                      column: str = "N_psi",
                      window: tuple[float, float] | None = None) -> DecayCertificate:
    """Certified exponential rate for the power-m dynamics on this grid.

    The comparison range is the closed hull of the stationary profile values.
    When a trajectory log is given, the observed rate and the margin against
    the certificate are filled in.
    """
    f_ref = np.asarray(f_ref, dtype=float)
    lam_d = dirichlet_eigenvalue(grid)
    c = comparison_constant(m, (float(f_ref.min()), float(f_ref.max())))
    cert = DecayCertificate(lam_d, c, lam_d * c)
    if log is not None:
        cert = cert.with_fit(fit_rate(log, column=column, window=window))
    return cert


def fit_rate(log: TrajectoryLog, column: str = "N_psi",
             window: tuple[float, float] | None = None,
             min_points: int = 10, floor: float = 1e-280) -> float:
    """Least-squares slope of -log(column) over the fit window.

    Defaults to the latest half of the recorded times (early transients only
    steepen the decay).  Values at or below the floating-point floor shrink
    the window; fewer than ``min_points`` usable values is an error.
    """
    t = log.t()
    v = log.col(column)
    if window is None:
        t_lo = t[0] + 0.5 * (t[-1] - t[0])
        t_hi = t[-1]
    else:
        t_lo, t_hi = window
    sel = (t >= t_lo) & (t <= t_hi)
    t, v = t[sel], v[sel]
    good = v > floor
    if not np.all(good):
        # decaying signals die at the tail: shrink the window to the live prefix
        first_bad = int(np.min(np.nonzero(~good)[0]))
        t, v = t[:first_bad], v[:first_bad]
        t, v = t[v > floor], v[v > floor]
    if t.size < min_points:
        raise ValueError(
            f"only {t.size} usable points in the fit window (need {min_points}); "
            "signal hit the floating-point floor or window too narrow")
    slope, _ = np.polyfit(t, -np.log(v), 1)
    return float(slope)
