"""Numerical laboratory for boundary-driven nonlinear diffusion and its
entropy-type Lyapunov functionals, with finite-state jump dynamics and
lattice particle systems sharing the same discrete generator."""

from .core import (
    ConvexGenerator,
    DensityField,
    Grid,
    Nonlinearity,
    PHI_LOG,
    PHI_QUAD,
    PSI_QUAD,
    field_from_callable,
    identity,
    make_uniform_grid,
    power_law,
    psi_power,
    tabulated,
    uniform_field,
    validate_nonlinearity,
)
from .generator import DiscreteGenerator, assemble_from_grid, dirichlet_form
from .stationary import (
    SingularSystemError,
    StationaryResult,
    solve_stationary,
    stationary_flux_norm,
)
from .trajectory import TrajectoryLog
from .evolve import EvolveError, TimeStepper, evolve, stability_bound
from .entropy import (
    EntropySpec,
    NonReversibleError,
    NotStationaryError,
    density_ld_rate,
    phi_entropy,
    phi_production_grid,
    phi_production_jump,
    profile_ld_functional,
    psi_entropy,
    psi_production_grid,
    psi_production_jump,
    standard_diagnostics,
)
from .spectral import (
    DecayCertificate,
    comparison_constant,
    decay_certificate,
    dirichlet_eigenvalue,
    fit_rate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
