"""Numerical laboratory for spectral statistics of random lattice operators.

Builds finite volumes of Anderson-type Hamiltonians h = h0 + coupling * sum_n
omega_n P_n, estimates integrated and smoothed densities of states and their
energy derivatives by Monte Carlo, measures fractional-moment decay, and
certifies the operator inequalities the estimators rely on by quadrature.
"""

__version__ = "0.1.0"

from .cli import ConfigError, ExperimentConfig, RunManifest, reproduce, run
from .disorder import SingleSiteDensity, TiltedSampler
from .lattice import (
    FreeOperatorSpec,
    ModelSpec,
    ProjectionFamily,
    SiteSpace,
    assemble_hamiltonian,
    build_box_enumeration,
    restriction_spectrum_bounds,
)
from .montecarlo import (
    DecayFit,
    Estimate,
    McConfig,
    TelescopeReport,
    estimate_dos_derivative,
    estimate_fractional_moment,
    estimate_ids,
    estimate_smoothed_dos,
    fit_decay,
    telescope_series_diagnostic,
    telescoping_term,
)
from .spectral import ComplexShift, KernelBlock, dissipative_exp, resolvent_columns
from .verify import (
    BumpPair,
    CheckReport,
    Corpus,
    run_default_verification,
    smoothstep,
    stieltjes_transform,
    verify_boundary_derivatives,
    verify_finite_smooth,
    verify_resolvent_average_bound,
    verify_resolvent_semigroup_identity,
    verify_semigroup_hoelder,
    verify_spectral_averaging,
)

__all__ = [
    "BumpPair",
    "CheckReport",
    "ComplexShift",
    "ConfigError",
    "Corpus",
    "ExperimentConfig",
    "DecayFit",
    "Estimate",
    "FreeOperatorSpec",
    "KernelBlock",
    "McConfig",
    "ModelSpec",
    "ProjectionFamily",
    "RunManifest",
    "SingleSiteDensity",
    "SiteSpace",
    "TelescopeReport",
    "TiltedSampler",
    "assemble_hamiltonian",
    "build_box_enumeration",
    "dissipative_exp",
    "estimate_dos_derivative",
    "estimate_fractional_moment",
    "estimate_ids",
    "estimate_smoothed_dos",
    "fit_decay",
    "reproduce",
    "resolvent_columns",
    "restriction_spectrum_bounds",
    "run",
    "run_default_verification",
    "smoothstep",
    "stieltjes_transform",
    "telescope_series_diagnostic",
    "telescoping_term",
    "verify_boundary_derivatives",
    "verify_finite_smooth",
    "verify_resolvent_average_bound",
    "verify_resolvent_semigroup_identity",
    "verify_semigroup_hoelder",
    "verify_spectral_averaging",
]
