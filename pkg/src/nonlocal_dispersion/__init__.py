"""Non-local dispersion operators with scaled kernels: spectra, evolution
diagnostics and heterogeneous steady states on the torus and on masked
boxes."""

__version__ = "0.1.0"

from .domain import Field, MaskedGrid, TorusGrid, integrate, l2_inner, l2_norm, mean_mass
from .dynamics import ForceTerm, evolve, sigma_criterion
from .equilibria import JumpTemplate, bifurcation_scan, continue_branch, solve_discontinuous
from .errors import (
    BlowUpError,
    CertificateError,
    ConfigError,
    DispersionError,
    DomainError,
    InvalidKernelError,
    ModeError,
    NumericalError,
    ShapeError,
    StabilityError,
)
from .kernel import BaseKernel, ScaledKernel, eval_scaled, fourier_coefficient, normalization_constant
from .operator import DiscreteOperator, apply, apply_fast, assemble, boundary_deficit
from .spectrum import analytic_eigenvalues, classify_spectrum, limit_eigenvalue

__all__ = [
    "BaseKernel",
    "BlowUpError",
    "CertificateError",
    "ConfigError",
    "DiscreteOperator",
    "DispersionError",
    "DomainError",
    "Field",
    "ForceTerm",
    "InvalidKernelError",
    "JumpTemplate",
    "MaskedGrid",
    "ModeError",
    "NumericalError",
    "ScaledKernel",
    "ShapeError",
    "StabilityError",
    "TorusGrid",
    "analytic_eigenvalues",
    "apply",
    "apply_fast",
    "assemble",
    "bifurcation_scan",
    "boundary_deficit",
    "classify_spectrum",
    "continue_branch",
    "eval_scaled",
    "evolve",
    "fourier_coefficient",
    "integrate",
    "l2_inner",
    "l2_norm",
    "limit_eigenvalue",
    "mean_mass",
    "normalization_constant",
    "sigma_criterion",
    "solve_discontinuous",
]
