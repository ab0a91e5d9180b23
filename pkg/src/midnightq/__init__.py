"""Stationary midnight-count distributions for a daily-review many-server queue.

Three routes to the same object: the exact truncated Markov chain, a
closed-form piecewise proxy for the diffusion approximation, and a Galerkin
projection that solves the diffusion's stationarity equation numerically.
Monte Carlo simulators of both the queue and the diffusion serve as
independent oracles, and a scaling harness checks the diffusion limit
empirically.
"""

from .model import DiffusionParams, ModelParams, derive_diffusion_params, validate_params
from .chain import (
    ChainKernel,
    ConvergenceError,
    SimulatedPath,
    StationaryPMF,
    build_kernel,
    default_truncation,
    simulate_path,
    simulate_replications,
    stationary_pmf,
)
from .diffusion import (
    DensityTable,
    LimitHarnessConfig,
    LimitReport,
    NormalDensity,
    PiecewiseDensity,
    TransitionKernel,
    UnstableRegimeError,
    dou_stationary_density,
    proxy_density,
    run_limit_harness,
    simulate_diffusion,
    transition_density,
)
from .projection import (
    FemBasis,
    GramError,
    GramSystem,
    PiecewiseLinear,
    RatioReconstruction,
    apply_kernel_operator,
    assemble_gram,
    build_basis,
    default_basis,
    project_stationary_density,
    reconstruct_density,
    solve_gram,
)

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "DiffusionParams",
    "validate_params",
    "derive_diffusion_params",
    "ChainKernel",
    "StationaryPMF",
    "SimulatedPath",
    "ConvergenceError",
    "build_kernel",
    "default_truncation",
    "stationary_pmf",
    "simulate_path",
    "simulate_replications",
    "TransitionKernel",
    "PiecewiseDensity",
    "NormalDensity",
    "DensityTable",
    "LimitHarnessConfig",
    "LimitReport",
    "UnstableRegimeError",
    "transition_density",
    "proxy_density",
    "dou_stationary_density",
    "simulate_diffusion",
    "run_limit_harness",
    "FemBasis",
    "GramSystem",
    "GramError",
    "PiecewiseLinear",
    "RatioReconstruction",
    "build_basis",
    "default_basis",
    "apply_kernel_operator",
    "assemble_gram",
    "solve_gram",
    "reconstruct_density",
    "project_stationary_density",
    "__version__",
]
