"""
ssb-measurement - quantum measurement as spontaneous symmetry breaking, simulated stochastically
"""
from .astro import AstroEstimates, astro_estimates
from .config import SimulationSettings
from .cosmology import (
    analytic_mode,
    evaluate_kernels,
    integrate_mode,
    power_spectrum,
    reheating_langevin,
    standard_spectrum,
)
from .engine import (
    EnsembleResult,
    EnsembleRunner,
    NoiseSpec,
    SdeProblem,
    Trajectory,
    integrate_sde,
    run_ensemble,
    sample_static_noise,
)
from .epr import (
    EprConfig,
    PairOutcome,
    chsh_configs,
    chsh_statistic,
    correlation_quadrature_oracle,
    estimate_correlation,
    run_epr_trial,
    sample_epr_noise,
)
from .exceptions import (
    ConfigurationError,
    CovarianceError,
    DimensionError,
    DivergenceError,
    DomainError,
    InvalidStateError,
    NumericalError,
    QualityWarningError,
    ResultWriteError,
    SimulationError,
    StepSizeError,
)
from .fokker_planck import PhiDistribution, fokker_planck_solve
from .harness import ExperimentConfig, ExperimentKind, dump_config, load_config, run_experiment
from .interfaces import IAuxiliaryProcess, IDriftField
from .measurement import (
    drift_phi,
    evolve_density_matrix,
    fixed_points,
    measurement_time,
    p_plus_erf,
    run_measurement,
    run_measurement_ensemble,
)
from .models import (
    ApparatusParams,
    ChshResult,
    CorrelationEstimate,
    InflationParams,
    MeasurementSummary,
    ReheatingParams,
    Readout,
    SpectrumResult,
)
from .quantum import (
    DensityMatrix,
    make_pure_spin,
    make_singlet,
    spin_correlation_matrix,
    spin_expectation,
    validate_density_matrix,
)
from .results import ResultBundle, emit_results
from .seeding import derive_seed

__version__ = "0.1.0"
__all__ = [
    "__version__",
    "AstroEstimates",
    "astro_estimates",
    "SimulationSettings",
    "analytic_mode",
    "evaluate_kernels",
    "integrate_mode",
    "power_spectrum",
    "reheating_langevin",
    "standard_spectrum",
    "EnsembleResult",
    "EnsembleRunner",
    "NoiseSpec",
    "SdeProblem",
    "Trajectory",
    "integrate_sde",
    "run_ensemble",
    "sample_static_noise",
    "EprConfig",
    "PairOutcome",
    "chsh_configs",
    "chsh_statistic",
    "correlation_quadrature_oracle",
    "estimate_correlation",
    "run_epr_trial",
    "sample_epr_noise",
    "ConfigurationError",
    "CovarianceError",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "InvalidStateError",
    "NumericalError",
    "QualityWarningError",
    "ResultWriteError",
    "SimulationError",
    "StepSizeError",
    "PhiDistribution",
    "fokker_planck_solve",
    "ExperimentConfig",
    "ExperimentKind",
    "dump_config",
    "load_config",
    "run_experiment",
    "IAuxiliaryProcess",
    "IDriftField",
    "drift_phi",
    "evolve_density_matrix",
    "fixed_points",
    "measurement_time",
    "p_plus_erf",
    "run_measurement",
    "run_measurement_ensemble",
    "ApparatusParams",
    "ChshResult",
    "CorrelationEstimate",
    "InflationParams",
    "MeasurementSummary",
    "ReheatingParams",
    "Readout",
    "SpectrumResult",
    "DensityMatrix",
    "make_pure_spin",
    "make_singlet",
    "spin_correlation_matrix",
    "spin_expectation",
    "validate_density_matrix",
    "ResultBundle",
    "emit_results",
    "derive_seed",
]
