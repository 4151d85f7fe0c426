"""Factor-analysis power spectrum estimation for ensembles of short signals."""
from .evaluation import ExperimentConfig, convergence_sweep, mae, run_experiment
from .factor import (
    CovarianceEstimate,
    EigenSolverError,
    EnsembleMoments,
    FactorSubspace,
    accumulate,
    baseline_mean_estimator,
    covariance_estimate,
    merge,
    project_spectrum,
    select_rank,
    top_eigenpairs,
)
from .field import (
    AnalyticSpectrum,
    CoefficientLaw,
    FactorModel,
    Kernel,
    SignalStack,
    conditional_spectrum,
    convolve_kernel,
    population_covariance,
    sample_factor_model,
    sample_white_noise,
    synthesize_field,
    two_source_model,
)
from .grid import FreqGrid, build_grid, delta
from .spectrum import TaperSet, autocovariance_from_spectrum, dpss, multitaper, periodogram

__version__ = "0.1.0"
