"""Level and growth effects of weather and climate on subnational output.

Modules
-------
ingest       raster cells and region polygons to region-year climate and population
panel        growth rates, weather terms, period averages, bins, weights, rich/poor split
absorption   fixed-effect absorption by alternating weighted projections
estimator    weighted least squares with absorbed fixed effects
inference    covariance estimators, marginal effects, optimum, annualization
diagnostics  unit-root and serial-correlation tests, dataset comparison
resample     country-block bootstrap and adaptation ratio
project      damage projections under warming scenarios
cli          batch entry point (``climgrowth <stage> --config cfg.json``)
"""

__version__ = "0.1.0"

from .absorption import ConvergenceError, FETerm, FixedEffects, parse_fe_term
from .diagnostics import TestReport, compare_series, cross_database_fit, harris_tzavalis, lm_serial
from .estimator import (
    EstimationError,
    FitResult,
    RegressionSpec,
    bin_effects,
    fit,
    fit_binned,
    fit_heterogeneous,
    standard_spec,
)
from .inference import (
    MarginalCurve,
    QuadraticResponse,
    VcovSpec,
    annualize_decadal,
    compute_vcov,
    decadalize_annual,
    marginal_effect,
    optimal_level,
    vcov_cluster,
    vcov_hac,
    vcov_robust,
    vcov_twoway,
)
from .ingest import RegionShape, aggregate_climate, aggregate_population, assign_cells
from .panel import (
    bin_indicators,
    classify_rich_poor,
    compute_weights,
    growth_rates,
    long_difference,
    period_average,
    weather_terms,
)
from .project import (
    ClimateScenario,
    DamageFunction,
    aggregate,
    baseline_climate,
    project_region,
    run_projection,
    sample_uncertainty,
)
from .resample import BootstrapRun, adaptation_ratio, block_bootstrap

__all__ = [
    "__version__",
    "ConvergenceError", "FETerm", "FixedEffects", "parse_fe_term",
    "TestReport", "compare_series", "cross_database_fit", "harris_tzavalis", "lm_serial",
    "EstimationError", "FitResult", "RegressionSpec", "bin_effects", "fit", "fit_binned", "fit_heterogeneous",
    "standard_spec",
    "MarginalCurve", "QuadraticResponse", "VcovSpec", "annualize_decadal", "compute_vcov", "decadalize_annual",
    "marginal_effect", "optimal_level", "vcov_cluster", "vcov_hac", "vcov_robust", "vcov_twoway",
    "RegionShape", "aggregate_climate", "aggregate_population", "assign_cells",
    "bin_indicators", "classify_rich_poor", "compute_weights", "growth_rates", "long_difference",
    "period_average", "weather_terms",
    "ClimateScenario", "DamageFunction", "aggregate", "baseline_climate", "project_region", "run_projection",
    "sample_uncertainty",
    "BootstrapRun", "adaptation_ratio", "block_bootstrap",
]
