//! Average-treatment-effect estimation by inverse propensity weighting, with
//! second-order bias corrections for settings where the covariate dimension
//! is not negligible against the sample size.

pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod logistic;
pub mod oracle;
pub mod scalar;

pub use data::{
    generate_dataset, true_outcome, true_propensity, true_tau, Dataset, ScenarioKind, ScenarioSpec,
    SeedSpec,
};
pub use error::{Error, Result};
pub use estimators::{
    debiased_hajek, debiased_ipw, estimate_biases, estimate_projections, hajek, ipw, oracle_ipw,
    BiasEstimates, DebiasArtifacts, ProjectionEstimates,
};
pub use harness::{
    aggregate, dimension_grid, emit_plot_script, estimate_with_method, export_table,
    run_and_export, run_experiment, run_trial, ExperimentConfig, ExperimentTable, ExportFormat,
    MethodResult, TableMetadata, TableRow, TrialResult,
};
pub use inference::{
    confidence_interval, t_statistic, variance_hajek_family, variance_ipw_family, variance_oracle,
    EstimateReport, Method, GAUSSIAN_95,
};
pub use linalg::Matrix;
pub use logistic::{
    empirical_fisher, fisher_inverse, fit_mle, link, log_likelihood, score, FisherMatrix,
    LogisticFit,
};
pub use oracle::{
    check_decomposition, check_variance_identity, mc_population, scenario_diagnostics,
    DecompositionReport, PopulationQuantities, PopulationStdErrors, ScenarioDiagnostics,
    VarianceIdentityReport,
};
pub use scalar::Scalar;

/// Double-precision aliases for the generic core types.
pub type DatasetF64 = Dataset<f64>;
pub type ScenarioSpecF64 = ScenarioSpec<f64>;
pub type LogisticFitF64 = LogisticFit<f64>;
pub type FisherMatrixF64 = FisherMatrix<f64>;
pub type DebiasArtifactsF64 = DebiasArtifacts<f64>;
pub type EstimateReportF64 = EstimateReport<f64>;
pub type PopulationQuantitiesF64 = PopulationQuantities<f64>;

/// Single-precision aliases; useful when memory outweighs the precision
/// loss (estimates agree with `f64` only to a few decimal digits).
pub type DatasetF32 = Dataset<f32>;
pub type ScenarioSpecF32 = ScenarioSpec<f32>;
pub type LogisticFitF32 = LogisticFit<f32>;
pub type FisherMatrixF32 = FisherMatrix<f32>;
pub type DebiasArtifactsF32 = DebiasArtifacts<f32>;
pub type EstimateReportF32 = EstimateReport<f32>;
pub type PopulationQuantitiesF32 = PopulationQuantities<f32>;
