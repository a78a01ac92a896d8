//! Simulation harness: runs a scenario over a dimension grid with repeated
//! trials, aggregates bias/MSE/coverage/CI-length per method, and exports
//! the results as CSV/JSON tables plus a plotting script.
//!
//! Determinism is load-bearing here: every trial derives its own seed from
//! `(master_seed, dimension, trial_index)`, trials are reduced in index
//! order, and exports format numbers through the standard shortest
//! round-trip formatter — so the emitted artifacts are byte-identical no
//! matter how many worker threads run the trials.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    generate_dataset, true_propensity, true_tau, Dataset, ScenarioKind, ScenarioSpec, SeedSpec,
};
use crate::error::{Error, Result};
use crate::estimators::{
    debiased_hajek_from_artifacts, debiased_ipw, hajek, oracle_ipw, DebiasArtifacts,
};
use crate::inference::{
    variance_hajek_family, variance_ipw_family, variance_oracle, variance_oracle_with_propensities,
    EstimateReport, Method, GAUSSIAN_95,
};
use crate::linalg::dot;
use crate::logistic::{fit_mle, link};
use crate::scalar::Scalar;

/// Stream label for per-trial dataset seeds.
const STREAM_DATASET: u64 = 0xE1;
/// Stream label for the experiment-level true-ATE evaluation.
const STREAM_TAU_STAR: u64 = 0xE2;

/// Full description of one simulation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    /// Sample size per trial.
    pub n: usize,
    /// Number of trials per grid dimension.
    pub trials: usize,
    /// Number of grid points; dimension `q` of `1..=grid_points` is
    /// `round(n^((q+2)/(grid_points+6)))`.
    pub grid_points: usize,
    /// Estimators to evaluate; must be nonempty.
    pub methods: Vec<Method>,
    pub master_seed: u64,
    /// Draws used for the Monte Carlo true ATE where no closed form exists.
    pub mc_oracle_samples: usize,
    /// Worker threads for the trial loop; `None` lets the runtime decide.
    /// Results are identical for every choice.
    pub threads: Option<usize>,
    pub csv_out: Option<PathBuf>,
    pub json_out: Option<PathBuf>,
    pub plot_out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with the default grid resolution (15 points), all methods,
    /// and the default true-ATE sample budget (10^7).
    pub fn new(scenario: ScenarioKind, n: usize, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            n,
            trials,
            grid_points: 15,
            methods: Method::ALL.to_vec(),
            master_seed,
            mc_oracle_samples: 10_000_000,
            threads: None,
            csv_out: None,
            json_out: None,
            plot_out: None,
        }
    }

    /// Validate the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "sample size must be at least 2, got {}",
                self.n
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trial count must be positive".into()));
        }
        if self.grid_points == 0 {
            return Err(Error::Config("grid must have at least one point".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list must be nonempty".into()));
        }
        if self.mc_oracle_samples == 0 {
            return Err(Error::Config(
                "true-ATE sample budget must be positive".into(),
            ));
        }
        if self.plot_out.is_some() && self.csv_out.is_none() {
            return Err(Error::Config(
                "a plot script consumes the CSV export, so --plot requires a CSV path".into(),
            ));
        }
        Ok(())
    }
}

/// One estimator's outcome on one trial. `failed` marks estimation errors
/// (non-convergence, empty arm, degenerate weight); the numeric fields are
/// absent exactly when it is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult<T> {
    pub method: Method,
    pub tau_hat: Option<T>,
    /// Standard error of `tau_hat` (the square root of the variance
    /// estimate over `n`).
    pub sigma_hat: Option<T>,
    /// Whether the 95% interval around `tau_hat` contains the true ATE.
    pub covered: Option<bool>,
    pub failed: bool,
}

/// All method outcomes for a single generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult<T> {
    pub trial_index: u64,
    /// One entry per configured method, in configuration order.
    pub results: Vec<MethodResult<T>>,
}

/// Aggregated performance of one method at one grid dimension. The four
/// statistics are `None` exactly when every trial failed, which marks the
/// row as missing in exports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow<T> {
    pub method: Method,
    pub d: usize,
    pub n: usize,
    pub trials_used: usize,
    pub failures: usize,
    pub abs_bias: Option<T>,
    pub mse: Option<T>,
    pub coverage: Option<T>,
    pub mean_ci_length: Option<T>,
}

/// Experiment-level context attached to the aggregated rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableMetadata<T> {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub methods: Vec<Method>,
    pub dimension_grid: Vec<usize>,
    /// How the grid formula's fractional powers were mapped to integers.
    pub grid_rounding: &'static str,
    pub tau_star: T,
    /// `"closed-form"` when the scenario has an exact ATE, `"monte-carlo"`
    /// when it was integrated with `mc_oracle_samples` draws.
    pub tau_star_provenance: &'static str,
    pub mc_oracle_samples: usize,
}

/// Aggregated experiment results: one row per (method, grid dimension).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable<T> {
    pub metadata: TableMetadata<T>,
    pub rows: Vec<TableRow<T>>,
}

/// Export encodings understood by [`export_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// The dimension ladder `d_q = round(n^((q+2)/(r+6)))`, `q = 1..=r`,
/// clamped below at 1. Duplicate dimensions (common for small `n`) are
/// preserved so the table shape depends only on `r`.
pub fn dimension_grid(n: usize, r: usize) -> Vec<usize> {
    assert!(n >= 2, "dimension grid needs n >= 2");
    assert!(r >= 1, "dimension grid needs at least one point");
    (1..=r)
        .map(|q| {
            let exponent = (q + 2) as f64 / (r + 6) as f64;
            let d = (n as f64).powf(exponent).round();
            if d < 1.0 {
                1
            } else {
                d as usize
            }
        })
        .collect()
}

fn coverage_band_contains<T: Scalar>(tau_hat: T, tau_star: T, sigma_hat: T) -> bool {
    if sigma_hat > T::zero() {
        (tau_hat - tau_star).abs() <= T::of(GAUSSIAN_95) * sigma_hat
    } else {
        // a zero-width interval covers only an exact hit
        tau_hat == tau_star
    }
}

/// Point estimate and variance estimate for one method on one dataset,
/// sharing the fitted artifacts across methods.
fn point_and_variance<T: Scalar>(
    spec: &ScenarioSpec<T>,
    data: &Dataset<T>,
    method: Method,
    art: Option<&DebiasArtifacts<T>>,
) -> Result<(T, T)> {
    let fit_failed = || Error::NonConvergence {
        iterations: 0,
        reason: "propensity fit failed for this trial".into(),
    };
    match method {
        Method::Oracle => {
            let props: Vec<T> = (0..data.n())
                .map(|i| true_propensity(spec, data.covariate(i)))
                .collect::<Result<_>>()?;
            let tau = oracle_ipw(data, &props)?;
            // the variance protocol evaluates the oracle residuals at the
            // fitted propensities; fall back to the true ones when no
            // converged fit exists for this dataset
            let var = match art {
                Some(a) => variance_oracle(data, &a.fit, tau)?,
                None => variance_oracle_with_propensities(data, &props, tau),
            };
            Ok((tau, var))
        }
        Method::IPW => {
            let a = art.ok_or_else(fit_failed)?;
            Ok((a.tau_ipw, variance_ipw_family(data, a, a.tau_ipw)?))
        }
        Method::DebiasedIPW => {
            let a = art.ok_or_else(fit_failed)?;
            Ok((a.tau_debias, variance_ipw_family(data, a, a.tau_debias)?))
        }
        Method::Hajek => {
            let a = art.ok_or_else(fit_failed)?;
            let tau = hajek(data, &a.fit)?;
            Ok((tau, variance_hajek_family(data, a)?))
        }
        Method::DebiasedHajek => {
            let a = art.ok_or_else(fit_failed)?;
            let tau = debiased_hajek_from_artifacts(data, a)?;
            Ok((tau, variance_hajek_family(data, a)?))
        }
    }
}

/// Generate the dataset for `(config, d, trial_index)` and evaluate every
/// configured method on it. Estimation failures are captured per method —
/// a separated trial fails the fitted estimators while the oracle column is
/// still reported.
pub fn run_trial<T: Scalar>(
    cfg: &ExperimentConfig,
    d: usize,
    trial_index: u64,
    tau_star: T,
) -> Result<TrialResult<T>> {
    let spec = ScenarioSpec::new(cfg.scenario, d);
    let seed = SeedSpec::new(cfg.master_seed, 0)
        .stream(STREAM_DATASET)
        .stream(d as u64)
        .with_trial(trial_index);
    let data = generate_dataset(&spec, cfg.n, seed)?;
    // one propensity fit shared by all fitted methods; an error here marks
    // them failed without aborting the trial
    let art = debiased_ipw(&data);
    let results = cfg
        .methods
        .iter()
        .map(
            |&method| match point_and_variance::<T>(&spec, &data, method, art.as_ref().ok()) {
                Ok((tau_hat, variance)) => {
                    let sigma_hat = (variance / T::from_count(data.n())).sqrt();
                    MethodResult {
                        method,
                        tau_hat: Some(tau_hat),
                        sigma_hat: Some(sigma_hat),
                        covered: Some(coverage_band_contains(tau_hat, tau_star, sigma_hat)),
                        failed: false,
                    }
                }
                Err(_) => MethodResult {
                    method,
                    tau_hat: None,
                    sigma_hat: None,
                    covered: None,
                    failed: true,
                },
            },
        )
        .collect();
    Ok(TrialResult {
        trial_index,
        results,
    })
}

/// Collapse the trials of one grid dimension into per-method rows.
///
/// Statistics are computed over non-failed trials only; a method whose
/// trials all failed gets a marker row with empty statistics.
pub fn aggregate<T: Scalar>(
    results: &[TrialResult<T>],
    tau_star: T,
    n: usize,
    d: usize,
) -> Vec<TableRow<T>> {
    let methods: Vec<Method> = match results.first() {
        Some(first) => first.results.iter().map(|r| r.method).collect(),
        None => return Vec::new(),
    };
    methods
        .iter()
        .enumerate()
        .map(|(idx, &method)| {
            let mut used = 0usize;
            let mut failures = 0usize;
            let mut covered = 0usize;
            let mut tau_sum = T::zero();
            let mut sq_sum = T::zero();
            let mut len_sum = T::zero();
            for trial in results {
                let r = &trial.results[idx];
                debug_assert_eq!(r.method, method, "trials must share the method layout");
                if r.failed {
                    failures += 1;
                    continue;
                }
                used += 1;
                let tau = r.tau_hat.expect("non-failed result carries an estimate");
                let sigma = r
                    .sigma_hat
                    .expect("non-failed result carries a standard error");
                tau_sum += tau;
                let dev = tau - tau_star;
                sq_sum += dev * dev;
                len_sum += T::of(2.0) * T::of(GAUSSIAN_95) * sigma;
                if r.covered == Some(true) {
                    covered += 1;
                }
            }
            if used == 0 {
                return TableRow {
                    method,
                    d,
                    n,
                    trials_used: 0,
                    failures,
                    abs_bias: None,
                    mse: None,
                    coverage: None,
                    mean_ci_length: None,
                };
            }
            let k = T::from_count(used);
            TableRow {
                method,
                d,
                n,
                trials_used: used,
                failures,
                abs_bias: Some((tau_sum / k - tau_star).abs()),
                mse: Some(sq_sum / k),
                coverage: Some(T::from_count(covered) / k),
                mean_ci_length: Some(len_sum / k),
            }
        })
        .collect()
}

/// Run the full experiment: the true ATE once, then `trials` trials at each
/// grid dimension, aggregated into a table.
///
/// The trial loop runs on a dedicated thread pool of `cfg.threads` workers
/// (or the runtime default); per-trial seeding and index-ordered reduction
/// make the output identical for every thread count.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentTable<T>> {
    cfg.validate()?;
    let grid = dimension_grid(cfg.n, cfg.grid_points);

    // the true ATE does not depend on the dimension (the scenarios reduce
    // to a one-dimensional projection), so it is evaluated once
    let tau_spec: ScenarioSpec<T> = ScenarioSpec::new(cfg.scenario, grid[0]);
    let tau_star = true_tau(
        &tau_spec,
        cfg.mc_oracle_samples,
        SeedSpec::new(cfg.master_seed, 0).stream(STREAM_TAU_STAR),
    );
    let tau_star_provenance = match cfg.scenario {
        ScenarioKind::WellSpecified => "closed-form",
        ScenarioKind::ZeroBias | ScenarioKind::MisSpecified => "monte-carlo",
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("could not build worker pool: {e}")))?;

    let mut rows = Vec::with_capacity(grid.len() * cfg.methods.len());
    for &d in &grid {
        let trials: Result<Vec<TrialResult<T>>> = pool.install(|| {
            (0..cfg.trials as u64)
                .into_par_iter()
                .map(|k| run_trial(cfg, d, k, tau_star))
                .collect()
        });
        rows.extend(aggregate(&trials?, tau_star, cfg.n, d));
    }
    let method_rank = |m: Method| {
        Method::ALL
            .iter()
            .position(|&x| x == m)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_key(|row| (method_rank(row.method), row.d));

    Ok(ExperimentTable {
        metadata: TableMetadata {
            scenario: cfg.scenario,
            n: cfg.n,
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            methods: cfg.methods.clone(),
            dimension_grid: grid,
            grid_rounding: "nearest",
            tau_star,
            tau_star_provenance,
            mc_oracle_samples: cfg.mc_oracle_samples,
        },
        rows,
    })
}

fn opt_cell<T: Scalar>(v: Option<T>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write the table to `path` as CSV (fixed column set, rows ordered by
/// method then dimension) or as a JSON document mirroring the row fields
/// plus the experiment metadata.
pub fn export_table<T: Scalar + Serialize>(
    table: &ExperimentTable<T>,
    format: ExportFormat,
    path: &Path,
) -> Result<()> {
    match format {
        ExportFormat::Csv => {
            let mut w =
                csv::Writer::from_path(path).map_err(|e| Error::csv(path, e.to_string()))?;
            w.write_record([
                "method",
                "d",
                "n",
                "trials_used",
                "failures",
                "abs_bias",
                "mse",
                "coverage",
                "mean_ci_length",
            ])
            .map_err(|e| Error::csv(path, e.to_string()))?;
            for row in &table.rows {
                w.write_record([
                    row.method.as_str().to_string(),
                    row.d.to_string(),
                    row.n.to_string(),
                    row.trials_used.to_string(),
                    row.failures.to_string(),
                    opt_cell(row.abs_bias),
                    opt_cell(row.mse),
                    opt_cell(row.coverage),
                    opt_cell(row.mean_ci_length),
                ])
                .map_err(|e| Error::csv(path, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        }
        ExportFormat::Json => {
            let body = serde_json::to_string_pretty(table)
                .map_err(|e| Error::csv(path, format!("JSON encoding failed: {e}")))?;
            fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

/// Write a self-contained Python script that renders the exported CSV as
/// four panels — absolute bias, MSE, coverage (with the 0.95 reference),
/// and mean CI length — against the dimension on a log axis.
pub fn emit_plot_script<T: Scalar>(
    table: &ExperimentTable<T>,
    csv_path: &Path,
    script_path: &Path,
) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty table".into()));
    }
    let mut dims: Vec<usize> = table.rows.iter().map(|r| r.d).collect();
    dims.sort_unstable();
    dims.dedup();
    let dim_list = dims
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let csv_literal = format!("{:?}", csv_path.display().to_string());

    let script = format!(
        r#"#!/usr/bin/env python3
"""Render the four summary panels of an experiment table.

Usage: plot.py [table.csv]   (defaults to the table this script was emitted for)
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_PATH = sys.argv[1] if len(sys.argv) > 1 else {csv_literal}
D_VALUES = [{dim_list}]

series = defaultdict(list)
with open(CSV_PATH, newline="") as fh:
    for rec in csv.DictReader(fh):
        if rec["abs_bias"] == "":
            continue  # marker row: every trial failed
        series[rec["method"]].append(
            (
                int(rec["d"]),
                float(rec["abs_bias"]),
                float(rec["mse"]),
                float(rec["coverage"]),
                float(rec["mean_ci_length"]),
            )
        )

PANELS = [("absolute bias", 1), ("MSE", 2), ("coverage", 3), ("mean CI length", 4)]
fig, axes = plt.subplots(2, 2, figsize=(11.5, 8.5))
for ax, (label, idx) in zip(axes.flat, PANELS):
    for method in sorted(series):
        pts = sorted(series[method])
        ax.plot([p[0] for p in pts], [p[idx] for p in pts], marker="o", label=method)
    if label == "coverage":
        ax.axhline(0.95, color="black", linestyle="--", linewidth=1, label="0.95 target")
    ax.set_xscale("log")
    ax.set_xticks(D_VALUES)
    ax.set_xticklabels([str(d) for d in D_VALUES], rotation=45)
    ax.minorticks_off()
    ax.set_xlabel("covariate dimension d")
    ax.set_ylabel(label)
axes.flat[0].legend(loc="best", fontsize=8)
axes.flat[2].legend(loc="best", fontsize=8)
fig.tight_layout()
out = CSV_PATH.rsplit(".", 1)[0] + ".png"
fig.savefig(out, dpi=150)
print(f"wrote {{out}}")
"#
    );
    fs::write(script_path, script).map_err(|e| Error::io(script_path, e))
}

/// Run the experiment and write every export configured on it.
pub fn run_and_export<T: Scalar + Serialize>(cfg: &ExperimentConfig) -> Result<ExperimentTable<T>> {
    let table = run_experiment::<T>(cfg)?;
    if let Some(csv_path) = &cfg.csv_out {
        export_table(&table, ExportFormat::Csv, csv_path)?;
    }
    if let Some(json_path) = &cfg.json_out {
        export_table(&table, ExportFormat::Json, json_path)?;
    }
    if let (Some(plot_path), Some(csv_path)) = (&cfg.plot_out, &cfg.csv_out) {
        emit_plot_script(&table, csv_path, plot_path)?;
    }
    Ok(table)
}

/// Evaluate one method on an externally supplied dataset, returning the
/// full report (estimate, variance, standard error, interval).
///
/// The oracle method needs the true propensity coefficients; fitted methods
/// reject them being absent at the CLI layer, not here.
pub fn estimate_with_method<T: Scalar>(
    data: &Dataset<T>,
    method: Method,
    beta_star: Option<&[T]>,
) -> Result<EstimateReport<T>> {
    let (tau_hat, variance) = match method {
        Method::Oracle => {
            let beta = beta_star.ok_or_else(|| {
                Error::Config(
                    "the oracle estimator requires the true propensity coefficients".into(),
                )
            })?;
            if beta.len() != data.dim() {
                return Err(Error::InvalidArgument(format!(
                    "coefficient length {} does not match covariate dimension {}",
                    beta.len(),
                    data.dim()
                )));
            }
            let props: Vec<T> = (0..data.n())
                .map(|i| link(dot(data.covariate(i), beta)))
                .collect();
            let tau = oracle_ipw(data, &props)?;
            let var = match fit_mle(data) {
                Ok(fit) => variance_oracle(data, &fit, tau)?,
                Err(_) => variance_oracle_with_propensities(data, &props, tau),
            };
            (tau, var)
        }
        _ => {
            let art = debiased_ipw(data)?;
            match method {
                Method::IPW => (art.tau_ipw, variance_ipw_family(data, &art, art.tau_ipw)?),
                Method::DebiasedIPW => (
                    art.tau_debias,
                    variance_ipw_family(data, &art, art.tau_debias)?,
                ),
                Method::Hajek => {
                    let tau = hajek(data, &art.fit)?;
                    (tau, variance_hajek_family(data, &art)?)
                }
                Method::DebiasedHajek => {
                    let tau = debiased_hajek_from_artifacts(data, &art)?;
                    (tau, variance_hajek_family(data, &art)?)
                }
                Method::Oracle => unreachable!("handled above"),
            }
        }
    };
    Ok(EstimateReport::new(
        method,
        tau_hat,
        variance,
        data.n(),
        data.dim(),
    ))
}
