//! Command-line front end for the IPW estimation toolkit.
//!
//! Three subcommands cover the three workflows:
//!
//! * `simulate` — run a scenario x dimension-grid x trials Monte Carlo study
//!   and export the aggregate table (CSV, optional JSON mirror and plot
//!   script).
//! * `estimate` — evaluate a single estimator on a dataset CSV and print a
//!   JSON report with the point estimate and confidence interval.
//! * `oracle` — integrate the population bias/variance constants of a
//!   scenario by Monte Carlo and print them as JSON.
//!
//! Exit codes: 0 on success, 2 for configuration errors (bad flags, malformed
//! input files, invalid experiment settings), and 3 when estimation itself
//! fails on a user-supplied dataset (non-convergent fit, degenerate weights).
//! Code 3 is reserved for `estimate`; the simulation harness counts failed
//! trials instead of aborting.

use clap::{Args, Parser, Subcommand};
use ipw_core::{
    estimate_with_method, mc_population, run_and_export, Dataset, Error, ExperimentConfig, Method,
    ScenarioKind, ScenarioSpec, SeedSpec,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ipw",
    version,
    about = "IPW average-treatment-effect estimation: simulation studies, single-dataset estimates, and population oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo simulation study over a dimension grid and export
    /// the aggregate bias/MSE/coverage table.
    Simulate(SimulateArgs),
    /// Evaluate one estimator on a dataset CSV and print a JSON report.
    Estimate(EstimateArgs),
    /// Compute population bias and variance constants for a scenario by
    /// Monte Carlo integration and print them as JSON.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Data-generating scenario: wellspec, zerobias, or misspec.
    #[arg(long)]
    scenario: ScenarioKind,
    /// Samples per simulated dataset.
    #[arg(long)]
    n: usize,
    /// Trials per grid dimension.
    #[arg(long)]
    trials: usize,
    /// Number of dimension-grid points q = 1..=GRID, with
    /// d = round(n^((q+2)/(GRID+6))).
    #[arg(long, default_value_t = 15)]
    grid: usize,
    /// Comma-separated estimators (oracle, ipw, debias, hajek, hajek-debias)
    /// or "all".
    #[arg(long, default_value = "all")]
    methods: String,
    /// Master seed for the reproducible stream tree.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the trial loop; 0 selects the runtime default.
    /// Results are identical for every thread count.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output path for the aggregate table CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON mirror of the table, including run metadata.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Optional matplotlib script path; the script reads the CSV from --out.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV with header `y,a,x1,...,xd` and one sample per row.
    #[arg(long)]
    data: PathBuf,
    /// Estimator: oracle, ipw, debias, hajek, or hajek-debias.
    #[arg(long)]
    method: Method,
    /// One-column CSV of true propensity coefficients, one per covariate.
    /// Required by `--method oracle`; ignored otherwise.
    #[arg(long = "beta-star")]
    beta_star: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Data-generating scenario: wellspec, zerobias, or misspec.
    #[arg(long)]
    scenario: ScenarioKind,
    /// Covariate dimension (at least 1).
    #[arg(long)]
    d: usize,
    /// Monte Carlo draws for the population integrals (at least 10000).
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Master seed for the integration streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// An error paired with the process exit code it should produce.
struct Failure {
    code: u8,
    error: Error,
}

impl Failure {
    /// Wrap an error as a configuration failure (exit code 2).
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }

    /// Classify an error from single-dataset estimation: failures of the
    /// statistical procedure itself exit 3, everything else is a
    /// configuration problem and exits 2.
    fn estimation(error: Error) -> Self {
        let code = match error {
            Error::NonConvergence { .. }
            | Error::SingularFisher
            | Error::DegeneratePropensity { .. }
            | Error::DegenerateArm(_)
            | Error::DegenerateDenominator { .. }
            | Error::NumericalOverflow(_) => EXIT_ESTIMATION,
            _ => EXIT_CONFIG,
        };
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version print to stdout and succeed; genuine
            // parse errors are configuration errors.
            let code = if err.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Oracle(args) => run_oracle(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

/// Write one line to stdout. A broken pipe (the consumer closed early, as in
/// `ipw oracle ... | head`) ends the process quietly; any other write failure
/// is reported as an error.
fn emit(text: impl std::fmt::Display) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Failure::config(Error::Config(format!(
            "writing to stdout: {e}"
        )))),
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let methods = parse_methods(&args.methods).map_err(Failure::config)?;

    let mut cfg = ExperimentConfig::new(args.scenario, args.n, args.trials, args.seed);
    cfg.grid_points = args.grid;
    cfg.methods = methods;
    cfg.threads = (args.threads > 0).then_some(args.threads);
    cfg.csv_out = Some(args.out.clone());
    cfg.json_out = args.json.clone();
    cfg.plot_out = args.plot.clone();

    // Any failure here — invalid settings or unwritable outputs — is a
    // configuration error; per-trial estimation failures are counted in the
    // table rather than aborting the run.
    let table = run_and_export::<f64>(&cfg).map_err(Failure::config)?;

    emit(format!(
        "simulate: {} rows ({} methods x {} dimensions) -> {}",
        table.rows.len(),
        cfg.methods.len(),
        table.metadata.dimension_grid.len(),
        args.out.display()
    ))?;
    if let Some(json) = &args.json {
        emit(format!("simulate: table JSON -> {}", json.display()))?;
    }
    if let Some(plot) = &args.plot {
        emit(format!("simulate: plot script -> {}", plot.display()))?;
    }
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<(), Failure> {
    let data = Dataset::<f64>::from_csv(&args.data).map_err(Failure::config)?;
    let beta_star = match &args.beta_star {
        Some(path) => Some(read_coefficient_column(path).map_err(Failure::config)?),
        None => None,
    };

    let report = estimate_with_method(&data, args.method, beta_star.as_deref())
        .map_err(Failure::estimation)?;

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::config(Error::Config(format!("serializing report: {e}"))))?;
    emit(json)?;
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<(), Failure> {
    if args.d < 1 {
        return Err(Failure::config(Error::Config(
            "--d must be at least 1".into(),
        )));
    }
    let spec = ScenarioSpec::<f64>::new(args.scenario, args.d);
    let pop =
        mc_population(&spec, args.samples, SeedSpec::new(args.seed, 0)).map_err(Failure::config)?;

    let json = serde_json::to_string_pretty(&pop)
        .map_err(|e| Failure::config(Error::Config(format!("serializing report: {e}"))))?;
    emit(json)?;
    Ok(())
}

/// Parse the `--methods` flag: a comma-separated list of estimator tokens,
/// or the shorthand `all` for every estimator in table order.
fn parse_methods(raw: &str) -> Result<Vec<Method>, Error> {
    if raw.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut methods = Vec::new();
    for token in raw.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        methods.push(token.parse::<Method>()?);
    }
    if methods.is_empty() {
        return Err(Error::Config(format!(
            "--methods '{raw}' names no estimators"
        )));
    }
    Ok(methods)
}

/// Read a one-column CSV of coefficients: one decimal number per line,
/// blank lines ignored, no header.
fn read_coefficient_column(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value = line.parse::<f64>().map_err(|_| {
            Error::csv(
                path,
                format!(
                    "line {}: expected a decimal number, got '{line}'",
                    index + 1
                ),
            )
        })?;
        values.push(value);
    }
    if values.is_empty() {
        return Err(Error::csv(path, "no coefficients found"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_flag_accepts_all_shorthand() {
        assert_eq!(parse_methods("all").unwrap(), Method::ALL.to_vec());
    }

    #[test]
    fn methods_flag_parses_comma_list_in_given_order() {
        let methods = parse_methods("debias, ipw").unwrap();
        assert_eq!(methods, vec![Method::DebiasedIPW, Method::IPW]);
    }

    #[test]
    fn methods_flag_rejects_unknown_tokens_and_empty_lists() {
        assert!(parse_methods("ipw,bogus").is_err());
        assert!(parse_methods("").is_err());
        assert!(parse_methods(" , ,").is_err());
    }

    #[test]
    fn estimation_failures_and_config_errors_get_distinct_exit_codes() {
        let fit_failure = Failure::estimation(Error::NonConvergence {
            iterations: 100,
            reason: "separation".into(),
        });
        assert_eq!(fit_failure.code, EXIT_ESTIMATION);

        let bad_flag = Failure::estimation(Error::Config("missing coefficients".into()));
        assert_eq!(bad_flag.code, EXIT_CONFIG);

        let degenerate = Failure::estimation(Error::DegeneratePropensity {
            index: 3,
            value: 1.0,
        });
        assert_eq!(degenerate.code, EXIT_ESTIMATION);
    }

    #[test]
    fn coefficient_files_parse_one_number_per_line() {
        let dir = std::env::temp_dir().join(format!("ipw-cli-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("beta.csv");

        std::fs::write(&path, "0.25\n\n-0.125\n").unwrap();
        assert_eq!(read_coefficient_column(&path).unwrap(), vec![0.25, -0.125]);

        std::fs::write(&path, "beta\n0.25\n").unwrap();
        assert!(read_coefficient_column(&path).is_err());

        std::fs::write(&path, "\n\n").unwrap();
        assert!(read_coefficient_column(&path).is_err());

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn command_line_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
