//! Datasets, simulation scenarios, and deterministic random-number streams.
//!
//! Three synthetic data-generating processes are built in. All of them draw
//! covariates as i.i.d. standard normals, assign treatment from a
//! linear-logistic propensity with slope `beta_star = 1/(2 sqrt(d))` per
//! coordinate, and set the control outcome to zero:
//!
//! * `WellSpecified` — treated outcome `|<x, 1/sqrt(d) * ones>|`; the
//!   propensity model fitted downstream matches the truth.
//! * `ZeroBias` — treated outcome `pi(x) * <x, 1/sqrt(d) * ones>`, chosen so
//!   the second-order bias of the plug-in IPW estimator vanishes exactly.
//! * `MisSpecified` — same outcome as `WellSpecified`, but the true
//!   propensity carries a -0.1 offset in its linear predictor that the
//!   fitted (offset-free) model cannot represent.
//!
//! Randomness is counter-based: a [`SeedSpec`] names a stream by
//! `(master_seed, trial_index)`, and derived streams are obtained by mixing
//! labels into the master seed. Equal specs reproduce bit-identical draws,
//! which is what makes parallel experiments independent of scheduling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::logistic::link;
use crate::scalar::Scalar;

/// The three built-in data-generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "wellspec")]
    WellSpecified,
    #[serde(rename = "zerobias")]
    ZeroBias,
    #[serde(rename = "misspec")]
    MisSpecified,
}

impl ScenarioKind {
    /// Stable lowercase token used by the CLI and output metadata.
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::WellSpecified => "wellspec",
            ScenarioKind::ZeroBias => "zerobias",
            ScenarioKind::MisSpecified => "misspec",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wellspec" => Ok(ScenarioKind::WellSpecified),
            "zerobias" => Ok(ScenarioKind::ZeroBias),
            "misspec" => Ok(ScenarioKind::MisSpecified),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected wellspec|zerobias|misspec)"
            ))),
        }
    }
}

/// A fully parameterized scenario at a fixed covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec<T> {
    pub kind: ScenarioKind,
    pub dimension: usize,
    /// True propensity slope; always `1/(2 sqrt(d))` per coordinate, so its
    /// Euclidean norm is 1/2 at every dimension.
    pub beta_star: Vec<T>,
    /// Constant added to the propensity's linear predictor:
    /// `-0.1` for `MisSpecified`, `0` otherwise.
    pub propensity_offset: T,
}

impl<T: Scalar> ScenarioSpec<T> {
    /// Canonical scenario at dimension `d`. Custom slopes are deliberately
    /// not supported; the three processes are fixed.
    pub fn new(kind: ScenarioKind, dimension: usize) -> Self {
        assert!(dimension >= 1, "scenario dimension must be at least 1");
        let coord = T::of(0.5) / T::from_count(dimension).sqrt();
        let offset = match kind {
            ScenarioKind::MisSpecified => T::of(-0.1),
            _ => T::zero(),
        };
        ScenarioSpec {
            kind,
            dimension,
            beta_star: vec![coord; dimension],
            propensity_offset: offset,
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::InvalidArgument(format!(
                "covariate length {} does not match scenario dimension {}",
                x.len(),
                self.dimension
            )));
        }
        Ok(())
    }

    /// Projection of `x` onto the unit direction `ones/sqrt(d)` that both
    /// outcome models are built from.
    fn unit_projection(&self, x: &[T]) -> T {
        let scale = T::one() / T::from_count(self.dimension).sqrt();
        let mut acc = T::zero();
        for &v in x {
            acc += v;
        }
        acc * scale
    }
}

/// True propensity `P(A=1 | X=x)` for a scenario.
pub fn true_propensity<T: Scalar>(spec: &ScenarioSpec<T>, x: &[T]) -> Result<T> {
    spec.check_dim(x)?;
    Ok(link(dot(x, &spec.beta_star) + spec.propensity_offset))
}

/// Potential outcome `Y(a)` at covariate `x`. All scenarios have `Y(0) = 0`.
pub fn true_outcome<T: Scalar>(spec: &ScenarioSpec<T>, x: &[T], a: u8) -> Result<T> {
    spec.check_dim(x)?;
    if a == 0 {
        return Ok(T::zero());
    }
    let s = spec.unit_projection(x);
    Ok(match spec.kind {
        ScenarioKind::WellSpecified | ScenarioKind::MisSpecified => s.abs(),
        ScenarioKind::ZeroBias => link(dot(x, &spec.beta_star) + spec.propensity_offset) * s,
    })
}

/// Names one reproducible random stream.
///
/// Streams with equal `(master_seed, trial_index)` are bit-identical; any
/// difference in either field yields an unrelated ChaCha key and therefore an
/// independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub trial_index: u64,
}

/// SplitMix64 finalizer; used to derive independent sub-masters from labels.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        SeedSpec {
            master_seed,
            trial_index,
        }
    }

    /// Derive an independent stream family identified by `label`, preserving
    /// the trial index. Chaining `stream` calls nests namespaces.
    pub fn stream(self, label: u64) -> Self {
        SeedSpec {
            master_seed: mix64(self.master_seed ^ mix64(label)),
            trial_index: self.trial_index,
        }
    }

    /// Same stream family, different trial counter.
    pub fn with_trial(self, trial_index: u64) -> Self {
        SeedSpec {
            master_seed: self.master_seed,
            trial_index,
        }
    }

    /// Instantiate the ChaCha generator for this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.trial_index.to_le_bytes());
        let avalanche = mix64(self.master_seed.rotate_left(32) ^ self.trial_index);
        seed[16..24].copy_from_slice(&avalanche.to_le_bytes());
        seed[24..32].copy_from_slice(&0x4950_5743_4F52_4531_u64.to_le_bytes());
        ChaCha12Rng::from_seed(seed)
    }
}

/// An i.i.d. sample of (covariates, treatment, outcome) triples — the sole
/// input to every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    covariates: Matrix<T>,
    treatments: Vec<u8>,
    outcomes: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Validate and assemble a dataset.
    pub fn new(covariates: Matrix<T>, treatments: Vec<u8>, outcomes: Vec<T>) -> Result<Self> {
        let n = covariates.rows();
        let d = covariates.cols();
        if n < 1 || d < 1 {
            return Err(Error::InvalidArgument(format!(
                "dataset must have n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if treatments.len() != n || outcomes.len() != n {
            return Err(Error::InvalidArgument(format!(
                "component lengths disagree: {n} covariate rows, {} treatments, {} outcomes",
                treatments.len(),
                outcomes.len()
            )));
        }
        if let Some(i) = treatments.iter().position(|&a| a > 1) {
            return Err(Error::InvalidArgument(format!(
                "treatment at sample {i} is {}, expected 0 or 1",
                treatments[i]
            )));
        }
        for (i, y) in outcomes.iter().enumerate() {
            if covariates.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite covariate at sample {i}"
                )));
            }
            if !y.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite outcome at sample {i}"
                )));
            }
        }
        Ok(Dataset {
            covariates,
            treatments,
            outcomes,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    /// Covariate row of sample `i`.
    pub fn covariate(&self, i: usize) -> &[T] {
        self.covariates.row(i)
    }

    pub fn covariates(&self) -> &Matrix<T> {
        &self.covariates
    }

    pub fn treatment(&self, i: usize) -> u8 {
        self.treatments[i]
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn outcome(&self, i: usize) -> T {
        self.outcomes[i]
    }

    pub fn outcomes(&self) -> &[T] {
        &self.outcomes
    }

    /// Write as CSV with header `y,a,x1,...,xd`.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e.to_string()))?;
        let mut header = vec!["y".to_string(), "a".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)
            .map_err(|e| Error::csv(path, e.to_string()))?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(2 + self.dim());
            rec.push(format!("{}", self.outcomes[i].to_f64_lossy()));
            rec.push(format!("{}", self.treatments[i]));
            for &x in self.covariate(i) {
                rec.push(format!("{}", x.to_f64_lossy()));
            }
            w.write_record(&rec)
                .map_err(|e| Error::csv(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a CSV written in the `y,a,x1,...,xd` layout.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e.to_string()))?;
        let headers = r
            .headers()
            .map_err(|e| Error::csv(path, e.to_string()))?
            .clone();
        if headers.len() < 3 || &headers[0] != "y" || &headers[1] != "a" {
            return Err(Error::csv(
                path,
                format!(
                    "expected header y,a,x1,...,xd; got '{}'",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let d = headers.len() - 2;
        for (j, name) in headers.iter().skip(2).enumerate() {
            let expected = format!("x{}", j + 1);
            if name != expected {
                return Err(Error::csv(
                    path,
                    format!(
                        "covariate column {} named '{name}', expected '{expected}'",
                        j + 3
                    ),
                ));
            }
        }
        let mut xs: Vec<T> = Vec::new();
        let mut treatments = Vec::new();
        let mut outcomes = Vec::new();
        let parse = |field: &str, line: usize| -> Result<T> {
            field.trim().parse::<f64>().map(T::of).map_err(|_| {
                Error::csv(
                    path,
                    format!("unparseable number '{field}' on data line {line}"),
                )
            })
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e.to_string()))?;
            if rec.len() != d + 2 {
                return Err(Error::csv(
                    path,
                    format!(
                        "data line {} has {} fields, expected {}",
                        line + 1,
                        rec.len(),
                        d + 2
                    ),
                ));
            }
            outcomes.push(parse(&rec[0], line + 1)?);
            let a = rec[1].trim();
            treatments.push(match a {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::csv(
                        path,
                        format!(
                            "treatment '{other}' on data line {} is not 0 or 1",
                            line + 1
                        ),
                    ))
                }
            });
            for j in 0..d {
                xs.push(parse(&rec[2 + j], line + 1)?);
            }
        }
        if outcomes.is_empty() {
            return Err(Error::csv(path, "no data rows".to_string()));
        }
        let n = outcomes.len();
        Dataset::new(Matrix::from_rows(n, d, xs), treatments, outcomes)
    }
}

/// Draw a dataset of size `n` from a scenario. Pure in `(spec, n, seed)`:
/// equal arguments reproduce the dataset bit-exactly.
pub fn generate_dataset<T: Scalar>(
    spec: &ScenarioSpec<T>,
    n: usize,
    seed: SeedSpec,
) -> Result<Dataset<T>> {
    if n < 1 {
        return Err(Error::InvalidArgument(
            "dataset size n must be at least 1".into(),
        ));
    }
    let d = spec.dimension;
    let mut rng = seed.rng();
    let mut covariates = Matrix::zeros(n, d);
    let mut treatments = vec![0u8; n];
    let mut outcomes = vec![T::zero(); n];
    for i in 0..n {
        // fixed draw order per sample: d covariates, then the treatment coin
        let row = covariates.row_mut(i);
        for v in row.iter_mut() {
            *v = T::standard_normal(&mut rng);
        }
        let p = link(dot(row, &spec.beta_star) + spec.propensity_offset);
        let treated = T::standard_uniform(&mut rng) < p;
        treatments[i] = treated as u8;
        if treated {
            outcomes[i] = true_outcome(spec, covariates.row(i), 1)?;
        }
    }
    Dataset::new(covariates, treatments, outcomes)
}

/// True average treatment effect `E[Y(1) - Y(0)]` for a scenario.
///
/// `WellSpecified` has the closed form `sqrt(2/pi)` (mean of a half-normal)
/// and returns it exactly. The other scenarios are integrated by Monte
/// Carlo. Both outcome models depend on the covariates only through
/// `s = <x, ones/sqrt(d)> ~ N(0,1)`, and the propensity's linear predictor is
/// `s/2`, so the integral reduces to one dimension regardless of `d`:
/// ZeroBias averages `link(s/2) * s`, MisSpecified averages `|s|`.
pub fn true_tau<T: Scalar>(spec: &ScenarioSpec<T>, mc_samples: usize, seed: SeedSpec) -> T {
    match spec.kind {
        ScenarioKind::WellSpecified => T::of((2.0 / std::f64::consts::PI).sqrt()),
        ScenarioKind::ZeroBias | ScenarioKind::MisSpecified => {
            assert!(mc_samples >= 1, "true_tau needs at least one MC sample");
            let mut rng = seed.rng();
            let mut acc = T::zero();
            for _ in 0..mc_samples {
                let s = T::standard_normal(&mut rng);
                acc += match spec.kind {
                    ScenarioKind::ZeroBias => link(s * T::of(0.5)) * s,
                    _ => s.abs(),
                };
            }
            acc / T::from_count(mc_samples)
        }
    }
}
