//! Variance estimation, t-statistics, and confidence intervals.
//!
//! The variance estimator for the IPW family is the sample second moment of
//! the estimated influence function
//!
//! ```text
//! A_i Y_i / pi_i - (1 - A_i) Y_i / (1 - pi_i) - tau - (A_i - pi_i) (theta1 + theta0)^T Jinv X_i
//! ```
//!
//! whose last term captures the first-order effect of estimating the
//! propensity coefficients; without it, intervals built on estimated
//! propensities would be conservative. Each method centers the influence
//! function at its own point estimate.
//!
//! For the Hájek family the same structure is applied after centering the
//! outcomes of each arm at its fitted weighted mean (Hájek estimators are
//! location-invariant, so their dispersion is driven by the centered
//! outcomes); the projection vectors are recomputed from the centered
//! outcomes and no further centering constant is needed.
//!
//! Intervals are fixed at the 95% level with the normal quantile 1.96
//! hard-coded, matching the reporting convention of the simulation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate_projections, fitted_propensities, hajek_sums, DebiasArtifacts};
use crate::linalg::dot;
use crate::logistic::LogisticFit;
use crate::scalar::Scalar;

/// Two-sided 95% normal quantile used for every interval and coverage check.
pub const GAUSSIAN_95: f64 = 1.96;

/// The five reportable estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "ipw")]
    IPW,
    #[serde(rename = "debias")]
    DebiasedIPW,
    #[serde(rename = "hajek")]
    Hajek,
    #[serde(rename = "hajek-debias")]
    DebiasedHajek,
}

impl Method {
    /// Every method, in the fixed reporting order.
    pub const ALL: [Method; 5] = [
        Method::Oracle,
        Method::IPW,
        Method::DebiasedIPW,
        Method::Hajek,
        Method::DebiasedHajek,
    ];

    /// Stable lowercase token used by the CLI and table output.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::IPW => "ipw",
            Method::DebiasedIPW => "debias",
            Method::Hajek => "hajek",
            Method::DebiasedHajek => "hajek-debias",
        }
    }

    /// Whether the method needs a converged propensity fit. The oracle
    /// estimator works from true propensities and survives fit failures.
    pub fn needs_fit(self) -> bool {
        !matches!(self, Method::Oracle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Method::Oracle),
            "ipw" => Ok(Method::IPW),
            "debias" => Ok(Method::DebiasedIPW),
            "hajek" => Ok(Method::Hajek),
            "hajek-debias" => Ok(Method::DebiasedHajek),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected oracle|ipw|debias|hajek|hajek-debias)"
            ))),
        }
    }
}

/// A point estimate with its variance, standard error, and 95% interval.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport<T> {
    pub method: Method,
    pub tau_hat: T,
    /// Single-summand variance estimate (the quantity whose `/n` gives the
    /// squared standard error).
    pub variance_hat: T,
    /// `sqrt(variance_hat / n)`.
    pub std_err: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n: usize,
    pub d: usize,
}

impl<T: Scalar> EstimateReport<T> {
    /// Assemble a report, deriving the standard error and interval.
    pub fn new(method: Method, tau_hat: T, variance_hat: T, n: usize, d: usize) -> Self {
        assert!(variance_hat >= T::zero(), "variance must be non-negative");
        let (ci_low, ci_high) = confidence_interval(tau_hat, variance_hat, n);
        let std_err = (variance_hat / T::from_count(n)).sqrt();
        EstimateReport {
            method,
            tau_hat,
            variance_hat,
            std_err,
            ci_low,
            ci_high,
            n,
            d,
        }
    }
}

/// Squared-residual mean of the influence function against precomputed
/// per-sample propensities and the metric-adjusted projection vector.
fn influence_variance<T: Scalar>(
    data: &Dataset<T>,
    props: &[T],
    jinv_theta_sum: &[T],
    center: T,
) -> T {
    let one = T::one();
    let mut acc = T::zero();
    for (i, &pi) in props.iter().enumerate() {
        let y = data.outcome(i);
        let a = T::from_count(data.treatment(i) as usize);
        let weighted = if data.treatment(i) == 1 {
            y / pi
        } else {
            -y / (one - pi)
        };
        let adjustment = (a - pi) * dot(jinv_theta_sum, data.covariate(i));
        let g = weighted - center - adjustment;
        acc += g * g;
    }
    acc / T::from_count(data.n())
}

/// Variance estimate for the IPW family (plug-in and debiased), centered at
/// `tau_center` — the reporting method's own point estimate.
pub fn variance_ipw_family<T: Scalar>(
    data: &Dataset<T>,
    art: &DebiasArtifacts<T>,
    tau_center: T,
) -> Result<T> {
    let props = fitted_propensities(data, &art.fit)?;
    let theta_sum: Vec<T> = art
        .projections
        .theta1_hat
        .iter()
        .zip(&art.projections.theta0_hat)
        .map(|(&a, &b)| a + b)
        .collect();
    let jinv_theta_sum = art.fisher_inv.mul_vec(&theta_sum);
    Ok(influence_variance(
        data,
        &props,
        &jinv_theta_sum,
        tau_center,
    ))
}

/// Variance estimate for the oracle estimator: the plain squared-residual
/// mean without the propensity-estimation adjustment, evaluated at the
/// fitted propensities per the simulation protocol.
pub fn variance_oracle<T: Scalar>(
    data: &Dataset<T>,
    fit: &LogisticFit<T>,
    tau_true_hat: T,
) -> Result<T> {
    let props = fitted_propensities(data, fit)?;
    Ok(variance_oracle_with_propensities(
        data,
        &props,
        tau_true_hat,
    ))
}

/// Oracle variance against an explicit propensity vector; used directly by
/// the harness when no converged fit is available.
pub(crate) fn variance_oracle_with_propensities<T: Scalar>(
    data: &Dataset<T>,
    props: &[T],
    tau_center: T,
) -> T {
    let zeros = vec![T::zero(); data.dim()];
    influence_variance(data, props, &zeros, tau_center)
}

/// Variance estimate for the Hájek family (plain and debiased).
///
/// Outcomes are centered at the fitted Hájek mean of their own arm, the
/// projection vectors are recomputed from the centered outcomes, and the
/// influence function needs no further centering (the centered Hájek
/// residuals already have weighted mean zero by construction).
pub fn variance_hajek_family<T: Scalar>(data: &Dataset<T>, art: &DebiasArtifacts<T>) -> Result<T> {
    let props = fitted_propensities(data, &art.fit)?;
    let sums = hajek_sums(data, &props);
    sums.check_arms()?;
    let mu1 = sums.y1 / sums.w1;
    let mu0 = sums.y0 / sums.w0;
    let centered_outcomes: Vec<T> = (0..data.n())
        .map(|i| data.outcome(i) - if data.treatment(i) == 1 { mu1 } else { mu0 })
        .collect();
    let centered = Dataset::new(
        data.covariates().clone(),
        data.treatments().to_vec(),
        centered_outcomes,
    )?;
    let proj = estimate_projections(&centered, &art.fit)?;
    let theta_sum: Vec<T> = proj
        .theta1_hat
        .iter()
        .zip(&proj.theta0_hat)
        .map(|(&a, &b)| a + b)
        .collect();
    let jinv_theta_sum = art.fisher_inv.mul_vec(&theta_sum);
    Ok(influence_variance(
        &centered,
        &props,
        &jinv_theta_sum,
        T::zero(),
    ))
}

/// 95% confidence interval `tau_hat ± 1.96 * sqrt(variance_hat / n)`.
/// The level is fixed; there is deliberately no quantile parameter.
pub fn confidence_interval<T: Scalar>(tau_hat: T, variance_hat: T, n: usize) -> (T, T) {
    assert!(n >= 1, "confidence interval needs n >= 1");
    assert!(variance_hat >= T::zero(), "variance must be non-negative");
    let sigma = (variance_hat / T::from_count(n)).sqrt();
    let half_width = T::of(GAUSSIAN_95) * sigma;
    (tau_hat - half_width, tau_hat + half_width)
}

/// Studentized deviation `(tau_hat - tau_star) / sigma_hat`.
pub fn t_statistic<T: Scalar>(tau_hat: T, tau_star: T, sigma_hat: T) -> Result<T> {
    if sigma_hat <= T::zero() {
        return Err(Error::DegenerateDenominator {
            value: sigma_hat.to_f64_lossy(),
            tolerance: 0.0,
        });
    }
    Ok((tau_hat - tau_star) / sigma_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, ScenarioKind, ScenarioSpec, SeedSpec};
    use crate::estimators::{debiased_ipw, BiasEstimates, ProjectionEstimates};
    use crate::linalg::Matrix;
    use approx::assert_relative_eq;

    fn synthetic_fit(beta: Vec<f64>) -> LogisticFit<f64> {
        LogisticFit {
            beta_hat: beta,
            iterations: 0,
            final_score_norm: 0.0,
            converged: true,
        }
    }

    fn artifacts_1d(beta: f64, fisher_inv: f64, theta1: f64, theta0: f64) -> DebiasArtifacts<f64> {
        DebiasArtifacts {
            fit: synthetic_fit(vec![beta]),
            fisher_inv: Matrix::from_rows(1, 1, vec![fisher_inv]),
            projections: ProjectionEstimates {
                theta1_hat: vec![theta1],
                theta0_hat: vec![theta0],
            },
            biases: BiasEstimates {
                b1_hat: 0.0,
                b0_hat: 0.0,
            },
            tau_ipw: 0.0,
            tau_debias: 0.0,
        }
    }

    #[test]
    fn methods_parse_and_print_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn variance_is_zero_for_zero_outcomes_and_projections() {
        let data = Dataset::new(
            Matrix::from_rows(3, 1, vec![0.5, -1.0, 2.0]),
            vec![1, 0, 1],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap();
        let art = artifacts_1d(0.2, 4.0, 0.0, 0.0);
        assert_eq!(variance_ipw_family(&data, &art, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn variance_matches_single_sample_algebra() {
        // n=1, A=1, Y=2, pi = 1/2, theta1+theta0 = 4 under Jinv = 2 gives
        // adjustment (1 - 1/2) * 4 * 2 = 4, so the summand is (4 - c - 4)^2
        let data = Dataset::new(Matrix::from_rows(1, 1, vec![1.0]), vec![1], vec![2.0]).unwrap();
        let art = artifacts_1d(0.0, 2.0, 3.0, 1.0);
        let c = 0.7;
        let v = variance_ipw_family(&data, &art, c).unwrap();
        assert_relative_eq!(v, c * c, max_relative = 1e-14);
    }

    #[test]
    fn variance_matches_direct_summation() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data = generate_dataset(&spec, 120, SeedSpec::new(41, 0)).unwrap();
        let art = debiased_ipw(&data).unwrap();
        let v = variance_ipw_family(&data, &art, art.tau_ipw).unwrap();

        let mut acc = 0.0;
        for i in 0..data.n() {
            let x = data.covariate(i);
            let pi = crate::logistic::link(dot(x, &art.fit.beta_hat));
            let a = data.treatment(i) as f64;
            let y = data.outcome(i);
            let jx = art.fisher_inv.mul_vec(x);
            let t = dot(&art.projections.theta1_hat, &jx) + dot(&art.projections.theta0_hat, &jx);
            let g = a * y / pi - (1.0 - a) * y / (1.0 - pi) - art.tau_ipw - (a - pi) * t;
            acc += g * g;
        }
        assert_relative_eq!(v, acc / 120.0, max_relative = 1e-12);
    }

    #[test]
    fn variance_oracle_vanishes_for_constant_summands() {
        // all treated with Y_i = 2 pi_i makes every summand exactly 2
        let xs = vec![0.4, -0.3, 1.1, 0.0];
        let beta = 0.3;
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 2.0 * crate::logistic::link(beta * x))
            .collect();
        let data = Dataset::new(Matrix::from_rows(4, 1, xs), vec![1, 1, 1, 1], ys).unwrap();
        let v = variance_oracle(&data, &synthetic_fit(vec![beta]), 2.0).unwrap();
        assert!(v <= 1e-28, "variance of a constant must vanish, got {v}");
    }

    #[test]
    fn variance_oracle_matches_direct_summation() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::MisSpecified, 2);
        let data = generate_dataset(&spec, 90, SeedSpec::new(42, 0)).unwrap();
        let fit = crate::logistic::fit_mle(&data).unwrap();
        let center = 0.55;
        let v = variance_oracle(&data, &fit, center).unwrap();

        let mut acc = 0.0;
        for i in 0..data.n() {
            let pi = crate::logistic::link(dot(data.covariate(i), &fit.beta_hat));
            let a = data.treatment(i) as f64;
            let y = data.outcome(i);
            let g = a * y / pi - (1.0 - a) * y / (1.0 - pi) - center;
            acc += g * g;
        }
        assert_relative_eq!(v, acc / 90.0, max_relative = 1e-12);
    }

    #[test]
    fn ipw_variance_reduces_to_oracle_when_projections_cancel() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 2);
        let data = generate_dataset(&spec, 50, SeedSpec::new(43, 0)).unwrap();
        let fit = crate::logistic::fit_mle(&data).unwrap();
        let mut art = debiased_ipw(&data).unwrap();
        // force theta1 = -theta0 so the adjustment term vanishes identically
        art.projections.theta0_hat = art.projections.theta1_hat.iter().map(|&v| -v).collect();
        let center = 0.3;
        let v_family = variance_ipw_family(&data, &art, center).unwrap();
        let v_oracle = variance_oracle(&data, &fit, center).unwrap();
        assert_relative_eq!(v_family, v_oracle, max_relative = 1e-12);
    }

    #[test]
    fn hajek_variance_is_positive_and_shift_invariant() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 2);
        let data = generate_dataset(&spec, 150, SeedSpec::new(44, 0)).unwrap();
        let art = debiased_ipw(&data).unwrap();
        let v = variance_hajek_family(&data, &art).unwrap();
        assert!(v > 0.0);

        let shifted_y: Vec<f64> = data.outcomes().iter().map(|&y| y + 40.0).collect();
        let shifted = Dataset::new(
            data.covariates().clone(),
            data.treatments().to_vec(),
            shifted_y,
        )
        .unwrap();
        let v_shift = variance_hajek_family(&shifted, &art).unwrap();
        assert_relative_eq!(v, v_shift, max_relative = 1e-9);
    }

    #[test]
    fn confidence_interval_matches_hand_values() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 100);
        assert_relative_eq!(lo, -0.196, max_relative = 1e-12);
        assert_relative_eq!(hi, 0.196, max_relative = 1e-12);

        let (lo, hi) = confidence_interval(5.0, 0.0, 7);
        assert_eq!((lo, hi), (5.0, 5.0));

        let (lo, hi) = confidence_interval(2.0, 4.0, 16);
        assert_relative_eq!(lo, 1.02, max_relative = 1e-12);
        assert_relative_eq!(hi, 2.98, max_relative = 1e-12);
    }

    #[test]
    fn t_statistic_matches_hand_values() {
        assert_eq!(t_statistic(2.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(t_statistic(3.0, 1.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(
            t_statistic(0.0, 1.96, 1.0).unwrap(),
            -1.96,
            max_relative = 1e-15
        );
    }

    #[test]
    fn t_statistic_rejects_zero_sigma() {
        assert!(matches!(
            t_statistic(1.0, 0.0, 0.0),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn report_satisfies_interval_invariants() {
        let r = EstimateReport::new(Method::IPW, 0.8, 2.5, 400, 6);
        assert!(r.ci_low <= r.tau_hat && r.tau_hat <= r.ci_high);
        assert_relative_eq!(
            r.ci_high - r.ci_low,
            2.0 * GAUSSIAN_95 * r.std_err,
            max_relative = 1e-12
        );
        assert_relative_eq!(r.std_err, (2.5f64 / 400.0).sqrt(), max_relative = 1e-15);
        assert_eq!((r.n, r.d), (400, 6));
    }

    #[test]
    fn report_serializes_method_token() {
        let r = EstimateReport::new(Method::DebiasedHajek, 0.1, 1.0, 10, 2);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"hajek-debias\""), "json: {json}");
    }
}
