//! Point estimators of the average treatment effect.
//!
//! Five estimators share one weighting idea: reweight observed outcomes by
//! inverse (estimated or true) propensities so each treatment arm represents
//! the full population.
//!
//! * [`oracle_ipw`] — weights by supplied true propensities.
//! * [`ipw`] — plug-in version weighting by fitted propensities.
//! * [`debiased_ipw`] — subtracts an estimate of the plug-in estimator's
//!   second-order bias, which grows with the covariate dimension and is the
//!   dominant error term when `d^(3/2)` is not small against `sqrt(n)`.
//! * [`hajek`] — ratio-normalized (self-weighted) variant, invariant to
//!   shifting all outcomes by a constant.
//! * [`debiased_hajek`] — the same bias correction applied separately to the
//!   numerator and denominator of each Hájek ratio.
//!
//! Every stage is computed on the full sample — there is no sample
//! splitting — and all Stage III quantities are evaluated at the same fitted
//! coefficients and Fisher matrix as the point estimate they correct.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::logistic::{empirical_fisher, fisher_inverse, fit_mle, link, LogisticFit};
use crate::scalar::Scalar;

/// Sample analogues of the two population projections the bias correction is
/// built from.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionEstimates<T> {
    /// `theta1_hat = (1/n) * sum_i A_i Y_i X_i (1 - pi_i) / pi_i`.
    pub theta1_hat: Vec<T>,
    /// `theta0_hat = (1/n) * sum_i (1 - A_i) Y_i X_i pi_i / (1 - pi_i)`.
    pub theta0_hat: Vec<T>,
}

/// Estimated second-order bias contributions of the two treatment arms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BiasEstimates<T> {
    pub b1_hat: T,
    pub b0_hat: T,
}

/// Everything produced by the debiasing pipeline, kept together because the
/// variance estimator downstream reuses the same fitted objects.
#[derive(Debug, Clone, Serialize)]
pub struct DebiasArtifacts<T> {
    pub fit: LogisticFit<T>,
    /// Inverse of the empirical Fisher matrix at the fitted coefficients.
    pub fisher_inv: Matrix<T>,
    pub projections: ProjectionEstimates<T>,
    pub biases: BiasEstimates<T>,
    /// Plug-in estimate before bias correction.
    pub tau_ipw: T,
    /// `tau_ipw - (b1_hat - b0_hat) / n`.
    pub tau_debias: T,
}

/// Fitted propensities for every sample, rejecting any that has saturated at
/// 0 or 1 (its inverse weight would be infinite).
pub(crate) fn fitted_propensities<T: Scalar>(
    data: &Dataset<T>,
    fit: &LogisticFit<T>,
) -> Result<Vec<T>> {
    if !fit.converged {
        return Err(Error::InvalidArgument(
            "estimator requested for a non-converged fit".to_string(),
        ));
    }
    if fit.beta_hat.len() != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "fit has {} coefficients but the dataset has dimension {}",
            fit.beta_hat.len(),
            data.dim()
        )));
    }
    let mut props = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let pi = link(dot(data.covariate(i), &fit.beta_hat));
        if pi <= T::zero() || pi >= T::one() {
            return Err(Error::DegeneratePropensity {
                index: i,
                value: pi.to_f64_lossy(),
            });
        }
        props.push(pi);
    }
    Ok(props)
}

/// The common weighted-difference form shared by the oracle and plug-in
/// estimators; both call this so that equal propensity vectors produce
/// bit-identical estimates.
fn ipw_with_propensities<T: Scalar>(data: &Dataset<T>, props: &[T]) -> T {
    let mut acc = T::zero();
    for (i, &pi) in props.iter().enumerate() {
        let y = data.outcome(i);
        acc += if data.treatment(i) == 1 {
            y / pi
        } else {
            -y / (T::one() - pi)
        };
    }
    acc / T::from_count(data.n())
}

/// IPW estimate weighted by externally supplied true propensities:
/// `(1/n) * sum_i [A_i Y_i / pi_i - (1 - A_i) Y_i / (1 - pi_i)]`.
pub fn oracle_ipw<T: Scalar>(data: &Dataset<T>, true_props: &[T]) -> Result<T> {
    if true_props.len() != data.n() {
        return Err(Error::InvalidArgument(format!(
            "{} propensities supplied for {} samples",
            true_props.len(),
            data.n()
        )));
    }
    for (i, &p) in true_props.iter().enumerate() {
        if !(p > T::zero() && p < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "true propensity at sample {i} is {}, must lie strictly inside (0,1)",
                p.to_f64_lossy()
            )));
        }
    }
    Ok(ipw_with_propensities(data, true_props))
}

/// Plug-in IPW estimate: the oracle formula with fitted propensities
/// `link(<X_i, beta_hat>)`.
pub fn ipw<T: Scalar>(data: &Dataset<T>, fit: &LogisticFit<T>) -> Result<T> {
    let props = fitted_propensities(data, fit)?;
    Ok(ipw_with_propensities(data, &props))
}

/// Sample projections `theta1_hat`, `theta0_hat` evaluated at the fitted
/// propensities.
pub fn estimate_projections<T: Scalar>(
    data: &Dataset<T>,
    fit: &LogisticFit<T>,
) -> Result<ProjectionEstimates<T>> {
    let props = fitted_propensities(data, fit)?;
    let d = data.dim();
    let mut theta1 = vec![T::zero(); d];
    let mut theta0 = vec![T::zero(); d];
    for (i, &pi) in props.iter().enumerate() {
        let x = data.covariate(i);
        let y = data.outcome(i);
        if data.treatment(i) == 1 {
            let w = y * (T::one() - pi) / pi;
            for j in 0..d {
                theta1[j] += w * x[j];
            }
        } else {
            let w = y * pi / (T::one() - pi);
            for j in 0..d {
                theta0[j] += w * x[j];
            }
        }
    }
    let inv_n = T::one() / T::from_count(data.n());
    for j in 0..d {
        theta1[j] *= inv_n;
        theta0[j] *= inv_n;
    }
    Ok(ProjectionEstimates {
        theta1_hat: theta1,
        theta0_hat: theta0,
    })
}

/// Arm-wise bias estimates:
///
/// ```text
/// b1_hat = (1/2n) * sum_i { Y_i A_i / pi_i - pi_i <theta1, X_i>_Jinv }
///                         * (1 - pi_i) (2 pi_i - 1) ||X_i||^2_Jinv
/// b0_hat = (1/2n) * sum_i { Y_i (1 - A_i) / (1 - pi_i) + (1 - pi_i) <theta0, X_i>_Jinv }
///                         * pi_i (2 pi_i - 1) ||X_i||^2_Jinv
/// ```
///
/// where `<v, x>_Jinv = v^T Jinv x` and `||x||^2_Jinv = x^T Jinv x` are taken
/// in the inverse-Fisher metric.
pub fn estimate_biases<T: Scalar>(
    data: &Dataset<T>,
    fit: &LogisticFit<T>,
    fisher_inv: &Matrix<T>,
    proj: &ProjectionEstimates<T>,
) -> Result<BiasEstimates<T>> {
    let d = data.dim();
    if fisher_inv.rows() != d || fisher_inv.cols() != d {
        return Err(Error::InvalidArgument(format!(
            "inverse Fisher matrix is {}x{}, expected {d}x{d}",
            fisher_inv.rows(),
            fisher_inv.cols()
        )));
    }
    if proj.theta1_hat.len() != d || proj.theta0_hat.len() != d {
        return Err(Error::InvalidArgument(
            "projection estimates do not match the covariate dimension".to_string(),
        ));
    }
    let props = fitted_propensities(data, fit)?;
    // hoist the metric products with the fixed projection vectors
    let jinv_theta1 = fisher_inv.mul_vec(&proj.theta1_hat);
    let jinv_theta0 = fisher_inv.mul_vec(&proj.theta0_hat);
    let one = T::one();
    let two = T::of(2.0);
    let mut b1 = T::zero();
    let mut b0 = T::zero();
    for (i, &pi) in props.iter().enumerate() {
        let x = data.covariate(i);
        let y = data.outcome(i);
        let x_norm_sq = fisher_inv.quad_form(x);
        let skew = (two * pi - one) * x_norm_sq;
        let t1 = dot(&jinv_theta1, x);
        let t0 = dot(&jinv_theta0, x);
        let y1 = if data.treatment(i) == 1 {
            y / pi
        } else {
            T::zero()
        };
        let y0 = if data.treatment(i) == 0 {
            y / (one - pi)
        } else {
            T::zero()
        };
        b1 += (y1 - pi * t1) * (one - pi) * skew;
        b0 += (y0 + (one - pi) * t0) * pi * skew;
    }
    let scale = one / (two * T::from_count(data.n()));
    Ok(BiasEstimates {
        b1_hat: b1 * scale,
        b0_hat: b0 * scale,
    })
}

/// Full debiasing pipeline on one dataset: fit the propensity model, form
/// the plug-in estimate, then estimate and subtract its second-order bias.
pub fn debiased_ipw<T: Scalar>(data: &Dataset<T>) -> Result<DebiasArtifacts<T>> {
    if data.n() < data.dim() + 1 {
        log::warn!(
            "debiasing with n = {} below d + 1 = {}; the Fisher matrix is likely singular",
            data.n(),
            data.dim() + 1
        );
    }
    let fit = fit_mle(data)?;
    let tau_ipw = ipw(data, &fit)?;
    let fisher = empirical_fisher(data, &fit)?;
    let fisher_inv = fisher_inverse(&fisher)?;
    let projections = estimate_projections(data, &fit)?;
    let biases = estimate_biases(data, &fit, &fisher_inv, &projections)?;
    let tau_debias = tau_ipw - (biases.b1_hat - biases.b0_hat) / T::from_count(data.n());
    Ok(DebiasArtifacts {
        fit,
        fisher_inv,
        projections,
        biases,
        tau_ipw,
        tau_debias,
    })
}

/// Ratio-normalized IPW estimate:
///
/// ```text
/// sum_i A_i Y_i / pi_i       sum_i (1 - A_i) Y_i / (1 - pi_i)
/// --------------------   -   --------------------------------
/// sum_i A_i / pi_i            sum_i (1 - A_i) / (1 - pi_i)
/// ```
pub fn hajek<T: Scalar>(data: &Dataset<T>, fit: &LogisticFit<T>) -> Result<T> {
    let props = fitted_propensities(data, fit)?;
    let sums = hajek_sums(data, &props);
    sums.check_arms()?;
    Ok(sums.y1 / sums.w1 - sums.y0 / sums.w0)
}

/// Per-arm weighted sums underlying the Hájek ratios, as means over the full
/// sample (numerators `y*`, denominators `w*`).
pub(crate) struct HajekSums<T> {
    pub(crate) y1: T,
    pub(crate) w1: T,
    pub(crate) y0: T,
    pub(crate) w0: T,
    treated: usize,
    controls: usize,
}

impl<T: Scalar> HajekSums<T> {
    pub(crate) fn check_arms(&self) -> Result<()> {
        if self.treated == 0 {
            return Err(Error::DegenerateArm("no treated samples".to_string()));
        }
        if self.controls == 0 {
            return Err(Error::DegenerateArm("no control samples".to_string()));
        }
        Ok(())
    }
}

pub(crate) fn hajek_sums<T: Scalar>(data: &Dataset<T>, props: &[T]) -> HajekSums<T> {
    let mut s = HajekSums {
        y1: T::zero(),
        w1: T::zero(),
        y0: T::zero(),
        w0: T::zero(),
        treated: 0,
        controls: 0,
    };
    for (i, &pi) in props.iter().enumerate() {
        let y = data.outcome(i);
        if data.treatment(i) == 1 {
            s.y1 += y / pi;
            s.w1 += T::one() / pi;
            s.treated += 1;
        } else {
            s.y0 += y / (T::one() - pi);
            s.w0 += T::one() / (T::one() - pi);
            s.controls += 1;
        }
    }
    let inv_n = T::one() / T::from_count(data.n());
    s.y1 *= inv_n;
    s.w1 *= inv_n;
    s.y0 *= inv_n;
    s.w0 *= inv_n;
    s
}

/// Debiased Hájek estimate computed from an existing artifact bundle (which
/// must have been produced from the same dataset).
///
/// The numerator of each ratio is corrected by the arm's bias estimate; the
/// denominator is corrected by the analogous bias estimate with every
/// outcome replaced by 1, obtained by literally rerunning the projection and
/// bias formulas on an outcome-one copy of the data.
pub fn debiased_hajek_from_artifacts<T: Scalar>(
    data: &Dataset<T>,
    art: &DebiasArtifacts<T>,
) -> Result<T> {
    let props = fitted_propensities(data, &art.fit)?;
    let sums = hajek_sums(data, &props);
    sums.check_arms()?;

    let ones = Dataset::new(
        data.covariates().clone(),
        data.treatments().to_vec(),
        vec![T::one(); data.n()],
    )?;
    let proj_one = estimate_projections(&ones, &art.fit)?;
    let biases_one = estimate_biases(&ones, &art.fit, &art.fisher_inv, &proj_one)?;

    let inv_n = T::one() / T::from_count(data.n());
    let den1 = sums.w1 - biases_one.b1_hat * inv_n;
    let den0 = sums.w0 - biases_one.b0_hat * inv_n;
    let tol = T::of(1e-12);
    for den in [den1, den0] {
        if den.abs() <= tol {
            return Err(Error::DegenerateDenominator {
                value: den.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
    }
    let num1 = sums.y1 - art.biases.b1_hat * inv_n;
    let num0 = sums.y0 - art.biases.b0_hat * inv_n;
    Ok(num1 / den1 - num0 / den0)
}

/// Debiased Hájek estimate from scratch: runs the full debiasing pipeline and
/// applies the numerator/denominator corrections.
pub fn debiased_hajek<T: Scalar>(data: &Dataset<T>) -> Result<T> {
    let art = debiased_ipw(data)?;
    debiased_hajek_from_artifacts(data, &art)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, ScenarioKind, ScenarioSpec, SeedSpec};
    use approx::assert_relative_eq;

    fn dataset(xs: Vec<f64>, d: usize, a: Vec<u8>, y: Vec<f64>) -> Dataset<f64> {
        let n = a.len();
        Dataset::new(Matrix::from_rows(n, d, xs), a, y).unwrap()
    }

    fn synthetic_fit(beta: Vec<f64>) -> LogisticFit<f64> {
        LogisticFit {
            beta_hat: beta,
            iterations: 0,
            final_score_norm: 0.0,
            converged: true,
        }
    }

    /// Four-sample design whose MLE is exactly beta = 0 (score vanishes at 0
    /// by symmetry), so every fitted propensity is 1/2.
    fn balanced_half_dataset() -> Dataset<f64> {
        dataset(
            vec![1.0, 1.0, -1.0, -1.0],
            1,
            vec![1, 0, 1, 0],
            vec![2.0, 4.0, 1.0, 3.0],
        )
    }

    #[test]
    fn oracle_ipw_matches_hand_values() {
        let d1 = dataset(vec![0.0, 0.0], 1, vec![1, 0], vec![2.0, 4.0]);
        assert_relative_eq!(
            oracle_ipw(&d1, &[0.5, 0.5]).unwrap(),
            -2.0,
            max_relative = 1e-15
        );

        let d2 = dataset(vec![0.0], 1, vec![1], vec![3.0]);
        assert_relative_eq!(
            oracle_ipw(&d2, &[0.25]).unwrap(),
            12.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn oracle_ipw_with_all_treated_is_weighted_mean() {
        let eps = 1e-3;
        let d = dataset(vec![0.0, 0.0, 0.0], 1, vec![1, 1, 1], vec![1.0, 2.0, 3.0]);
        let p = 1.0 - eps;
        let tau = oracle_ipw(&d, &[p, p, p]).unwrap();
        assert_relative_eq!(tau, (1.0 + 2.0 + 3.0) / (3.0 * p), max_relative = 1e-14);
    }

    #[test]
    fn oracle_ipw_rejects_boundary_propensities() {
        let d = dataset(vec![0.0, 0.0], 1, vec![1, 0], vec![1.0, 1.0]);
        assert!(matches!(
            oracle_ipw(&d, &[0.0, 0.5]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            oracle_ipw(&d, &[0.5, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(oracle_ipw(&d, &[0.5, 0.5]).is_ok());
    }

    #[test]
    fn ipw_matches_hand_value_at_half_propensities() {
        let d = dataset(vec![3.0, -1.0], 1, vec![1, 0], vec![2.0, 4.0]);
        // beta = 0 makes every fitted propensity 1/2
        let tau = ipw(&d, &synthetic_fit(vec![0.0])).unwrap();
        assert_relative_eq!(tau, -2.0, max_relative = 1e-15);
    }

    #[test]
    fn ipw_at_true_slope_equals_oracle_exactly() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data = generate_dataset(&spec, 200, SeedSpec::new(21, 0)).unwrap();
        let props: Vec<f64> = (0..data.n())
            .map(|i| crate::data::true_propensity(&spec, data.covariate(i)).unwrap())
            .collect();
        let fitted = ipw(&data, &synthetic_fit(spec.beta_star.clone())).unwrap();
        let oracle = oracle_ipw(&data, &props).unwrap();
        assert_eq!(
            fitted, oracle,
            "identical propensity evaluations must agree bit-exactly"
        );
    }

    #[test]
    fn single_treated_sample_returns_inverse_weighted_outcome() {
        let d = dataset(vec![2.0 * 3.0f64.ln()], 1, vec![1], vec![3.0]);
        // beta = 1/2 puts the propensity at 3/4
        let tau = ipw(&d, &synthetic_fit(vec![0.5])).unwrap();
        assert_relative_eq!(tau, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn projections_match_single_sample_hand_value() {
        let d = dataset(vec![1.0], 1, vec![1], vec![2.0]);
        let proj = estimate_projections(&d, &synthetic_fit(vec![0.0])).unwrap();
        assert_relative_eq!(proj.theta1_hat[0], 2.0, max_relative = 1e-15);
        assert_eq!(proj.theta0_hat[0], 0.0);
    }

    #[test]
    fn projections_vanish_for_zero_outcomes() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 2);
        let base = generate_dataset(&spec, 50, SeedSpec::new(22, 0)).unwrap();
        let zeroed = Dataset::new(
            base.covariates().clone(),
            base.treatments().to_vec(),
            vec![0.0; 50],
        )
        .unwrap();
        let proj = estimate_projections(&zeroed, &synthetic_fit(vec![0.3, -0.2])).unwrap();
        assert!(proj.theta1_hat.iter().all(|&v| v == 0.0));
        assert!(proj.theta0_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projections_match_direct_summation() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::MisSpecified, 3);
        let data = generate_dataset(&spec, 80, SeedSpec::new(23, 0)).unwrap();
        let fit = fit_mle(&data).unwrap();
        let proj = estimate_projections(&data, &fit).unwrap();

        // independent re-evaluation, one coordinate at a time
        for j in 0..3 {
            let mut t1 = 0.0;
            let mut t0 = 0.0;
            for i in 0..data.n() {
                let pi = link(dot(data.covariate(i), &fit.beta_hat));
                let x = data.covariate(i)[j];
                let y = data.outcome(i);
                if data.treatment(i) == 1 {
                    t1 += y * x * (1.0 - pi) / pi;
                } else {
                    t0 += y * x * pi / (1.0 - pi);
                }
            }
            assert_relative_eq!(proj.theta1_hat[j], t1 / 80.0, max_relative = 1e-12);
            assert_relative_eq!(proj.theta0_hat[j], t0 / 80.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn biases_vanish_when_propensities_are_half() {
        let data = balanced_half_dataset();
        let fit = fit_mle(&data).unwrap();
        assert_eq!(
            fit.beta_hat[0], 0.0,
            "symmetric design must fit beta = 0 exactly"
        );
        let fisher_inv = fisher_inverse(&empirical_fisher(&data, &fit).unwrap()).unwrap();
        let proj = estimate_projections(&data, &fit).unwrap();
        let biases = estimate_biases(&data, &fit, &fisher_inv, &proj).unwrap();
        assert_eq!(biases.b1_hat, 0.0, "factor (2 pi - 1) must kill every term");
        assert_eq!(biases.b0_hat, 0.0);
    }

    #[test]
    fn biases_match_single_sample_hand_value() {
        // n=1, A=1, Y=1, X=(1), pi = 3/4: theta1 = 1/3, J = 3/16, and the
        // bracket 1/pi - pi * theta1 * Jinv = 4/3 - (3/4)(1/3)(16/3) cancels
        // exactly, so b1 = 0; with no controls theta0 = 0 forces b0 = 0 too
        let data = dataset(vec![1.0], 1, vec![1], vec![1.0]);
        let fit = synthetic_fit(vec![3.0f64.ln()]);
        let fisher_inv = fisher_inverse(&empirical_fisher(&data, &fit).unwrap()).unwrap();
        assert_relative_eq!(fisher_inv[(0, 0)], 16.0 / 3.0, max_relative = 1e-14);
        let proj = estimate_projections(&data, &fit).unwrap();
        assert_relative_eq!(proj.theta1_hat[0], 1.0 / 3.0, max_relative = 1e-14);
        let biases = estimate_biases(&data, &fit, &fisher_inv, &proj).unwrap();
        assert!(biases.b1_hat.abs() < 1e-14, "b1 = {}", biases.b1_hat);
        assert_eq!(biases.b0_hat, 0.0);
    }

    #[test]
    fn biases_match_direct_summation() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data = generate_dataset(&spec, 120, SeedSpec::new(24, 0)).unwrap();
        let art = debiased_ipw(&data).unwrap();

        // independent re-evaluation with explicit matrix-vector products
        let jinv = &art.fisher_inv;
        let n = data.n();
        let mut b1 = 0.0;
        let mut b0 = 0.0;
        for i in 0..n {
            let x = data.covariate(i);
            let pi = link(dot(x, &art.fit.beta_hat));
            let y = data.outcome(i);
            let a = data.treatment(i) as f64;
            let jx = jinv.mul_vec(x);
            let norm_sq = dot(x, &jx);
            let t1 = dot(&art.projections.theta1_hat, &jx);
            let t0 = dot(&art.projections.theta0_hat, &jx);
            b1 += (y * a / pi - pi * t1) * (1.0 - pi) * (2.0 * pi - 1.0) * norm_sq;
            b0 += (y * (1.0 - a) / (1.0 - pi) + (1.0 - pi) * t0) * pi * (2.0 * pi - 1.0) * norm_sq;
        }
        b1 /= 2.0 * n as f64;
        b0 /= 2.0 * n as f64;
        assert_relative_eq!(art.biases.b1_hat, b1, max_relative = 1e-11);
        assert_relative_eq!(art.biases.b0_hat, b0, max_relative = 1e-11);
    }

    #[test]
    fn debias_identity_holds_exactly() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 4);
        let data = generate_dataset(&spec, 150, SeedSpec::new(25, 0)).unwrap();
        let art = debiased_ipw(&data).unwrap();
        let n = data.n() as f64;
        let reconstructed = art.tau_ipw - (art.biases.b1_hat - art.biases.b0_hat) / n;
        assert_relative_eq!(art.tau_debias, reconstructed, max_relative = 1e-12);
    }

    #[test]
    fn debias_reduces_to_ipw_at_half_propensities() {
        let art = debiased_ipw(&balanced_half_dataset()).unwrap();
        assert_eq!(art.tau_debias, art.tau_ipw);
    }

    #[test]
    fn hajek_matches_hand_value_at_half_propensities() {
        let d = dataset(vec![5.0, -2.0], 1, vec![1, 0], vec![2.0, 4.0]);
        let tau = hajek(&d, &synthetic_fit(vec![0.0])).unwrap();
        // the inverse weights cancel inside each ratio: 2 - 4
        assert_relative_eq!(tau, -2.0, max_relative = 1e-15);
    }

    #[test]
    fn hajek_is_invariant_to_outcome_shifts() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 2);
        let data = generate_dataset(&spec, 90, SeedSpec::new(26, 0)).unwrap();
        let fit = fit_mle(&data).unwrap();
        let base = hajek(&data, &fit).unwrap();

        let shifted_y: Vec<f64> = data.outcomes().iter().map(|&y| y + 17.5).collect();
        let shifted = Dataset::new(
            data.covariates().clone(),
            data.treatments().to_vec(),
            shifted_y,
        )
        .unwrap();
        let tau = hajek(&shifted, &fit).unwrap();
        assert!(
            (tau - base).abs() <= 1e-9,
            "shift moved the estimate by {}",
            tau - base
        );
    }

    #[test]
    fn hajek_rejects_empty_arms() {
        let all_treated = dataset(vec![0.0, 0.0], 1, vec![1, 1], vec![1.0, 2.0]);
        assert!(matches!(
            hajek(&all_treated, &synthetic_fit(vec![0.0])),
            Err(Error::DegenerateArm(_))
        ));
        let all_control = dataset(vec![0.0, 0.0], 1, vec![0, 0], vec![1.0, 2.0]);
        assert!(matches!(
            hajek(&all_control, &synthetic_fit(vec![0.0])),
            Err(Error::DegenerateArm(_))
        ));
    }

    #[test]
    fn hajek_matches_direct_ratio() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::ZeroBias, 3);
        let data = generate_dataset(&spec, 70, SeedSpec::new(27, 0)).unwrap();
        let fit = fit_mle(&data).unwrap();
        let tau = hajek(&data, &fit).unwrap();

        let (mut y1, mut w1, mut y0, mut w0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let pi = link(dot(data.covariate(i), &fit.beta_hat));
            if data.treatment(i) == 1 {
                y1 += data.outcome(i) / pi;
                w1 += 1.0 / pi;
            } else {
                y0 += data.outcome(i) / (1.0 - pi);
                w0 += 1.0 / (1.0 - pi);
            }
        }
        assert_relative_eq!(tau, y1 / w1 - y0 / w0, max_relative = 1e-12);
    }

    #[test]
    fn debiased_hajek_reduces_to_hajek_at_half_propensities() {
        let data = balanced_half_dataset();
        let fit = fit_mle(&data).unwrap();
        let plain = hajek(&data, &fit).unwrap();
        let debiased = debiased_hajek(&data).unwrap();
        assert_eq!(
            debiased, plain,
            "all corrections vanish when every propensity is 1/2"
        );
    }

    #[test]
    fn debiased_hajek_is_zero_for_constant_unit_outcomes() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 2);
        let base = generate_dataset(&spec, 60, SeedSpec::new(28, 0)).unwrap();
        let ones = Dataset::new(
            base.covariates().clone(),
            base.treatments().to_vec(),
            vec![1.0; 60],
        )
        .unwrap();
        let tau = debiased_hajek(&ones).unwrap();
        // numerator and denominator corrections coincide, so each ratio is 1
        assert!(tau.abs() <= 1e-12, "tau = {tau}");
    }

    #[test]
    fn debiased_hajek_matches_formula_reevaluation() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data = generate_dataset(&spec, 100, SeedSpec::new(29, 0)).unwrap();
        let art = debiased_ipw(&data).unwrap();
        let tau = debiased_hajek(&data).unwrap();

        // independent re-evaluation from the artifact pieces
        let n = data.n() as f64;
        let (mut y1, mut w1, mut y0, mut w0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let pi = link(dot(data.covariate(i), &art.fit.beta_hat));
            if data.treatment(i) == 1 {
                y1 += data.outcome(i) / pi / n;
                w1 += 1.0 / pi / n;
            } else {
                y0 += data.outcome(i) / (1.0 - pi) / n;
                w0 += 1.0 / (1.0 - pi) / n;
            }
        }
        let ones = Dataset::new(
            data.covariates().clone(),
            data.treatments().to_vec(),
            vec![1.0; 100],
        )
        .unwrap();
        let proj_one = estimate_projections(&ones, &art.fit).unwrap();
        let b_one = estimate_biases(&ones, &art.fit, &art.fisher_inv, &proj_one).unwrap();
        let expected = (y1 - art.biases.b1_hat / n) / (w1 - b_one.b1_hat / n)
            - (y0 - art.biases.b0_hat / n) / (w0 - b_one.b0_hat / n);
        assert_relative_eq!(tau, expected, max_relative = 1e-12);
    }

    #[test]
    fn estimators_are_permutation_invariant() {
        let spec = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data = generate_dataset(&spec, 64, SeedSpec::new(30, 0)).unwrap();

        // deterministic shuffle: reverse order
        let n = data.n();
        let d = data.dim();
        let mut xs = Vec::with_capacity(n * d);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in (0..n).rev() {
            xs.extend_from_slice(data.covariate(i));
            a.push(data.treatment(i));
            y.push(data.outcome(i));
        }
        let rev = Dataset::new(Matrix::from_rows(n, d, xs), a, y).unwrap();

        let art = debiased_ipw(&data).unwrap();
        let art_rev = debiased_ipw(&rev).unwrap();
        assert!((art.tau_ipw - art_rev.tau_ipw).abs() <= 1e-9);
        assert!((art.tau_debias - art_rev.tau_debias).abs() <= 1e-9);
        let h = hajek(&data, &art.fit).unwrap();
        let h_rev = hajek(&rev, &art_rev.fit).unwrap();
        assert!((h - h_rev).abs() <= 1e-9);
    }

    #[test]
    fn ipw_rejects_non_converged_fit() {
        let d = dataset(vec![0.0], 1, vec![1], vec![1.0]);
        let mut fit = synthetic_fit(vec![0.0]);
        fit.converged = false;
        assert!(matches!(ipw(&d, &fit), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_precision_pipeline_tracks_double_precision() {
        // The whole fit-estimate-debias pipeline instantiates at f32; on the
        // same underlying sample its answers should agree with f64 to a few
        // decimal digits (Newton tolerances scale with the type's epsilon).
        let spec64 = ScenarioSpec::<f64>::new(ScenarioKind::WellSpecified, 3);
        let data64 = generate_dataset(&spec64, 300, SeedSpec::new(77, 0)).unwrap();

        let mut xs = Vec::with_capacity(data64.n() * data64.dim());
        let mut y = Vec::with_capacity(data64.n());
        for i in 0..data64.n() {
            xs.extend(data64.covariate(i).iter().map(|&v| v as f32));
            y.push(data64.outcome(i) as f32);
        }
        let data32 = Dataset::<f32>::new(
            Matrix::from_rows(data64.n(), data64.dim(), xs),
            data64.treatments().to_vec(),
            y,
        )
        .unwrap();

        let art64 = debiased_ipw(&data64).unwrap();
        let art32 = debiased_ipw(&data32).unwrap();
        assert!(art32.fit.converged);
        assert!((art32.tau_ipw as f64 - art64.tau_ipw).abs() < 1e-3);
        assert!((art32.tau_debias as f64 - art64.tau_debias).abs() < 1e-3);

        let h64 = hajek(&data64, &art64.fit).unwrap();
        let h32 = hajek(&data32, &art32.fit).unwrap();
        assert!((h32 as f64 - h64).abs() < 1e-3);
    }
}
