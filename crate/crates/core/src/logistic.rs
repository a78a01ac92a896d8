//! Logistic regression fitted by maximum likelihood.
//!
//! The model is intercept-free: `P(A=1 | X=x) = link(<x, beta>)`. The fit is
//! a damped Newton iteration on the average log-likelihood, which is concave,
//! so every accepted step improves the objective. The observed information
//! equals the Fisher information for this model, and the same matrix
//! (assembled by [`empirical_fisher`]) is used both as the Newton Hessian and
//! as the plug-in metric for the bias-correction machinery downstream.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Hard cap on Newton iterations before the fit is declared failed.
const MAX_ITERATIONS: usize = 100;

/// Maximum coefficient norm; beyond this the likelihood is treated as
/// unbounded (separable data) and the fit aborts.
const BETA_NORM_LIMIT: f64 = 1e3;

/// Result of a converged maximum-likelihood fit.
#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit<T> {
    /// Fitted coefficient vector.
    pub beta_hat: Vec<T>,
    /// Newton steps taken.
    pub iterations: usize,
    /// Euclidean norm of the score at `beta_hat`.
    pub final_score_norm: T,
    /// Whether the score tolerance was met (always true for values returned
    /// by [`fit_mle`]; failures surface as errors instead).
    pub converged: bool,
}

/// Empirical Fisher information together with the point it was evaluated at.
#[derive(Debug, Clone, Serialize)]
pub struct FisherMatrix<T> {
    /// `(1/n) * sum_i pi_i (1 - pi_i) x_i x_i^T`, symmetric `d x d`.
    pub matrix: Matrix<T>,
    /// Coefficient vector the propensities were computed from.
    pub evaluated_at: Vec<T>,
}

/// Logistic link `1 / (1 + exp(-z))`, evaluated without overflow in either
/// tail by branching on the sign of `z`.
pub fn link<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + exp(z))` with the large-`z` branch rewritten so neither side
/// overflows.
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_dim<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> Result<()> {
    if beta.len() != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficient length {} does not match covariate dimension {}",
            beta.len(),
            data.dim()
        )));
    }
    Ok(())
}

/// Average log-likelihood `(1/n) * sum_i [a_i z_i - ln(1 + exp(z_i))]` with
/// `z_i = <x_i, beta>`.
pub fn log_likelihood<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> Result<T> {
    check_dim(data, beta)?;
    let mut acc = T::zero();
    for i in 0..data.n() {
        let z = dot(data.covariate(i), beta);
        let az = if data.treatment(i) == 1 { z } else { T::zero() };
        acc += az - softplus(z);
    }
    let avg = acc / T::from_count(data.n());
    if !avg.is_finite() {
        return Err(Error::NumericalOverflow(
            "log-likelihood is not finite at the given coefficients".to_string(),
        ));
    }
    Ok(avg)
}

/// Score (gradient of the average log-likelihood):
/// `(1/n) * sum_i (a_i - pi_i) x_i`.
pub fn score<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> Result<Vec<T>> {
    check_dim(data, beta)?;
    let d = data.dim();
    let mut g = vec![T::zero(); d];
    for i in 0..data.n() {
        let x = data.covariate(i);
        let pi = link(dot(x, beta));
        let resid = T::from_count(data.treatment(i) as usize) - pi;
        for j in 0..d {
            g[j] += resid * x[j];
        }
    }
    let inv_n = T::one() / T::from_count(data.n());
    for v in &mut g {
        *v *= inv_n;
    }
    Ok(g)
}

/// Empirical Fisher information `(1/n) * sum_i pi_i (1 - pi_i) x_i x_i^T`
/// at the fitted coefficients.
pub fn empirical_fisher<T: Scalar>(
    data: &Dataset<T>,
    fit: &LogisticFit<T>,
) -> Result<FisherMatrix<T>> {
    if !fit.converged {
        return Err(Error::InvalidArgument(
            "Fisher matrix requested for a non-converged fit".to_string(),
        ));
    }
    fisher_at(data, &fit.beta_hat)
}

/// Fisher information at an arbitrary coefficient vector; shared by
/// [`empirical_fisher`] and the Newton iteration, which needs it away from
/// the optimum.
fn fisher_at<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> Result<FisherMatrix<T>> {
    check_dim(data, beta)?;
    let d = data.dim();
    let mut m = Matrix::zeros(d, d);
    for i in 0..data.n() {
        let x = data.covariate(i);
        let pi = link(dot(x, beta));
        let w = pi * (T::one() - pi);
        // accumulate the upper triangle only; mirrored below
        for j in 0..d {
            let wx = w * x[j];
            for k in j..d {
                m[(j, k)] += wx * x[k];
            }
        }
    }
    let inv_n = T::one() / T::from_count(data.n());
    for j in 0..d {
        for k in j..d {
            m[(j, k)] *= inv_n;
        }
    }
    m.mirror_upper();
    Ok(FisherMatrix {
        matrix: m,
        evaluated_at: beta.to_vec(),
    })
}

/// Invert a Fisher matrix via its Cholesky factorization. Fails with
/// [`Error::SingularFisher`] when the matrix is not positive definite.
pub fn fisher_inverse<T: Scalar>(fisher: &FisherMatrix<T>) -> Result<Matrix<T>> {
    let chol = Cholesky::factor(&fisher.matrix).ok_or(Error::SingularFisher)?;
    Ok(chol.inverse())
}

/// True when every fitted probability is numerically indistinguishable from
/// its observed label. A vanishing score at such a point does not mark an
/// interior maximum — it marks separated data, where the likelihood keeps
/// increasing along a diverging coefficient ray.
fn perfectly_predicted<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> bool {
    let tol = T::of(1e-6).max(T::epsilon().sqrt());
    (0..data.n()).all(|i| {
        let pi = link(dot(data.covariate(i), beta));
        (T::from_count(data.treatment(i) as usize) - pi).abs() <= tol
    })
}

/// Fit the logistic model by damped Newton iteration from `beta = 0`.
///
/// Each step solves the Newton system against the empirical Fisher matrix.
/// Far from the optimum the step is backtracked (halved) until the average
/// log-likelihood does not decrease; once the score norm is below
/// `1e-6 * (1 + ||beta||)` the iteration is inside Newton's quadratic basin
/// and full steps are taken directly, since at that point genuine likelihood
/// gains are smaller than the rounding noise a comparison could resolve.
///
/// Convergence is declared when the score norm falls below
/// `1e-10 * (1 + ||beta||)` at a point that does not perfectly predict the
/// labels. The fit aborts with [`Error::NonConvergence`] on separable data
/// (saturated fitted probabilities, or coefficient norm escaping past 1e3),
/// a singular Hessian, a failed backtracking search, or the iteration cap.
pub fn fit_mle<T: Scalar>(data: &Dataset<T>) -> Result<LogisticFit<T>> {
    let d = data.dim();
    let mut beta = vec![T::zero(); d];
    let mut ll = log_likelihood(data, &beta)?;
    // tolerance floor scales with the scalar's precision so that
    // single-precision fits can still terminate
    let tol = T::of(1e-10).max(T::epsilon() * T::of(100.0));
    let basin = T::of(1e-6).max(T::epsilon().sqrt());
    for iter in 0..MAX_ITERATIONS {
        let g = score(data, &beta)?;
        let g_norm = norm2(&g);
        let b_norm = norm2(&beta);
        if g_norm <= tol * (T::one() + b_norm) {
            if perfectly_predicted(data, &beta) {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    reason: "fitted probabilities saturated at the observed labels; \
                             the data are separable and the MLE diverges"
                        .to_string(),
                });
            }
            return Ok(LogisticFit {
                beta_hat: beta,
                iterations: iter,
                final_score_norm: g_norm,
                converged: true,
            });
        }
        if b_norm > T::of(BETA_NORM_LIMIT) {
            return Err(Error::NonConvergence {
                iterations: iter,
                reason: format!(
                    "coefficient norm {} exceeded {BETA_NORM_LIMIT}; the data are likely separable",
                    b_norm.to_f64_lossy()
                ),
            });
        }
        let fisher = fisher_at(data, &beta)?;
        let chol = Cholesky::factor(&fisher.matrix).ok_or_else(|| Error::NonConvergence {
            iterations: iter,
            reason: "Fisher matrix is singular at the current iterate".to_string(),
        })?;
        let step = chol.solve(&g);
        if g_norm <= basin * (T::one() + b_norm) {
            for (b, &s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            ll = log_likelihood(data, &beta)?;
            continue;
        }
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<T> = beta
                .iter()
                .zip(&step)
                .map(|(&b, &s)| b + scale * s)
                .collect();
            let ll_candidate = log_likelihood(data, &candidate)?;
            if ll_candidate >= ll {
                beta = candidate;
                ll = ll_candidate;
                accepted = true;
                break;
            }
            scale *= T::of(0.5);
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                reason: "backtracking line search could not improve the likelihood".to_string(),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        reason: format!("score tolerance not reached in {MAX_ITERATIONS} iterations"),
    })
}
