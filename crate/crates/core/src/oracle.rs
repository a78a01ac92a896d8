//! Brute-force Monte Carlo evaluation of the population quantities that the
//! estimators and their theory are built on: the projection vectors
//! `theta1`/`theta0`, the population Fisher matrix, the arm-wise bias
//! constants `B1`/`B0`, and the three asymptotic variances (influence
//! variance `vbar^2`, efficiency bound `vstar^2`, and the Hájek analogue).
//!
//! Everything here is deliberately independent of the estimator code paths:
//! quantities are integrated directly from their defining expectations, so
//! they can serve as an oracle against which the sample-based machinery is
//! checked.
//!
//! ## Error bars
//!
//! All integrals run in a fixed number of equal-sized batches. Plug-in
//! quantities (the bias constants need `Jinv`, `theta`, and the outcome
//! means before their integrands can be formed) are integrated twice over
//! independent streams: pass one freezes the plug-ins, pass two integrates
//! the target formulas. The reported point estimate freezes the full pass-one
//! sample; the standard error is the spread of per-batch replicates in which
//! batch `b` of pass two is evaluated against the plug-ins frozen from batch
//! `b` of pass one. Pairing the batches this way propagates the plug-in
//! noise into the error bar instead of hiding it.

use serde::Serialize;

use crate::data::{
    generate_dataset, true_outcome, true_propensity, true_tau, ScenarioSpec, SeedSpec,
};
use crate::error::{Error, Result};
use crate::estimators::{ipw, oracle_ipw};
use crate::linalg::{dot, min_eigenvalue_spd, Cholesky, Matrix};
use crate::logistic::fit_mle;
use crate::scalar::Scalar;

/// Number of equal batches each Monte Carlo integral is split into for
/// standard-error estimation.
const MC_BATCHES: usize = 100;

/// Minimum sample size accepted by the population integrators.
const MC_MIN_SAMPLES: usize = 10_000;

const STREAM_PASS_ONE: u64 = 0xA1;
const STREAM_PASS_TWO: u64 = 0xA2;
const STREAM_LHS: u64 = 0xB1;
const STREAM_RHS: u64 = 0xB2;
const STREAM_POPULATION: u64 = 0xC1;
const STREAM_TAU_STAR: u64 = 0xC2;
const STREAM_TRIALS: u64 = 0xC3;
const STREAM_DIAGNOSTICS: u64 = 0xD1;

/// Monte Carlo standard errors accompanying [`PopulationQuantities`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationStdErrors<T> {
    /// Per-coordinate standard errors of `theta1`.
    pub theta1: Vec<T>,
    /// Per-coordinate standard errors of `theta0`.
    pub theta0: Vec<T>,
    /// Largest per-entry standard error of the Fisher matrix.
    pub fisher_pop: T,
    pub b1: T,
    pub b0: T,
    pub vbar_sq: T,
    pub vstar_sq: T,
    pub vbar_haj_sq: T,
}

/// Population constants of a scenario, each integrated by Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationQuantities<T> {
    /// `theta1 = E[(1 - pi) mu(X,1) X]`.
    pub theta1: Vec<T>,
    /// `theta0 = E[pi mu(X,0) X]`.
    pub theta0: Vec<T>,
    /// `J = E[pi (1 - pi) X X^T]`.
    pub fisher_pop: Matrix<T>,
    /// `B1 = (1/2) E[{mu(X,1) - pi <theta1, X>_Jinv} (1 - pi)(2 pi - 1) ||X||^2_Jinv]`.
    pub b1: T,
    /// `B0 = (1/2) E[{mu(X,0) + (1 - pi) <theta0, X>_Jinv} pi (2 pi - 1) ||X||^2_Jinv]`.
    pub b0: T,
    /// Second moment of the influence function (the asymptotic variance of
    /// the estimated-propensity IPW estimator).
    pub vbar_sq: T,
    /// Semiparametric efficiency bound `var(mu(X,1) - mu(X,0))`; outcomes
    /// are deterministic given X in every built-in scenario, so there is no
    /// additive noise term.
    pub vstar_sq: T,
    /// Influence variance of the Hájek family, with outcomes centered at
    /// their arm means and the projections adjusted accordingly.
    pub vbar_haj_sq: T,
    /// Total draws actually used per pass (requested size rounded up to a
    /// multiple of the batch count).
    pub mc_samples: usize,
    pub std_errors: PopulationStdErrors<T>,
}

/// Both sides of the variance decomposition
/// `vbar^2 = E[(g0 - tau)^2] - ||theta1 + theta0||^2_Jinv`, where `g0` is the
/// oracle summand, integrated on independent streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceIdentityReport<T> {
    /// Direct second moment of the influence function.
    pub influence_mc: T,
    pub influence_se: T,
    /// Variance of the oracle summand about the true ATE — the per-draw
    /// variance of the true-propensity estimator, i.e. `n` times the
    /// variance of its mean.
    pub oracle_summand_var: T,
    pub oracle_summand_se: T,
    /// `||theta1 + theta0||^2` in the inverse-Fisher metric, the correction
    /// subtracted on the decomposed side.
    pub projection_norm_sq: T,
    /// Oracle-summand variance minus the Fisher-norm correction.
    pub decomposed_mc: T,
    pub decomposed_se: T,
    pub difference: T,
    pub combined_se: T,
    pub mc_samples: usize,
}

/// Empirical check that the scaled bias of the plug-in IPW estimator matches
/// the population bias gap `B1 - B0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport<T> {
    pub n: usize,
    pub d: usize,
    /// Mean over trials of `n * (tau_ipw - tau_star)`.
    pub scaled_bias_mean: T,
    pub scaled_bias_se: T,
    /// `B1 - B0` from the population integrals.
    pub bias_gap: T,
    pub bias_gap_se: T,
    /// `scaled_bias_mean - bias_gap`.
    pub residual: T,
    pub combined_se: T,
    /// `d^(3/2) / sqrt(n)`, the scale of the neglected higher-order term,
    /// reported for context when judging the residual.
    pub higher_order_scale: T,
    /// Mean over trials of `tau_oracle - tau_star` (unscaled); the oracle
    /// estimator is exactly unbiased, so this is pure Monte Carlo noise.
    pub oracle_bias_mean: T,
    pub oracle_bias_se: T,
    pub tau_star: T,
    pub trials_used: usize,
    pub failures: usize,
}

/// Empirical handles on a scenario's regularity: tail scale of the
/// covariates, curvature of the propensity model, and overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioDiagnostics<T> {
    /// Largest root-mean-square covariate projection over a set of probe
    /// directions (coordinate axes, the diagonal, and random directions);
    /// a proxy for the sub-Gaussian scale of the covariate law.
    pub nu_proxy: T,
    /// Smallest eigenvalue of the Monte Carlo Fisher matrix.
    pub gamma_hat: T,
    /// Smallest propensity observed over the draws.
    pub pi_min_hat: T,
    /// Largest propensity observed over the draws.
    pub pi_max_hat: T,
}

/// Potential-outcome pair `(mu(x,1), mu(x,0))` for a scenario draw.
type OutcomeFn<'a, T> = dyn Fn(&[T]) -> (T, T) + 'a;

fn scenario_outcomes<T: Scalar>(spec: &ScenarioSpec<T>) -> impl Fn(&[T]) -> (T, T) + '_ {
    move |x: &[T]| {
        let mu1 = true_outcome(spec, x, 1).expect("draw has the scenario dimension");
        let mu0 = true_outcome(spec, x, 0).expect("draw has the scenario dimension");
        (mu1, mu0)
    }
}

fn batch_size(mc_samples: usize) -> Result<usize> {
    if mc_samples < MC_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "population integrals need at least {MC_MIN_SAMPLES} MC samples, got {mc_samples}"
        )));
    }
    Ok(mc_samples.div_ceil(MC_BATCHES))
}

/// Mean of a slice of batch means.
fn mean<T: Scalar>(values: &[T]) -> T {
    let mut acc = T::zero();
    for &v in values {
        acc += v;
    }
    acc / T::from_count(values.len())
}

/// Standard error of the overall mean from independent batch means:
/// `sd(batch means) / sqrt(#batches)`.
fn se_from_batch_means<T: Scalar>(batch_means: &[T]) -> T {
    let b = batch_means.len();
    let m = mean(batch_means);
    let mut ss = T::zero();
    for &v in batch_means {
        let dev = v - m;
        ss += dev * dev;
    }
    let var = ss / T::from_count(b - 1);
    (var / T::from_count(b)).sqrt()
}

/// Plug-in quantities frozen from one batch (or from the full pass-one
/// sample): the inverse Fisher matrix, the metric-adjusted projection and
/// weight vectors, and the arm means.
struct Frozen<T> {
    j_inv: Matrix<T>,
    theta1: Vec<T>,
    theta0: Vec<T>,
    /// `Jinv theta1`, `Jinv theta0`.
    jt1: Vec<T>,
    jt0: Vec<T>,
    /// `Jinv E[(1-pi) X]`, `Jinv E[pi X]` — the Hájek centering directions.
    jw1: Vec<T>,
    jw0: Vec<T>,
    /// `E[Y(1)]`, `E[Y(0)]`.
    m1: T,
    m0: T,
}

impl<T: Scalar> Frozen<T> {
    /// Assemble from pass-one accumulations; each pair is (treated, control).
    fn build(
        fisher: &Matrix<T>,
        (theta1, theta0): (Vec<T>, Vec<T>),
        (w1, w0): (&[T], &[T]),
        (m1, m0): (T, T),
        fallback: Option<&Matrix<T>>,
    ) -> Result<Self> {
        let j_inv = match Cholesky::factor(fisher) {
            Some(chol) => chol.inverse(),
            None => match fallback {
                // a small batch can be rank-deficient even when the full
                // Fisher matrix is healthy; its replicate then borrows the
                // full-sample inverse, which only narrows the error bar
                Some(full) => full.clone(),
                None => return Err(Error::InvalidScenario),
            },
        };
        let jt1 = j_inv.mul_vec(&theta1);
        let jt0 = j_inv.mul_vec(&theta0);
        let jw1 = j_inv.mul_vec(w1);
        let jw0 = j_inv.mul_vec(w0);
        Ok(Frozen {
            j_inv,
            theta1,
            theta0,
            jt1,
            jt0,
            jw1,
            jw0,
            m1,
            m0,
        })
    }

    /// `||theta1 + theta0||^2` in the inverse-Fisher metric.
    fn projection_norm_sq(&self) -> T {
        let mut acc = T::zero();
        for j in 0..self.theta1.len() {
            acc += (self.theta1[j] + self.theta0[j]) * (self.jt1[j] + self.jt0[j]);
        }
        acc
    }
}

/// First pass: everything the target integrands need as plug-ins, frozen
/// from the full sample and from each batch separately.
struct PassOne<T> {
    fisher: Matrix<T>,
    full: Frozen<T>,
    batches: Vec<Frozen<T>>,
    theta1_se: Vec<T>,
    theta0_se: Vec<T>,
    fisher_se: T,
}

fn pass_one<T: Scalar>(
    spec: &ScenarioSpec<T>,
    outcomes: &OutcomeFn<'_, T>,
    per_batch: usize,
    seed: SeedSpec,
) -> Result<PassOne<T>> {
    let d = spec.dimension;
    let inv_m = T::one() / T::from_count(per_batch);

    let mut batch_fisher: Vec<Matrix<T>> = Vec::with_capacity(MC_BATCHES);
    let mut batch_theta1: Vec<Vec<T>> = Vec::with_capacity(MC_BATCHES);
    let mut batch_theta0: Vec<Vec<T>> = Vec::with_capacity(MC_BATCHES);
    let mut batch_w1: Vec<Vec<T>> = Vec::with_capacity(MC_BATCHES);
    let mut batch_w0: Vec<Vec<T>> = Vec::with_capacity(MC_BATCHES);
    let mut batch_m1: Vec<T> = Vec::with_capacity(MC_BATCHES);
    let mut batch_m0: Vec<T> = Vec::with_capacity(MC_BATCHES);

    let mut x = vec![T::zero(); d];
    for b in 0..MC_BATCHES {
        let mut rng = seed.with_trial(b as u64).rng();
        let mut fisher = Matrix::zeros(d, d);
        let mut theta1 = vec![T::zero(); d];
        let mut theta0 = vec![T::zero(); d];
        let mut w1 = vec![T::zero(); d];
        let mut w0 = vec![T::zero(); d];
        let mut m1 = T::zero();
        let mut m0 = T::zero();
        for _ in 0..per_batch {
            for v in x.iter_mut() {
                *v = T::standard_normal(&mut rng);
            }
            let pi = true_propensity(spec, &x)?;
            let (mu1, mu0) = outcomes(&x);
            let q = pi * (T::one() - pi);
            for j in 0..d {
                let qx = q * x[j];
                for k in j..d {
                    fisher[(j, k)] += qx * x[k];
                }
            }
            let c1 = (T::one() - pi) * mu1;
            let c0 = pi * mu0;
            for j in 0..d {
                theta1[j] += c1 * x[j];
                theta0[j] += c0 * x[j];
                w1[j] += (T::one() - pi) * x[j];
                w0[j] += pi * x[j];
            }
            m1 += mu1;
            m0 += mu0;
        }
        for j in 0..d {
            for k in j..d {
                fisher[(j, k)] *= inv_m;
            }
        }
        fisher.mirror_upper();
        for j in 0..d {
            theta1[j] *= inv_m;
            theta0[j] *= inv_m;
            w1[j] *= inv_m;
            w0[j] *= inv_m;
        }
        batch_fisher.push(fisher);
        batch_theta1.push(theta1);
        batch_theta0.push(theta0);
        batch_w1.push(w1);
        batch_w0.push(w0);
        batch_m1.push(m1 * inv_m);
        batch_m0.push(m0 * inv_m);
    }

    // full-sample values: averages of the (equal-sized) batch means
    let inv_b = T::one() / T::from_count(MC_BATCHES);
    let mut fisher = Matrix::zeros(d, d);
    let mut theta1 = vec![T::zero(); d];
    let mut theta0 = vec![T::zero(); d];
    let mut w1 = vec![T::zero(); d];
    let mut w0 = vec![T::zero(); d];
    for b in 0..MC_BATCHES {
        for j in 0..d {
            theta1[j] += batch_theta1[b][j] * inv_b;
            theta0[j] += batch_theta0[b][j] * inv_b;
            w1[j] += batch_w1[b][j] * inv_b;
            w0[j] += batch_w0[b][j] * inv_b;
            for k in 0..d {
                fisher[(j, k)] += batch_fisher[b][(j, k)] * inv_b;
            }
        }
    }
    let m1 = mean(&batch_m1);
    let m0 = mean(&batch_m0);

    let theta1_se: Vec<T> = (0..d)
        .map(|j| {
            let coords: Vec<T> = batch_theta1.iter().map(|t| t[j]).collect();
            se_from_batch_means(&coords)
        })
        .collect();
    let theta0_se: Vec<T> = (0..d)
        .map(|j| {
            let coords: Vec<T> = batch_theta0.iter().map(|t| t[j]).collect();
            se_from_batch_means(&coords)
        })
        .collect();
    let mut fisher_se = T::zero();
    for j in 0..d {
        for k in j..d {
            let entries: Vec<T> = batch_fisher.iter().map(|f| f[(j, k)]).collect();
            fisher_se = fisher_se.max(se_from_batch_means(&entries));
        }
    }

    let full = Frozen::build(&fisher, (theta1, theta0), (&w1, &w0), (m1, m0), None)?;
    let mut batches = Vec::with_capacity(MC_BATCHES);
    for b in 0..MC_BATCHES {
        batches.push(Frozen::build(
            &batch_fisher[b],
            (batch_theta1[b].clone(), batch_theta0[b].clone()),
            (&batch_w1[b], &batch_w0[b]),
            (batch_m1[b], batch_m0[b]),
            Some(&full.j_inv),
        )?);
    }

    Ok(PassOne {
        fisher,
        full,
        batches,
        theta1_se,
        theta0_se,
        fisher_se,
    })
}

/// Integrand values of one draw against one set of frozen plug-ins.
#[derive(Clone, Copy)]
struct Terms<T> {
    b1: T,
    b0: T,
    vbar: T,
    vstar: T,
    vbar_haj: T,
    var_g0: T,
}

fn evaluate_terms<T: Scalar>(
    frozen: &Frozen<T>,
    x: &[T],
    pi: T,
    mu1: T,
    mu0: T,
    treated: bool,
) -> Terms<T> {
    let one = T::one();
    let norm_sq = frozen.j_inv.quad_form(x);
    let t1 = dot(&frozen.jt1, x);
    let t0 = dot(&frozen.jt0, x);
    let skew = (T::of(2.0) * pi - one) * norm_sq;
    let b1 = (mu1 - pi * t1) * (one - pi) * skew;
    let b0 = (mu0 + (one - pi) * t0) * pi * skew;

    let tau = frozen.m1 - frozen.m0;
    let a = if treated { one } else { T::zero() };
    let g0 = if treated { mu1 / pi } else { -mu0 / (one - pi) };
    let g = g0 - tau - (a - pi) * (t1 + t0);
    let vbar = g * g;
    let dev = mu1 - mu0 - tau;
    let vstar = dev * dev;

    // Hájek analogue: center the outcomes at the arm means and shift the
    // projections by the centering directions
    let t1h = t1 - frozen.m1 * dot(&frozen.jw1, x);
    let t0h = t0 - frozen.m0 * dot(&frozen.jw0, x);
    let g0h = if treated {
        (mu1 - frozen.m1) / pi
    } else {
        -(mu0 - frozen.m0) / (one - pi)
    };
    let gh = g0h - (a - pi) * (t1h + t0h);
    let vbar_haj = gh * gh;

    let dev0 = g0 - tau;
    Terms {
        b1,
        b0,
        vbar,
        vstar,
        vbar_haj,
        var_g0: dev0 * dev0,
    }
}

#[derive(Clone, Copy)]
struct Sums<T> {
    b1: T,
    b0: T,
    vbar: T,
    vstar: T,
    vbar_haj: T,
    var_g0: T,
}

impl<T: Scalar> Sums<T> {
    fn zero() -> Self {
        let z = T::zero();
        Sums {
            b1: z,
            b0: z,
            vbar: z,
            vstar: z,
            vbar_haj: z,
            var_g0: z,
        }
    }

    fn add(&mut self, t: Terms<T>) {
        self.b1 += t.b1;
        self.b0 += t.b0;
        self.vbar += t.vbar;
        self.vstar += t.vstar;
        self.vbar_haj += t.vbar_haj;
        self.var_g0 += t.var_g0;
    }

    /// Finish as a mean over `count` draws, applying the 1/2 prefactor of
    /// the bias integrands.
    fn finalize(mut self, count: usize) -> Self {
        let inv = T::one() / T::from_count(count);
        let half = T::of(0.5);
        self.b1 *= inv * half;
        self.b0 *= inv * half;
        self.vbar *= inv;
        self.vstar *= inv;
        self.vbar_haj *= inv;
        self.var_g0 *= inv;
        self
    }
}

/// Second pass: integrate the target formulas against the frozen plug-ins.
/// `point` uses the full-sample plug-ins; `replicates[b]` pairs batch `b` of
/// this pass with batch `b` of pass one.
struct PassTwo<T> {
    point: Sums<T>,
    replicates: Vec<Sums<T>>,
}

impl<T: Scalar> PassTwo<T> {
    fn se(&self, pick: impl Fn(&Sums<T>) -> T) -> T {
        let values: Vec<T> = self.replicates.iter().map(&pick).collect();
        se_from_batch_means(&values)
    }
}

fn pass_two<T: Scalar>(
    spec: &ScenarioSpec<T>,
    outcomes: &OutcomeFn<'_, T>,
    p1: &PassOne<T>,
    per_batch: usize,
    seed: SeedSpec,
) -> Result<PassTwo<T>> {
    let d = spec.dimension;
    let mut full_sums = Sums::zero();
    let mut replicates = Vec::with_capacity(MC_BATCHES);
    let mut x = vec![T::zero(); d];
    for b in 0..MC_BATCHES {
        let mut rng = seed.with_trial(b as u64).rng();
        let mut batch_sums = Sums::zero();
        for _ in 0..per_batch {
            for v in x.iter_mut() {
                *v = T::standard_normal(&mut rng);
            }
            let pi = true_propensity(spec, &x)?;
            let (mu1, mu0) = outcomes(&x);
            let treated = T::standard_uniform(&mut rng) < pi;
            full_sums.add(evaluate_terms(&p1.full, &x, pi, mu1, mu0, treated));
            batch_sums.add(evaluate_terms(&p1.batches[b], &x, pi, mu1, mu0, treated));
        }
        replicates.push(batch_sums.finalize(per_batch));
    }
    Ok(PassTwo {
        point: full_sums.finalize(per_batch * MC_BATCHES),
        replicates,
    })
}

fn mc_population_impl<T: Scalar>(
    spec: &ScenarioSpec<T>,
    mc_samples: usize,
    seed: SeedSpec,
    outcomes: &OutcomeFn<'_, T>,
) -> Result<PopulationQuantities<T>> {
    let per_batch = batch_size(mc_samples)?;
    let p1 = pass_one(spec, outcomes, per_batch, seed.stream(STREAM_PASS_ONE))?;
    let p2 = pass_two(spec, outcomes, &p1, per_batch, seed.stream(STREAM_PASS_TWO))?;
    let std_errors = PopulationStdErrors {
        theta1: p1.theta1_se.clone(),
        theta0: p1.theta0_se.clone(),
        fisher_pop: p1.fisher_se,
        b1: p2.se(|s| s.b1),
        b0: p2.se(|s| s.b0),
        vbar_sq: p2.se(|s| s.vbar),
        vstar_sq: p2.se(|s| s.vstar),
        vbar_haj_sq: p2.se(|s| s.vbar_haj),
    };
    Ok(PopulationQuantities {
        theta1: p1.full.theta1.clone(),
        theta0: p1.full.theta0.clone(),
        fisher_pop: p1.fisher,
        b1: p2.point.b1,
        b0: p2.point.b0,
        vbar_sq: p2.point.vbar,
        vstar_sq: p2.point.vstar,
        vbar_haj_sq: p2.point.vbar_haj,
        mc_samples: per_batch * MC_BATCHES,
        std_errors,
    })
}

/// Integrate all population quantities of a scenario with `mc_samples`
/// draws per pass (rounded up to a multiple of the batch count). Output is
/// bit-exactly reproducible for equal `(spec, mc_samples, seed)`.
pub fn mc_population<T: Scalar>(
    spec: &ScenarioSpec<T>,
    mc_samples: usize,
    seed: SeedSpec,
) -> Result<PopulationQuantities<T>> {
    mc_population_impl(spec, mc_samples, seed, &scenario_outcomes(spec))
}

/// Check the decomposition `vbar^2 = E[(g0 - tau)^2] - ||theta1+theta0||^2_Jinv`
/// by integrating both sides on independent streams.
pub fn check_variance_identity<T: Scalar>(
    spec: &ScenarioSpec<T>,
    mc_samples: usize,
    seed: SeedSpec,
) -> Result<VarianceIdentityReport<T>> {
    let per_batch = batch_size(mc_samples)?;
    let outcomes = scenario_outcomes(spec);

    let lhs_seed = seed.stream(STREAM_LHS);
    let p1l = pass_one(spec, &outcomes, per_batch, lhs_seed.stream(STREAM_PASS_ONE))?;
    let p2l = pass_two(
        spec,
        &outcomes,
        &p1l,
        per_batch,
        lhs_seed.stream(STREAM_PASS_TWO),
    )?;

    let rhs_seed = seed.stream(STREAM_RHS);
    let p1r = pass_one(spec, &outcomes, per_batch, rhs_seed.stream(STREAM_PASS_ONE))?;
    let p2r = pass_two(
        spec,
        &outcomes,
        &p1r,
        per_batch,
        rhs_seed.stream(STREAM_PASS_TWO),
    )?;

    let influence_mc = p2l.point.vbar;
    let influence_se = p2l.se(|s| s.vbar);

    let oracle_summand_var = p2r.point.var_g0;
    let oracle_summand_se = p2r.se(|s| s.var_g0);
    let projection_norm_sq = p1r.full.projection_norm_sq();
    let decomposed_mc = oracle_summand_var - projection_norm_sq;
    let decomposed_values: Vec<T> = (0..MC_BATCHES)
        .map(|b| p2r.replicates[b].var_g0 - p1r.batches[b].projection_norm_sq())
        .collect();
    let decomposed_se = se_from_batch_means(&decomposed_values);

    let difference = influence_mc - decomposed_mc;
    let combined_se = (influence_se * influence_se + decomposed_se * decomposed_se).sqrt();
    Ok(VarianceIdentityReport {
        influence_mc,
        influence_se,
        oracle_summand_var,
        oracle_summand_se,
        projection_norm_sq,
        decomposed_mc,
        decomposed_se,
        difference,
        combined_se,
        mc_samples: per_batch * MC_BATCHES,
    })
}

/// Compare the empirical scaled bias of the plug-in IPW estimator over
/// repeated trials against the population bias gap `B1 - B0`.
///
/// Trials whose propensity fit fails are counted and excluded. The oracle
/// estimator is evaluated on every trial as an unbiasedness control.
pub fn check_decomposition<T: Scalar>(
    spec: &ScenarioSpec<T>,
    n: usize,
    trials: usize,
    mc_samples: usize,
    seed: SeedSpec,
) -> Result<DecompositionReport<T>> {
    if trials < 200 {
        return Err(Error::InvalidArgument(format!(
            "decomposition check needs at least 200 trials, got {trials}"
        )));
    }
    let pop = mc_population(spec, mc_samples, seed.stream(STREAM_POPULATION))?;
    let tau_star = true_tau(spec, mc_samples, seed.stream(STREAM_TAU_STAR));

    let n_t = T::from_count(n);
    let mut scaled_devs: Vec<T> = Vec::with_capacity(trials);
    let mut oracle_devs: Vec<T> = Vec::with_capacity(trials);
    let mut failures = 0usize;
    let trial_seed = seed.stream(STREAM_TRIALS);
    for k in 0..trials {
        let data = generate_dataset(spec, n, trial_seed.with_trial(k as u64))?;
        let props: Result<Vec<T>> = (0..n)
            .map(|i| true_propensity(spec, data.covariate(i)))
            .collect();
        oracle_devs.push(oracle_ipw(&data, &props?)? - tau_star);
        match fit_mle(&data).and_then(|fit| ipw(&data, &fit)) {
            Ok(tau) => scaled_devs.push(n_t * (tau - tau_star)),
            Err(_) => failures += 1,
        }
    }
    if scaled_devs.is_empty() {
        return Err(Error::InvalidArgument(
            "every trial failed to fit; the regime is degenerate".to_string(),
        ));
    }

    let scaled_bias_mean = mean(&scaled_devs);
    let scaled_bias_se = se_of_mean(&scaled_devs);
    let oracle_bias_mean = mean(&oracle_devs);
    let oracle_bias_se = se_of_mean(&oracle_devs);
    let bias_gap = pop.b1 - pop.b0;
    let bias_gap_se =
        (pop.std_errors.b1 * pop.std_errors.b1 + pop.std_errors.b0 * pop.std_errors.b0).sqrt();
    let residual = scaled_bias_mean - bias_gap;
    let combined_se = (scaled_bias_se * scaled_bias_se + bias_gap_se * bias_gap_se).sqrt();
    let d = spec.dimension;
    let higher_order_scale = T::from_count(d).powf(T::of(1.5)) / n_t.sqrt();
    Ok(DecompositionReport {
        n,
        d,
        scaled_bias_mean,
        scaled_bias_se,
        bias_gap,
        bias_gap_se,
        residual,
        combined_se,
        higher_order_scale,
        oracle_bias_mean,
        oracle_bias_se,
        tau_star,
        trials_used: scaled_devs.len(),
        failures,
    })
}

/// Standard error of the mean of raw (unbatched) values.
fn se_of_mean<T: Scalar>(values: &[T]) -> T {
    let m = mean(values);
    let mut ss = T::zero();
    for &v in values {
        let dev = v - m;
        ss += dev * dev;
    }
    let var = ss / T::from_count(values.len() - 1);
    (var / T::from_count(values.len())).sqrt()
}

/// Monte Carlo diagnostics for a scenario's regularity assumptions.
pub fn scenario_diagnostics<T: Scalar>(
    spec: &ScenarioSpec<T>,
    mc_samples: usize,
    seed: SeedSpec,
) -> Result<ScenarioDiagnostics<T>> {
    let per_batch = batch_size(mc_samples)?;
    let total = per_batch * MC_BATCHES;
    let d = spec.dimension;
    let mut rng = seed.stream(STREAM_DIAGNOSTICS).rng();

    // probe directions: the diagonal plus a handful of random unit vectors
    // (coordinate axes are handled without materializing them)
    let mut probes: Vec<Vec<T>> = Vec::new();
    let diag = vec![T::one() / T::from_count(d).sqrt(); d];
    probes.push(diag);
    for _ in 0..8 {
        let mut u: Vec<T> = (0..d).map(|_| T::standard_normal(&mut rng)).collect();
        let norm = dot(&u, &u).sqrt();
        for v in u.iter_mut() {
            *v /= norm;
        }
        probes.push(u);
    }

    let mut fisher = Matrix::zeros(d, d);
    let mut pi_min = T::one();
    let mut pi_max = T::zero();
    let mut axis_sq = vec![T::zero(); d];
    let mut probe_sq = vec![T::zero(); probes.len()];
    let mut x = vec![T::zero(); d];
    for _ in 0..total {
        for v in x.iter_mut() {
            *v = T::standard_normal(&mut rng);
        }
        let pi = true_propensity(spec, &x)?;
        pi_min = pi_min.min(pi);
        pi_max = pi_max.max(pi);
        let q = pi * (T::one() - pi);
        for j in 0..d {
            let qx = q * x[j];
            for k in j..d {
                fisher[(j, k)] += qx * x[k];
            }
            axis_sq[j] += x[j] * x[j];
        }
        for (p, u) in probes.iter().enumerate() {
            let proj = dot(u, &x);
            probe_sq[p] += proj * proj;
        }
    }
    let inv = T::one() / T::from_count(total);
    for j in 0..d {
        for k in j..d {
            fisher[(j, k)] *= inv;
        }
    }
    fisher.mirror_upper();

    let chol = Cholesky::factor(&fisher).ok_or(Error::InvalidScenario)?;
    let gamma_hat = min_eigenvalue_spd(&fisher, &chol);

    let mut max_sq = T::zero();
    for &s in axis_sq.iter().chain(probe_sq.iter()) {
        max_sq = max_sq.max(s * inv);
    }
    Ok(ScenarioDiagnostics {
        nu_proxy: max_sq.sqrt(),
        gamma_hat,
        pi_min_hat: pi_min,
        pi_max_hat: pi_max,
    })
}
