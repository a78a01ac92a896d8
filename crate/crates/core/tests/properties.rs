//! Property-based invariants: identities and symmetries that must hold on
//! arbitrary generated inputs, not just hand-picked fixtures.

use proptest::prelude::*;

use ipw_core::{
    confidence_interval, debiased_ipw, dimension_grid, fit_mle, generate_dataset, hajek, ipw,
    oracle_ipw, true_propensity, Dataset, LogisticFit, Matrix, Method, ScenarioKind, ScenarioSpec,
    SeedSpec,
};

fn fit_at(beta: &[f64]) -> LogisticFit<f64> {
    LogisticFit {
        beta_hat: beta.to_vec(),
        iterations: 0,
        final_score_norm: 0.0,
        converged: true,
    }
}

/// Deterministic dataset from a seed; small n/d keep the suite fast.
fn dataset(seed: u64, n: usize, d: usize) -> (ScenarioSpec<f64>, Dataset<f64>) {
    let spec = ScenarioSpec::new(ScenarioKind::WellSpecified, d);
    let data = generate_dataset(&spec, n, SeedSpec::new(seed, 0)).expect("generation");
    (spec, data)
}

fn permuted(data: &Dataset<f64>, order: &[usize]) -> Dataset<f64> {
    let (n, d) = (data.n(), data.dim());
    let mut flat = Vec::with_capacity(n * d);
    for &j in order {
        flat.extend_from_slice(data.covariate(j));
    }
    Dataset::new(
        Matrix::from_rows(n, d, flat),
        order.iter().map(|&j| data.treatment(j)).collect(),
        order.iter().map(|&j| data.outcome(j)).collect(),
    )
    .unwrap()
}

/// Derive a permutation of `0..n` from random keys (argsort).
fn permutation_from_keys(keys: &[u64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (keys[i % keys.len()].wrapping_mul(i as u64 + 1), i));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ipw_at_true_coefficients_is_oracle_bit_exact(
        seed in any::<u64>(),
        n in 20usize..60,
        d in 1usize..5,
    ) {
        let (spec, data) = dataset(seed, n, d);
        let props: Vec<f64> = (0..n)
            .map(|i| true_propensity(&spec, data.covariate(i)).unwrap())
            .collect();
        let tau_oracle = oracle_ipw(&data, &props).unwrap();
        let tau_at_star = ipw(&data, &fit_at(&spec.beta_star)).unwrap();
        prop_assert_eq!(tau_at_star, tau_oracle);
    }

    #[test]
    fn debiased_estimate_satisfies_its_defining_identity(
        seed in any::<u64>(),
        n in 30usize..80,
        d in 1usize..4,
    ) {
        let (_, data) = dataset(seed, n, d);
        let Ok(art) = debiased_ipw(&data) else { return Ok(()) };
        let rhs = art.tau_ipw - (art.biases.b1_hat - art.biases.b0_hat) / n as f64;
        let rel = (art.tau_debias - rhs).abs() / rhs.abs().max(1.0);
        prop_assert!(rel <= 1e-12, "relative identity error {rel}");
    }

    #[test]
    fn hajek_ignores_outcome_location_shifts(
        seed in any::<u64>(),
        n in 30usize..80,
        d in 1usize..4,
        shift in -10.0f64..10.0,
    ) {
        let (_, data) = dataset(seed, n, d);
        let Ok(fit) = fit_mle(&data) else { return Ok(()) };
        let Ok(tau) = hajek(&data, &fit) else { return Ok(()) };
        let shifted = Dataset::new(
            data.covariates().clone(),
            data.treatments().to_vec(),
            data.outcomes().iter().map(|y| y + shift).collect(),
        )
        .unwrap();
        let tau_shifted = hajek(&shifted, &fit).unwrap();
        prop_assert!(
            (tau_shifted - tau).abs() <= 1e-9,
            "shift {shift} moved the Hajek estimate by {}",
            (tau_shifted - tau).abs()
        );
    }

    #[test]
    fn estimators_are_permutation_invariant(
        seed in any::<u64>(),
        n in 30usize..70,
        d in 1usize..4,
        keys in prop::collection::vec(any::<u64>(), 8),
    ) {
        let (spec, data) = dataset(seed, n, d);
        let order = permutation_from_keys(&keys, n);
        let shuffled = permuted(&data, &order);

        let props: Vec<f64> = (0..n)
            .map(|i| true_propensity(&spec, data.covariate(i)).unwrap())
            .collect();
        let props_perm: Vec<f64> = order.iter().map(|&j| props[j]).collect();
        let a = oracle_ipw(&data, &props).unwrap();
        let b = oracle_ipw(&shuffled, &props_perm).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "oracle moved by {}", (a - b).abs());

        if let (Ok(art), Ok(art_perm)) = (debiased_ipw(&data), debiased_ipw(&shuffled)) {
            prop_assert!((art.tau_ipw - art_perm.tau_ipw).abs() <= 1e-9);
            prop_assert!((art.tau_debias - art_perm.tau_debias).abs() <= 1e-9);
        }
    }

    #[test]
    fn fitting_is_deterministic(
        seed in any::<u64>(),
        n in 30usize..80,
        d in 1usize..4,
    ) {
        let (_, data) = dataset(seed, n, d);
        let Ok(a) = fit_mle(&data) else { return Ok(()) };
        let b = fit_mle(&data).unwrap();
        prop_assert_eq!(a.beta_hat, b.beta_hat, "same data must give the same coefficients");
        prop_assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn dimension_grid_is_nondecreasing_and_positive(
        n in 2usize..5000,
        r in 1usize..20,
    ) {
        let grid = dimension_grid(n, r);
        prop_assert_eq!(grid.len(), r);
        prop_assert!(grid.iter().all(|&d| d >= 1));
        prop_assert!(grid.windows(2).all(|w| w[0] <= w[1]),
            "grid must be nondecreasing in q: {:?}", grid);
    }

    #[test]
    fn dataset_csv_round_trip_is_bit_exact(
        seed in any::<u64>(),
        n in 2usize..40,
        d in 1usize..5,
    ) {
        let (_, data) = dataset(seed, n, d);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.to_csv(&path).unwrap();
        let back = Dataset::<f64>::from_csv(&path).unwrap();
        prop_assert_eq!(back.treatments(), data.treatments());
        prop_assert_eq!(back.outcomes(), data.outcomes());
        for i in 0..n {
            prop_assert_eq!(back.covariate(i), data.covariate(i));
        }
    }

    #[test]
    fn confidence_interval_is_symmetric_and_scales(
        tau in -5.0f64..5.0,
        var in 0.0f64..20.0,
        n in 1usize..500,
    ) {
        let (lo, hi) = confidence_interval(tau, var, n);
        prop_assert!(lo <= tau && tau <= hi);
        let half = 1.96 * (var / n as f64).sqrt();
        prop_assert!(((hi - tau) - half).abs() <= 1e-12 * half.max(1.0));
        prop_assert!(((tau - lo) - half).abs() <= 1e-12 * half.max(1.0));
    }

    #[test]
    fn method_tokens_round_trip(idx in 0usize..5) {
        let method = Method::ALL[idx];
        let token = method.as_str();
        prop_assert_eq!(token.parse::<Method>().unwrap(), method);
    }

    #[test]
    fn seed_streams_and_trials_are_distinct(
        master in any::<u64>(),
        a in 0u64..1000,
        b in 0u64..1000,
    ) {
        prop_assume!(a != b);
        use ipw_core::Scalar;
        let base = SeedSpec::new(master, 0);
        let draw = |s: SeedSpec| f64::standard_normal(&mut s.rng());
        prop_assert_ne!(
            draw(base.stream(a)),
            draw(base.stream(b)),
            "streams {} and {} collide", a, b
        );
        prop_assert_ne!(
            draw(base.with_trial(a)),
            draw(base.with_trial(b)),
            "trials {} and {} collide", a, b
        );
    }
}
